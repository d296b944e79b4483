#!/usr/bin/env python3
"""Calibrate the submission blur threshold on synthetic patches.

Sharp patches are rendered at full resolution. Blurred patches are rendered
at a quarter of the resolution and upsampled back (bilinear), which mimics
an under-resolved generator output. The threshold sits at the geometric mean
of the sharp set's low tail and the blurred set's high tail.

    python scripts/calibrate_blur.py --n 40 --size 512
"""

from __future__ import annotations

import argparse
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from stainbench.core import Xoshiro256
from stainbench.metrics import blur_score
from stainbench.synthetic import colorize, structure_map


@dataclass
class CalibrationConfig:
    n: int = 40
    size: int = 512
    factor: int = 4
    seed: int = 1234
    sharp_pct: float = 5.0
    blurred_pct: float = 95.0


def render(size: int, seed: int, stain: str) -> np.ndarray:
    return colorize(structure_map((size, size), Xoshiro256(seed)), stain)


def upsampled(img: np.ndarray, factor: int) -> np.ndarray:
    small = img[::factor, ::factor].astype(np.float64)
    big = ndimage.zoom(small, (factor, factor, 1), order=1, mode="nearest", grid_mode=True)
    return np.clip(np.rint(big), 0, 255).astype(np.uint8)


def calibrate(cfg: CalibrationConfig) -> dict:
    sharp, blurred = [], []
    for i in range(cfg.n):
        stain = "ihc" if i % 2 else "he"
        img = render(cfg.size, cfg.seed + i, stain)
        sharp.append(blur_score(img))
        blurred.append(blur_score(upsampled(img, cfg.factor)))
    lo = float(np.percentile(sharp, cfg.sharp_pct))
    hi = float(np.percentile(blurred, cfg.blurred_pct))
    return {
        "config": asdict(cfg),
        "sharp": {"min": min(sharp), "p": lo, "median": float(np.median(sharp))},
        "blurred": {"max": max(blurred), "p": hi, "median": float(np.median(blurred))},
        "separable": lo > hi,
        "threshold": math.sqrt(lo * hi) if lo > 0 and hi > 0 else (lo + hi) / 2,
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    for name, default in asdict(CalibrationConfig()).items():
        ap.add_argument(f"--{name.replace('_', '-')}", dest=name, type=type(default), default=default)
    args = ap.parse_args(argv)
    result = calibrate(CalibrationConfig(**vars(args)))
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0 if result["separable"] else 1


if __name__ == "__main__":
    raise SystemExit(main())
