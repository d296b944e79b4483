"""Cut registered slide pairs into patches and screen them."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import Her2Level, ManifestEntry, PatchManifest, SPLITS, pixels
from .registration import ncc, preprocess


@dataclass(frozen=True, eq=False)
class Patch:
    wsi_id: str
    origin: tuple[int, int]
    he: np.ndarray
    ihc: np.ndarray
    tissue_pass: bool = True
    tissue_fraction: float = 1.0
    alignment_pass: bool = True
    alignment_score: float = 1.0

    @property
    def patch_id(self) -> str:
        return f"{self.wsi_id}_{self.origin[0]}_{self.origin[1]}"


def patch_origins(width: int, height: int, size: int, stride: int) -> list[tuple[int, int]]:
    """Row-major ``(x, y)`` origins of every patch fully inside the image."""
    if size <= 0 or stride <= 0:
        raise ValueError("size and stride must be positive")
    if size > min(width, height):
        raise ValueError(f"patch size {size} exceeds image {width}x{height}")
    return [(x, y) for y in range(0, height - size + 1, stride) for x in range(0, width - size + 1, stride)]


def patchify(he, ihc, size: int = 1024, stride: int | None = None) -> list[tuple[np.ndarray, np.ndarray, tuple[int, int]]]:
    a, b = pixels(he), pixels(ihc)
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(f"dimension mismatch: {a.shape[:2]} vs {b.shape[:2]}")
    stride = size if stride is None else stride
    h, w = a.shape[:2]
    return [
        (a[y:y + size, x:x + size], b[y:y + size, x:x + size], (x, y))
        for x, y in patch_origins(w, h, size, stride)
    ]


def rgb_to_hsv_sv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """HSV saturation and value in [0, 1] for an 8-bit-scale RGB array."""
    rgb = np.asarray(rgb, dtype=np.float64) / 255.0
    mx = rgb.max(axis=2)
    mn = rgb.min(axis=2)
    sat = np.where(mx > 0, (mx - mn) / np.where(mx > 0, mx, 1.0), 0.0)
    return sat, mx


def tissue_filter(patch, sat_thresh: float = 0.07, frac_thresh: float = 0.5) -> tuple[bool, float]:
    """Stain-saturation tissue heuristic; returns ``(passed, tissue_fraction)``."""
    arr = pixels(patch)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("tissue_filter needs an RGB patch")
    sat, val = rgb_to_hsv_sv(arr)
    frac = float(np.mean((sat > sat_thresh) & (val < 0.95)))
    return frac >= frac_thresh, frac


def alignment_filter(patch_he, patch_ihc, ncc_thresh: float = 0.2) -> tuple[bool, float]:
    """NCC of preprocessed patches; constant patches score 0 and fail."""
    a, b = pixels(patch_he), pixels(patch_ihc)
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(f"dimension mismatch: {a.shape[:2]} vs {b.shape[:2]}")
    score = ncc(preprocess(a), preprocess(b))
    return score >= ncc_thresh, score


def screen(
    wsi_id: str,
    pairs: Sequence[tuple[np.ndarray, np.ndarray, tuple[int, int]]],
    sat_thresh: float = 0.07,
    frac_thresh: float = 0.5,
    ncc_thresh: float = 0.2,
    workers: int = 1,
) -> list[Patch]:
    """Run both filters on every pair; output order follows ``pairs``."""

    def one(pair):
        he, ihc, origin = pair
        t_ok, frac = tissue_filter(he, sat_thresh, frac_thresh)
        a_ok, score = alignment_filter(he, ihc, ncc_thresh)
        return Patch(wsi_id, origin, he, ihc, t_ok, frac, a_ok, score)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, pairs))
    return [one(p) for p in pairs]


def build_manifest(
    patches: Sequence[Patch],
    labels: Mapping[str, Her2Level | str],
    split_assign: Mapping[str, str],
    size: int,
    stride: int | None = None,
) -> PatchManifest:
    stride = size if stride is None else stride
    entries = []
    for p in patches:
        if p.wsi_id not in labels:
            raise ValueError(f"missing label for WSI {p.wsi_id!r}")
        if p.wsi_id not in split_assign:
            raise ValueError(f"missing split for WSI {p.wsi_id!r}")
        split = split_assign[p.wsi_id]
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        entries.append(
            ManifestEntry(
                patch_id=p.patch_id,
                wsi_id=p.wsi_id,
                origin=p.origin,
                size=size,
                her2=Her2Level.parse(labels[p.wsi_id]),
                split=split,
                tissue_pass=p.tissue_pass,
                alignment_pass=p.alignment_pass,
            )
        )
    return PatchManifest(entries, stride=stride, size=size)


def expected_patch_count(width: int, height: int, size: int, stride: int | None = None) -> int:
    stride = size if stride is None else stride
    if width < size or height < size:
        return 0
    return ((width - size) // stride + 1) * ((height - size) // stride + 1)
