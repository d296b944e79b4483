"""Image quality metrics: MSE, PSNR, SSIM (global and windowed), blur score.

All arithmetic is float64 on the 8-bit scale. PSNR works on raw channels;
SSIM and the blur score work on Rec. 601 luminance.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import FormatError, load_image, luminance, pixels

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SsimParams:
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 255.0
    window: int = 11
    sigma: float = 1.5
    # the product form sigma_x^2 * sigma_y^2 in the denominator, kept for audits
    printed_denominator: bool = False

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    def kernel(self) -> np.ndarray:
        """Normalized 1-D Gaussian taps; the 2-D window is its outer product."""
        r = self.window // 2
        x = np.arange(-r, r + 1, dtype=np.float64)
        g = np.exp(-(x**2) / (2.0 * self.sigma**2))
        return g / g.sum()


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(pixels(x), dtype=np.float64)
    b = np.asarray(pixels(y), dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if b.ndim == 3 and b.shape[2] == 1:
        b = b[:, :, 0]
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(x, y) -> float:
    a, b = _pair(x, y)
    d = a - b
    return float(np.mean(d * d))


def psnr(x, y) -> float:
    """Peak signal-to-noise ratio in dB against a 255 peak; +inf when identical."""
    err = mse(x, y)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / err)


def _ssim_formula(mx, my, vx, vy, cxy, p: SsimParams):
    num = (2 * mx * my + p.c1) * (2 * cxy + p.c2)
    if p.printed_denominator:
        den = (mx * mx + my * my + p.c1) * (vx * vy + p.c2)
    else:
        den = (mx * mx + my * my + p.c1) * (vx + vy + p.c2)
    return num / den


def _luma_pair(x, y):
    a, b = _pair(x, y)
    return luminance(a), luminance(b)


def ssim_global(x, y, p: SsimParams = SsimParams()) -> float:
    """One SSIM value from whole-image means, variances and covariance."""
    a, b = _luma_pair(x, y)
    mx, my = a.mean(), b.mean()
    da, db = a - mx, b - my
    vx, vy = np.mean(da * da), np.mean(db * db)
    cxy = np.mean(da * db)
    return float(_ssim_formula(mx, my, vx, vy, cxy, p))


def ssim_map(x, y, p: SsimParams = SsimParams()) -> np.ndarray:
    """Local SSIM at every valid (unpadded) Gaussian window position."""
    a, b = _luma_pair(x, y)
    if min(a.shape) < p.window:
        raise ValueError(f"image {a.shape} smaller than {p.window}x{p.window} window")
    k = p.kernel()
    r = p.window // 2

    def blur(img):
        out = ndimage.correlate1d(img, k, axis=0, mode="constant")
        out = ndimage.correlate1d(out, k, axis=1, mode="constant")
        return out[r:img.shape[0] - r, r:img.shape[1] - r]

    mx, my = blur(a), blur(b)
    vx = blur(a * a) - mx * mx
    vy = blur(b * b) - my * my
    cxy = blur(a * b) - mx * my
    return _ssim_formula(mx, my, vx, vy, cxy, p)


def ssim_windowed(x, y, p: SsimParams = SsimParams()) -> float:
    return float(np.mean(ssim_map(x, y, p)))


_LAPLACE = np.array([[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]])


def blur_score(img) -> float:
    """Variance of the 3x3 Laplacian response over the valid interior.

    Low values mean little high-frequency content. Images under 3x3 score 0.
    """
    y = luminance(img)
    if min(y.shape) < 3:
        return 0.0
    resp = (
        4.0 * y[1:-1, 1:-1] - y[:-2, 1:-1] - y[2:, 1:-1] - y[1:-1, :-2] - y[1:-1, 2:]
    )
    return float(resp.var())


# ---------------------------------------------------------------------------
# Directory evaluation
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    per_image: list[dict] = field(default_factory=list)
    flagged: list[dict] = field(default_factory=list)
    ssim_mode: str = "windowed"

    @property
    def aggregate(self) -> dict:
        finite = [r["psnr_db"] for r in self.per_image if math.isfinite(r["psnr_db"])]
        n = len(self.per_image)
        if finite:
            mean_psnr = math.fsum(finite) / len(finite)
        elif n:
            mean_psnr = math.inf
        else:
            mean_psnr = math.nan
        mean_ssim = math.fsum(r["ssim"] for r in self.per_image) / n if n else math.nan
        return {
            "count": n,
            "inf_psnr_count": n - len(finite),
            "mean_psnr_db": mean_psnr,
            "mean_ssim": mean_ssim,
            "flagged_count": len(self.flagged),
        }

    def to_json(self) -> dict:
        return {
            "aggregate": self.aggregate,
            "flagged": self.flagged,
            "per_image": self.per_image,
            "ssim": self.ssim_mode,
        }


def _score_one(pred: Path, gt: Path, ssim_mode: str, p: SsimParams):
    try:
        x = load_image(pred)
        y = load_image(gt)
    except (OSError, FormatError) as exc:
        return None, str(exc)
    if x.data.shape != y.data.shape:
        return None, f"dimension mismatch: {x.data.shape} vs {y.data.shape}"
    ssim_fn = ssim_windowed if ssim_mode == "windowed" else ssim_global
    try:
        return {"psnr_db": psnr(x, y), "ssim": ssim_fn(x, y, p)}, None
    except ValueError as exc:
        return None, str(exc)


def evaluate_set(
    pred_dir,
    gt_dir,
    ssim_mode: str = "windowed",
    params: SsimParams = SsimParams(),
    workers: int = 1,
) -> MetricReport:
    """Score every prediction against the same-named ground-truth file.

    Problem items are flagged and skipped; the run always completes.
    """
    if ssim_mode not in ("windowed", "global"):
        raise ValueError(f"unknown ssim mode {ssim_mode!r}")
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds = sorted(f for f in pred_dir.iterdir() if f.is_file() and f.suffix.lower() in (".png", ".trc"))
    report = MetricReport(ssim_mode=ssim_mode)
    jobs = []
    for f in preds:
        gt = gt_dir / f.name
        if not gt.is_file():
            report.flagged.append({"id": f.stem, "reason": "unmatched: no ground truth"})
            continue
        jobs.append((f, gt))

    def run(job):
        return _score_one(job[0], job[1], ssim_mode, params)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    for (f, _), (scores, err) in zip(jobs, results):
        if err is not None:
            report.flagged.append({"id": f.stem, "reason": err})
        else:
            report.per_image.append({"id": f.stem, **scores})
    report.flagged.sort(key=lambda r: r["id"])
    log.info("scored %d images, flagged %d", len(report.per_image), len(report.flagged))
    return report
