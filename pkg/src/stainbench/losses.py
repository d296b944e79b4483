"""Forward-only reference values for the challenge entrants' training losses.

Every function maps plain arrays to a float. Nothing here models a network;
discriminator outputs, embeddings and logits are supplied by the caller.
Log arguments are clamped at ``EPS``; when a clamp changes a value a
:class:`ClampWarning` is emitted so callers can flag the result.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import luminance, pixels
from .metrics import SsimParams, ssim_windowed

EPS = 1e-12


class ClampWarning(RuntimeWarning):
    """A probability hit the log clamp."""


def _clamped_log(p: float, what: str) -> float:
    if p < EPS:
        warnings.warn(f"{what}={p!r} clamped to {EPS}", ClampWarning, stacklevel=3)
        p = EPS
    return math.log(p)


def _vec(x, what: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError(f"{what} is empty")
    if not np.isfinite(v).all():
        raise ValueError(f"non-finite entry in {what}")
    return v


# ---------------------------------------------------------------------------
# HER2 level losses
# ---------------------------------------------------------------------------


@dataclass
class FocalParams:
    alpha: Sequence[float] = (1.0, 1.0, 1.0, 1.0)
    gamma: float = 2.0

    def __post_init__(self):
        self.alpha = tuple(float(a) for a in self.alpha)
        if len(self.alpha) < 2:
            raise ValueError("focal loss needs at least two classes")
        if any(a < 0 for a in self.alpha):
            raise ValueError("alpha entries must be non-negative")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


def softmax_probs(logits) -> np.ndarray:
    z = _vec(logits, "logits")
    if z.size < 2:
        raise ValueError("softmax needs at least two logits")
    e = np.exp(z - z.max())
    return e / e.sum()


def focal_loss(logits, y: int, p: FocalParams = FocalParams()) -> float:
    """Class-averaged focal loss.

    Every class contributes: the target class through ``p_y`` and every other
    class ``n`` through ``1 - p_n``. ``y`` is a 1-based class index, so the
    four HER2 levels 0, 1+, 2+, 3+ are classes 1 to 4.
    """
    z = _vec(logits, "logits")
    n = z.size
    if n < 2:
        raise ValueError("focal loss needs at least two logits")
    if len(p.alpha) != n:
        raise ValueError(f"alpha length {len(p.alpha)} != number of classes {n}")
    if not 1 <= y <= n:
        raise ValueError(f"class index {y} outside [1, {n}]")
    e = np.exp(z - z.max())
    tot = e.sum()
    # 1 - p_n summed from the other classes; subtracting from 1 cancels badly
    rest = (e[None, :] * (1.0 - np.eye(n))).sum(axis=1)
    pt = rest / tot
    pt[y - 1] = e[y - 1] / tot
    alpha = np.asarray(p.alpha)
    terms = -alpha * (1.0 - pt) ** p.gamma * np.log(np.maximum(pt, EPS))
    return float(terms.mean())


def cosine_sim_loss(a, b) -> float:
    """``1 - cos(a, b)``, in [0, 2]."""
    u, v = _vec(a, "a"), _vec(b, "b")
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.size} vs {v.size}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("zero vector has no direction")
    cos = float(np.clip(u @ v / (nu * nv), -1.0, 1.0))
    return 1.0 - cos


# ---------------------------------------------------------------------------
# Content losses
# ---------------------------------------------------------------------------


def _mean_abs(x, y, what: str) -> float:
    a = np.asarray(pixels(x), dtype=np.float64)
    b = np.asarray(pixels(y), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{what}: dimension mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def mae_content(pred_full, gt_full, pred_low, gt_low) -> float:
    """Mean absolute error at full resolution plus at the low-resolution head."""
    return _mean_abs(pred_full, gt_full, "full") + _mean_abs(pred_low, gt_low, "low")


def ssim_loss(pred, gt, params: SsimParams = SsimParams()) -> float:
    return 1.0 - ssim_windowed(pred, gt, params)


def cycle_l1(original, reconstructed) -> float:
    return _mean_abs(original, reconstructed, "cycle")


# ---------------------------------------------------------------------------
# Adversarial losses
# ---------------------------------------------------------------------------

_SCALE_ALIASES = {"full": "full", "1024": "full", "half": "half", "512": "half"}


def _scales(maps: Mapping) -> dict[str, np.ndarray]:
    out = {}
    for k, v in maps.items():
        key = _SCALE_ALIASES.get(str(k))
        if key is None or key in out:
            raise ValueError(f"scale set must be exactly {{full, half}}, got {sorted(map(str, maps))}")
        out[key] = np.asarray(v, dtype=np.float64)
    if set(out) != {"full", "half"}:
        raise ValueError(f"scale set must be exactly {{full, half}}, got {sorted(map(str, maps))}")
    return out


def patchgan_ms_loss(d_real_maps: Mapping | None, d_fake_maps: Mapping, side: str = "generator") -> float:
    """Least-squares PatchGAN objective averaged over the full and half scales.

    Generator: ``mean((D(fake) - 1)^2)``. Discriminator:
    ``0.5 * [mean((D(real) - 1)^2) + mean(D(fake)^2)]``.
    """
    fake = _scales(d_fake_maps)
    if side == "generator":
        per_scale = [np.mean((fake[s] - 1.0) ** 2) for s in ("full", "half")]
    elif side == "discriminator":
        if d_real_maps is None:
            raise ValueError("discriminator side needs real score maps")
        real = _scales(d_real_maps)
        for s in ("full", "half"):
            if real[s].shape != fake[s].shape:
                raise ValueError(f"{s}-scale real/fake maps differ in shape")
        per_scale = [
            0.5 * (np.mean((real[s] - 1.0) ** 2) + np.mean(fake[s] ** 2)) for s in ("full", "half")
        ]
    else:
        raise ValueError(f"side must be 'generator' or 'discriminator', got {side!r}")
    return float(0.5 * (per_scale[0] + per_scale[1]))


def style_adversarial_loss(d_probs_real, real_style: int, d_probs_fake, fake_index: int) -> float:
    """Style-classifying discriminator cross-entropy over ``N + 1`` classes.

    ``-ln D(real)[real_style] - ln D(fake)[fake_index]``; the same call covers
    both translation directions.
    """
    pr = _vec(d_probs_real, "d_probs_real")
    pf = _vec(d_probs_fake, "d_probs_fake")
    if pr.size != pf.size:
        raise ValueError("real and fake probability vectors differ in length")
    for name, idx in (("real_style", real_style), ("fake_index", fake_index)):
        if not 0 <= idx < pr.size:
            raise ValueError(f"{name} {idx} outside [0, {pr.size})")
    if (pr < 0).any() or (pf < 0).any() or (pr > 1).any() or (pf > 1).any():
        raise ValueError("probabilities must lie in [0, 1]")
    return -(_clamped_log(pr[real_style], "d_probs_real") + _clamped_log(pf[fake_index], "d_probs_fake"))


def pix2pix_gen_loss(d_fake: float, pred, gt, lam: float = 100.0) -> float:
    """BCE on the discriminator's fake score plus ``lam`` times mean L1."""
    if not 0.0 <= d_fake <= 1.0:
        raise ValueError("d_fake must be a probability")
    return -_clamped_log(d_fake, "d_fake") + lam * _mean_abs(gt, pred, "pix2pix")


def pix2pix_dis_loss(d_real: float, d_fake: float, lam: float = 1.0) -> float:
    """``-ln D(real) + lam * -ln(1 - D(fake))`` with the weight on the fake term."""
    for name, v in (("d_real", d_real), ("d_fake", d_fake)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be a probability")
    return -_clamped_log(d_real, "d_real") - lam * _clamped_log(1.0 - d_fake, "1-d_fake")


# ---------------------------------------------------------------------------
# Contrastive losses
# ---------------------------------------------------------------------------


def nce_from_logits(pos: float, negs) -> float:
    """``-log softmax`` of the positive logit against the negatives."""
    z = np.concatenate([[pos], np.asarray(negs, dtype=np.float64).ravel()])
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()) - pos)


def _unit(v, what: str) -> np.ndarray:
    v = _vec(v, what)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError(f"{what} is a zero vector")
    return v / n


def infonce_loss(query, positive, negatives, tau: float = 0.07) -> float:
    """InfoNCE on L2-normalized embeddings with temperature ``tau``.

    Serves both the unpaired (negatives from the input image) and paired
    (positive and negatives from the target image) variants.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    negatives = list(negatives)
    if not negatives:
        raise ValueError("need at least one negative")
    q = _unit(query, "query")
    kp = _unit(positive, "positive")
    kn = np.stack([_unit(k, f"negative[{i}]") for i, k in enumerate(negatives)])
    if kp.shape != q.shape or kn.shape[1] != q.size:
        raise ValueError("embedding length mismatch")
    return nce_from_logits(float(q @ kp) / tau, kn @ q / tau)


# ---------------------------------------------------------------------------
# Sampling rule for weakly paired style transfer
# ---------------------------------------------------------------------------


def pearson(a, b) -> float:
    """Pearson correlation; defined as 0 when either side is constant."""
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(np.mean(dx * dx)), np.sqrt(np.mean(dy * dy))
    if sx == 0 or sy == 0:
        return 0.0
    return float(np.clip(np.mean(dx * dy) / (sx * sy), -1.0, 1.0))


def normalized_histogram(img, bins: int = 256) -> np.ndarray:
    """L1-normalized luminance histogram over [0, 256)."""
    y = np.clip(np.floor(luminance(img) + 0.5), 0, 255)
    h = np.bincount(y.astype(np.int64).ravel(), minlength=bins)[:bins].astype(np.float64)
    return h / h.sum()


def wecrest_qi(source, target, histograms: Sequence, i: int) -> float:
    """Sampling weight of pair ``i``: (1 + corr(S_i, T_i)) / sqrt(sum_j H_i . H_j)."""
    s, t = luminance(source), luminance(target)
    if s.shape != t.shape:
        raise ValueError(f"dimension mismatch: {s.shape} vs {t.shape}")
    hist = [np.asarray(h, dtype=np.float64).ravel() for h in histograms]
    if not hist:
        raise ValueError("empty histogram set")
    if not 0 <= i < len(hist):
        raise ValueError(f"histogram index {i} outside [0, {len(hist)})")
    hi = hist[i]
    denom = math.sqrt(math.fsum(float(hi @ hj) for hj in hist))
    if denom == 0:
        raise ValueError("histograms are mutually orthogonal to entry i")
    return (1.0 + pearson(s, t)) / denom


# ---------------------------------------------------------------------------
# Weighted combination
# ---------------------------------------------------------------------------

PRESETS: dict[str, dict[str, float]] = {
    # level/content/adversarial terms; entrants did not publish their weights
    "bcistainer": {"gfocal": 1.0, "csim": 1.0, "mae": 1.0, "ssim": 1.0, "gan": 1.0},
    "pnce": {"gan": 1.0, "nce": 10.0, "pnce": 10.0, "dis-cls": 2.0, "multi-scale": 20.0},
    "wecrest-generator": {"adv": 1.0, "class": 1.0, "cam": 1.0, "cycle": 1.0},
    "wecrest-discriminator": {"adv": 1.0, "class": 1.0, "cam": 1.0},
}


@dataclass
class LossWeights:
    weights: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.weights = {str(k): float(v) for k, v in self.weights.items()}
        bad = [k for k, v in self.weights.items() if not math.isfinite(v)]
        if bad:
            raise ValueError(f"non-finite weight for {bad[0]!r}")

    @classmethod
    def preset(cls, name: str) -> "LossWeights":
        try:
            return cls(dict(PRESETS[name]))
        except KeyError:
            raise ValueError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}") from None

    def get(self, name: str) -> float:
        return self.weights.get(name, 1.0)


def combine_weighted(terms: Mapping[str, float], w: LossWeights | str | None = None) -> float:
    """Sum of ``weight * term``; unnamed terms weigh 1."""
    if isinstance(w, str):
        w = LossWeights.preset(w)
    w = w or LossWeights()
    return math.fsum(w.get(k) * float(v) for k, v in terms.items())


# ---------------------------------------------------------------------------
# Haar wavelet
# ---------------------------------------------------------------------------


def _haar_plane(x: np.ndarray) -> np.ndarray:
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    ll = (a + b + c + d) / 2.0
    lh = (a + b - c - d) / 2.0
    hl = (a - b + c - d) / 2.0
    hh = (a - b - c + d) / 2.0
    return np.stack([ll, lh, hl, hh], axis=-1)


def _ihaar_plane(q: np.ndarray) -> np.ndarray:
    ll, lh, hl, hh = (q[..., k] for k in range(4))
    h, w = ll.shape
    out = np.empty((2 * h, 2 * w))
    out[0::2, 0::2] = (ll + lh + hl + hh) / 2.0
    out[0::2, 1::2] = (ll + lh - hl - hh) / 2.0
    out[1::2, 0::2] = (ll - lh + hl - hh) / 2.0
    out[1::2, 1::2] = (ll - lh - hl + hh) / 2.0
    return out


def dwt_haar(img, per_channel: bool = False) -> np.ndarray:
    """Single-level orthonormal 2-D Haar transform.

    Returns ``(H/2, W/2, 4)`` planes ordered LL, LH, HL, HH computed on
    luminance, or ``(H/2, W/2, 4*C)`` with ``per_channel=True``.
    """
    arr = np.asarray(pixels(img), dtype=np.float64)
    if arr.shape[0] % 2 or arr.shape[1] % 2:
        raise ValueError(f"odd dimension {arr.shape[:2]}: Haar DWT needs even width and height")
    if per_channel:
        chans = [arr] if arr.ndim == 2 else [arr[:, :, k] for k in range(arr.shape[2])]
        return np.concatenate([_haar_plane(c) for c in chans], axis=-1)
    return _haar_plane(luminance(arr))


def idwt_haar(planes) -> np.ndarray:
    """Inverse of :func:`dwt_haar`; returns ``(H, W)`` or ``(H, W, C)``."""
    q = np.asarray(planes, dtype=np.float64)
    if q.ndim != 3 or q.shape[2] % 4:
        raise ValueError(f"expected (h, w, 4k) coefficient planes, got {q.shape}")
    chans = [_ihaar_plane(q[:, :, 4 * k:4 * k + 4]) for k in range(q.shape[2] // 4)]
    return chans[0] if len(chans) == 1 else np.stack(chans, axis=-1)
