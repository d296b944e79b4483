"""Two-stage H&E -> IHC slide alignment.

Stage one fits a projective transform to hand-picked correspondences.
Stage two splits the slide into a 4x4 tile grid and refines each tile with
a cubic B-spline free-form deformation that maximizes normalized
cross-correlation over a coarse-to-fine pyramid. The stitched result has
its black fill borders inpainted from neighboring tissue.

Coordinates are ``(x, y)`` = (column, row) throughout; arrays are indexed
``[row, col]``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .core import ImageBuffer, LandmarkSet, luminance, pixels, rng_new, to_uint8

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Projective stage
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Homography:
    """3x3 projective map from moving to fixed pixel coordinates, h[2,2] = 1."""

    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=np.float64).reshape(3, 3)
        if not np.isfinite(h).all() or abs(h[2, 2]) < 1e-300:
            raise ValueError("degenerate homography")
        h = h / h[2, 2]
        if abs(np.linalg.det(h)) <= 1e-12:
            raise ValueError("non-invertible homography")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        flat = pts.reshape(-1, 2)
        q = flat @ self.h[:, :2].T + self.h[:, 2]
        return (q[:, :2] / q[:, 2:3]).reshape(pts.shape)

    def to_json(self) -> list:
        return self.h.tolist()


def _normalizing_transform(pts: np.ndarray) -> np.ndarray:
    """Similarity taking ``pts`` to zero mean and mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    mean_dist = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    if mean_dist <= 0:
        raise ValueError("degenerate configuration: coincident points")
    s = np.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def estimate_homography(lm: LandmarkSet) -> Homography:
    """Normalized DLT fit of moving -> fixed correspondences.

    With more than four pairs the result minimizes the algebraic error in
    the normalized frame (smallest right singular vector).
    """
    if len(lm) < 4:
        raise ValueError(f"insufficient correspondences: need at least 4, got {len(lm)}")
    src, dst = lm.moving, lm.fixed
    if len(lm) == 4:
        for pts in (src, dst):
            for skip in range(4):
                a, b, c = np.delete(pts, skip, axis=0)
                area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
                scale = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-300) ** 2
                if abs(area) <= 1e-12 * scale:
                    raise ValueError("degenerate configuration: three collinear points")
    t_src = _normalizing_transform(src)
    t_dst = _normalizing_transform(dst)
    s = src @ t_src[:2, :2].T + t_src[:2, 2]
    d = dst @ t_dst[:2, :2].T + t_dst[:2, 2]
    n = len(s)
    a = np.zeros((2 * n, 9))
    x, y = s[:, 0], s[:, 1]
    u, v = d[:, 0], d[:, 1]
    one = np.ones(n)
    a[0::2, 0:3] = np.column_stack([x, y, one])
    a[0::2, 6:9] = -u[:, None] * np.column_stack([x, y, one])
    a[1::2, 3:6] = np.column_stack([x, y, one])
    a[1::2, 6:9] = -v[:, None] * np.column_stack([x, y, one])
    _, sv, vt = np.linalg.svd(a)
    # 8 unknowns: rank must be 8 for a unique solution
    if len(sv) < 8 or sv[7] <= 1e-10 * sv[0]:
        raise ValueError("degenerate configuration: rank-deficient system")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ hn @ t_src
    if abs(h[2, 2]) < 1e-14:
        raise ValueError("degenerate configuration: point at infinity")
    return Homography(h)


def _as_hwc_float(img) -> tuple[np.ndarray, bool]:
    arr = pixels(img)
    is_u8 = arr.dtype == np.uint8
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr, is_u8


def _wrap_like(img, out: np.ndarray, is_u8: bool):
    """Return ``out`` in the same container/dtype family as ``img``."""
    if is_u8:
        out = to_uint8(out)
    if isinstance(img, ImageBuffer):
        return ImageBuffer(out if is_u8 else out / 255.0, img.colorspace)
    src = np.asarray(img)
    return out[:, :, 0] if src.ndim == 2 else out


def _sample_fill(arr: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear sample of ``(H, W, C)`` at float coords; outside -> 0."""
    h, w = arr.shape[:2]
    eps = 1e-6
    inside = (x >= -eps) & (x <= w - 1 + eps) & (y >= -eps) & (y <= h - 1 + eps)
    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    tx = (xc - x0)[..., None]
    ty = (yc - y0)[..., None]
    top = arr[y0, x0] * (1 - tx) + arr[y0, x1] * tx
    bot = arr[y1, x0] * (1 - tx) + arr[y1, x1] * tx
    out = top * (1 - ty) + bot * ty
    out[~inside] = 0.0
    return out


def warp_projective(img, H: Homography, out_size: tuple[int, int]):
    """Inverse-map ``img`` through ``H`` onto a ``(width, height)`` canvas.

    Output pixels whose preimage falls outside the source are exactly 0.
    """
    arr, is_u8 = _as_hwc_float(img)
    w, h = out_size
    hinv = H.inverse().h
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    den = hinv[2, 0] * xs + hinv[2, 1] * ys + hinv[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (hinv[0, 0] * xs + hinv[0, 1] * ys + hinv[0, 2]) / den
        sy = (hinv[1, 0] * xs + hinv[1, 1] * ys + hinv[1, 2]) / den
    bad = ~np.isfinite(sx) | ~np.isfinite(sy) | (den <= 0)
    sx[bad] = -1e9
    sy[bad] = -1e9
    return _wrap_like(img, _sample_fill(arr, sx, sy), is_u8)


# ---------------------------------------------------------------------------
# B-spline free-form deformation
# ---------------------------------------------------------------------------


def _bspline_weights(t: np.ndarray) -> np.ndarray:
    t2 = t * t
    t3 = t2 * t
    return np.stack(
        [
            (1 - t) ** 3 / 6.0,
            (3 * t3 - 6 * t2 + 4) / 6.0,
            (-3 * t3 + 3 * t2 + 3 * t + 1) / 6.0,
            t3 / 6.0,
        ],
        axis=-1,
    )


def bspline_basis(positions: np.ndarray, spacing: float, n_ctrl: int) -> np.ndarray:
    """Dense ``(len(positions), n_ctrl)`` cubic B-spline evaluation matrix.

    Control point ``k`` sits at ``(k - 1) * spacing``.
    """
    u = np.asarray(positions, dtype=np.float64) / spacing
    i = np.clip(np.floor(u).astype(np.intp), 0, n_ctrl - 4)
    w = _bspline_weights(u - i)
    basis = np.zeros((len(u), n_ctrl))
    rows = np.arange(len(u))
    for k in range(4):
        basis[rows, i + k] = w[:, k]
    return basis


@dataclass(frozen=True, eq=False)
class DeformationGrid:
    """Backward displacement lattice: output pixel p samples input at p + u(p).

    ``disp`` has shape ``(ny, nx, 2)`` holding ``(dx, dy)`` per control point.
    """

    spacing: float
    domain: tuple[int, int]
    disp: np.ndarray

    def __post_init__(self):
        nx, ny = self.shape_for(self.domain, self.spacing)
        disp = np.array(self.disp, dtype=np.float64)
        if disp.shape != (ny, nx, 2):
            raise ValueError(f"disp shape {disp.shape} != {(ny, nx, 2)} for domain {self.domain}")
        disp.setflags(write=False)
        object.__setattr__(self, "disp", disp)
        object.__setattr__(self, "domain", (int(self.domain[0]), int(self.domain[1])))

    @staticmethod
    def shape_for(domain: tuple[int, int], spacing: float) -> tuple[int, int]:
        w, h = domain
        return int(np.ceil(w / spacing)) + 3, int(np.ceil(h / spacing)) + 3

    @classmethod
    def zeros(cls, domain: tuple[int, int], spacing: float = 64) -> "DeformationGrid":
        nx, ny = cls.shape_for(domain, spacing)
        return cls(spacing, domain, np.zeros((ny, nx, 2)))

    @property
    def nx(self) -> int:
        return self.disp.shape[1]

    @property
    def ny(self) -> int:
        return self.disp.shape[0]

    def bases(self, scale: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Row/column bases for a pyramid level downsampled by ``scale``."""
        w, h = self.domain
        wc, hc = w // scale, h // scale
        off = (scale - 1) / 2.0
        bx = bspline_basis(np.arange(wc) * scale + off, self.spacing, self.nx)
        by = bspline_basis(np.arange(hc) * scale + off, self.spacing, self.ny)
        return bx, by

    def dense(self) -> np.ndarray:
        """Displacement field ``(H, W, 2)`` in pixels."""
        bx, by = self.bases()
        return np.stack([by @ self.disp[:, :, c] @ bx.T for c in range(2)], axis=-1)

    def at(self, pts) -> np.ndarray:
        """Displacement at arbitrary ``(x, y)`` points."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        out = np.empty_like(pts)
        chunk = 1 << 16
        for i in range(0, len(pts), chunk):
            bx = bspline_basis(pts[i:i + chunk, 0], self.spacing, self.nx)
            by = bspline_basis(pts[i:i + chunk, 1], self.spacing, self.ny)
            for c in range(2):
                out[i:i + chunk, c] = np.einsum("pj,ji,pi->p", by, self.disp[:, :, c], bx)
        return out


def apply_deformation(img, g: DeformationGrid):
    arr, is_u8 = _as_hwc_float(img)
    if (arr.shape[1], arr.shape[0]) != g.domain:
        raise ValueError(f"dimension mismatch: image {(arr.shape[1], arr.shape[0])} vs grid {g.domain}")
    field_ = g.dense()
    ys, xs = np.mgrid[0:arr.shape[0], 0:arr.shape[1]].astype(np.float64)
    out = _sample_fill(arr, xs + field_[..., 0], ys + field_[..., 1])
    return _wrap_like(img, out, is_u8)


def preprocess(img, sigma: float = 2.0) -> np.ndarray:
    """Inverted, Gaussian-smoothed luminance used by every NCC comparison."""
    return ndimage.gaussian_filter(255.0 - luminance(img), sigma, mode="nearest")


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized cross-correlation; 0 when either input is constant."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    if na <= 1e-12 * max(1.0, a.size) or nb <= 1e-12 * max(1.0, b.size):
        return 0.0
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def _downsample(arr: np.ndarray, factor: int) -> np.ndarray:
    while factor > 1:
        h, w = arr.shape[0] // 2 * 2, arr.shape[1] // 2 * 2
        a = arr[:h, :w]
        arr = 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])
        factor //= 2
    return arr


def _sample_grad(img: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Edge-clamped bilinear sample plus its analytic spatial derivatives."""
    h, w = img.shape
    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(np.intp), w - 2)
    y0 = np.minimum(np.floor(yc).astype(np.intp), h - 2)
    tx = xc - x0
    ty = yc - y0
    i00 = img[y0, x0]
    i10 = img[y0, x0 + 1]
    i01 = img[y0 + 1, x0]
    i11 = img[y0 + 1, x0 + 1]
    top = i00 + tx * (i10 - i00)
    bot = i01 + tx * (i11 - i01)
    val = top + ty * (bot - top)
    gx = (i10 - i00) + ty * ((i11 - i01) - (i10 - i00))
    gy = bot - top
    gx[(x < 0) | (x > w - 1)] = 0.0
    gy[(y < 0) | (y > h - 1)] = 0.0
    return val, gx, gy


def _neg_ncc_and_grad(warped: np.ndarray, fixed_c: np.ndarray, fixed_norm: float):
    a = warped - warped.mean()
    na = np.sqrt(np.sum(a * a))
    if na <= 1e-12:
        return 0.0, np.zeros_like(warped)
    c = float(np.sum(a * fixed_c) / (na * fixed_norm))
    d = fixed_c / (na * fixed_norm) - c * a / (na * na)
    return -c, -d


@dataclass
class DeformableConfig:
    spacing: float = 64.0
    pyramid_levels: int = 3
    iterations: int = 200
    step: float = 0.5
    min_step: float = 1e-3
    step_growth: float = 1.2
    sigma: float = 2.0
    tol: float = 1e-7
    seed: int = 0


def register_deformable(
    moving,
    fixed,
    cfg: DeformableConfig | None = None,
    callback: Callable[[int, int, float], None] | None = None,
    **overrides,
) -> DeformationGrid:
    """Fit a B-spline grid so ``moving`` warped by it matches ``fixed``.

    Plain gradient descent on -NCC of the preprocessed images. Each step moves
    the largest control point by ``step`` pixels of the current level; a
    step that raises the objective is rejected and the step halved, so the
    accepted objective sequence is non-increasing. ``callback(level, it,
    objective)`` fires after the initial evaluation and every accepted step.

    The optimizer is deterministic; ``cfg.seed`` is reserved for sampling
    strategies and currently only recorded.
    """
    cfg = cfg or DeformableConfig()
    if overrides:
        cfg = DeformableConfig(**{**cfg.__dict__, **overrides})
    mv = pixels(moving)
    fx = pixels(fixed)
    if mv.shape[:2] != fx.shape[:2]:
        raise ValueError(f"dimension mismatch: moving {mv.shape[:2]} vs fixed {fx.shape[:2]}")
    h, w = fx.shape[:2]
    pm = preprocess(moving, cfg.sigma)
    pf = preprocess(fixed, cfg.sigma)
    if pf.std() <= 1e-9:
        raise ValueError("zero variance fixed image: NCC undefined")

    grid = DeformationGrid.zeros((w, h), cfg.spacing)
    disp = np.zeros_like(grid.disp)
    levels = max(1, int(cfg.pyramid_levels))
    while levels > 1 and min(w, h) // 2 ** (levels - 1) < 8:
        levels -= 1

    for level in reversed(range(levels)):
        f = 2**level
        mov_l = _downsample(pm, f)
        fix_l = _downsample(pf, f)
        hl, wl = fix_l.shape
        fix_c = fix_l - fix_l.mean()
        fix_norm = np.sqrt(np.sum(fix_c * fix_c))
        if fix_norm <= 1e-12:
            continue
        bx, by = grid.bases(f)
        bx, by = bx[:wl], by[:hl]
        ys, xs = np.mgrid[0:hl, 0:wl].astype(np.float64)

        def evaluate(d):
            ux = by @ d[:, :, 0] @ bx.T / f
            uy = by @ d[:, :, 1] @ bx.T / f
            val, gx, gy = _sample_grad(mov_l, xs + ux, ys + uy)
            e, de = _neg_ncc_and_grad(val, fix_c, fix_norm)
            gdx = by.T @ (de * gx) @ bx / f
            gdy = by.T @ (de * gy) @ bx / f
            return e, np.stack([gdx, gdy], axis=-1)

        energy, grad = evaluate(disp)
        if callback:
            callback(level, 0, energy)
        step = cfg.step
        for it in range(1, cfg.iterations + 1):
            gmax = np.sqrt((grad**2).sum(axis=-1)).max()
            if gmax <= 0:
                break
            while step >= cfg.min_step:
                trial = disp - (step * f / gmax) * grad
                e_new, g_new = evaluate(trial)
                if e_new <= energy:
                    break
                step *= 0.5
            else:
                break
            improvement = energy - e_new
            disp, energy, grad = trial, e_new, g_new
            if callback:
                callback(level, it, energy)
            step *= cfg.step_growth
            if improvement < cfg.tol:
                break
        log.debug("level %d: -ncc %.6f", level, energy)

    return DeformationGrid(cfg.spacing, (w, h), disp)


# ---------------------------------------------------------------------------
# Border refinement
# ---------------------------------------------------------------------------

_FOUR = ndimage.generate_binary_structure(2, 1)


def border_black_mask(img) -> np.ndarray:
    """Exactly-black pixels 4-connected to the image edge."""
    arr, _ = _as_hwc_float(img)
    black = (arr == 0).all(axis=2)
    labels, _ = ndimage.label(black, structure=_FOUR)
    edge = np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
    touching = np.unique(edge[edge > 0])
    return np.isin(labels, touching) & black


def refine_borders(img):
    """Fill border-connected black with the mean of valid 8-neighbors, pass by pass."""
    arr, is_u8 = _as_hwc_float(img)
    if not (arr > 0).any():
        raise ValueError("entirely black image")
    mask = border_black_mask(img)
    if not mask.any():
        return img
    out = arr.copy()
    h, w, c = out.shape
    ys, xs = np.nonzero(mask)
    # work only inside the mask's bounding box plus a 1-px halo
    y0, y1 = max(ys.min() - 1, 0), min(ys.max() + 2, h)
    x0, x1 = max(xs.min() - 1, 0), min(xs.max() + 2, w)
    sub = out[y0:y1, x0:x1]
    m = mask[y0:y1, x0:x1].copy()
    floor_val = 1.0 if is_u8 else 1.0 / 255.0
    while m.any():
        valid = (~m).astype(np.float64)
        vals = sub * valid[:, :, None]
        pv = np.pad(vals, ((1, 1), (1, 1), (0, 0)))
        pc = np.pad(valid, 1)
        total = np.zeros_like(sub)
        count = np.zeros(valid.shape)
        for dy in (0, 1, 2):
            for dx in (0, 1, 2):
                if dy == 1 and dx == 1:
                    continue
                total += pv[dy:dy + sub.shape[0], dx:dx + sub.shape[1]]
                count += pc[dy:dy + sub.shape[0], dx:dx + sub.shape[1]]
        frontier = m & (count > 0)
        fill = total[frontier] / count[frontier][:, None]
        if is_u8:
            fill = np.floor(fill + 0.5)
        dead = (fill == 0).all(axis=1)
        if dead.any():
            # a filled pixel must not read as black again
            fill[dead, np.argmax(total[frontier][dead], axis=1)] = floor_val
        sub[frontier] = fill
        m &= ~frontier
    return _wrap_like(img, out, is_u8)


# ---------------------------------------------------------------------------
# Tiling and orchestration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TileLayout:
    width: int
    height: int
    rows: int = 4
    cols: int = 4

    def __post_init__(self):
        if self.width < self.cols or self.height < self.rows:
            raise ValueError("image smaller than tile grid")

    @property
    def rects(self) -> list[tuple[int, int, int, int]]:
        """Row-major ``(x0, y0, x1, y1)`` half-open rectangles."""
        xe = [i * self.width // self.cols for i in range(self.cols + 1)]
        ye = [j * self.height // self.rows for j in range(self.rows + 1)]
        return [(xe[i], ye[j], xe[i + 1], ye[j + 1]) for j in range(self.rows) for i in range(self.cols)]


def split_tiles(arr: np.ndarray, layout: TileLayout) -> list[np.ndarray]:
    return [arr[y0:y1, x0:x1] for x0, y0, x1, y1 in layout.rects]


def stitch_tiles(tiles: list[np.ndarray], layout: TileLayout) -> np.ndarray:
    first = tiles[0]
    out = np.empty((layout.height, layout.width) + first.shape[2:], dtype=first.dtype)
    for (x0, y0, x1, y1), t in zip(layout.rects, tiles):
        out[y0:y1, x0:x1] = t
    return out


@dataclass
class TileResult:
    rect: tuple[int, int, int, int]
    grid: DeformationGrid | None
    ncc_initial: float
    ncc_final: float
    skipped: bool = False

    def disp_stats(self) -> tuple[float, float]:
        if self.grid is None:
            return 0.0, 0.0
        mag = np.sqrt((self.grid.dense() ** 2).sum(axis=-1))
        return float(mag.mean()), float(mag.max())

    def to_json(self) -> dict:
        mean_d, max_d = self.disp_stats()
        return {
            "rect": list(self.rect),
            "ncc_initial": self.ncc_initial,
            "ncc_final": self.ncc_final,
            "mean_disp": mean_d,
            "max_disp": max_d,
            "skipped": self.skipped,
        }


@dataclass
class RegistrationReport:
    homography: Homography
    tiles: list[TileResult] = field(default_factory=list)

    def fixed_to_moving(self, pts) -> np.ndarray:
        """Map fixed-frame points through the fitted transforms into the moving image."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        out = pts.copy()
        for t in self.tiles:
            x0, y0, x1, y1 = t.rect
            sel = (pts[:, 0] >= x0) & (pts[:, 0] < x1) & (pts[:, 1] >= y0) & (pts[:, 1] < y1)
            if t.grid is not None and sel.any():
                local = pts[sel] - (x0, y0)
                out[sel] = pts[sel] + t.grid.at(local)
        return self.homography.inverse().apply(out)

    def to_json(self) -> dict:
        return {"homography": self.homography.to_json(), "tiles": [t.to_json() for t in self.tiles]}


def _register_tile(moving: np.ndarray, fixed: np.ndarray, rect, cfg: DeformableConfig):
    # NCC as the optimizer sees it (edge-clamped sampling, full resolution)
    trace = []

    def record(level, it, energy):
        if level == 0:
            trace.append(-energy)

    before = ncc(preprocess(moving, cfg.sigma), preprocess(fixed, cfg.sigma))
    try:
        grid = register_deformable(moving, fixed, cfg, callback=record)
    except ValueError as exc:
        if "zero variance" not in str(exc):
            raise
        log.info("tile %s has no texture; left unregistered", rect)
        return moving, TileResult(rect, None, before, before, skipped=True)
    after = trace[-1] if trace else before
    return apply_deformation(moving, grid), TileResult(rect, grid, before, after)


def register_wsi_pair(
    he,
    ihc,
    lm: LandmarkSet,
    cfg: DeformableConfig | None = None,
    workers: int = 1,
) -> tuple[ImageBuffer, RegistrationReport]:
    """Projective fit, 16-tile deformable refinement, stitch, border fill."""
    cfg = cfg or DeformableConfig()
    he_arr = pixels(he)
    ihc_arr = pixels(ihc)
    for name, pts, arr in (("moving", lm.moving, he_arr), ("fixed", lm.fixed, ihc_arr)):
        h, w = arr.shape[:2]
        if len(pts) and ((pts < 0).any() or (pts[:, 0] > w - 1).any() or (pts[:, 1] > h - 1).any()):
            raise ValueError(f"{name} landmark outside image bounds")
    H = estimate_homography(lm)
    h, w = ihc_arr.shape[:2]
    warped = warp_projective(he_arr if he_arr.dtype == np.uint8 else to_uint8(he_arr), H, (w, h))
    if warped.ndim == 2:
        warped = warped[:, :, None]
    fixed = ihc_arr if ihc_arr.ndim == 3 else ihc_arr[:, :, None]
    layout = TileLayout(w, h)
    mov_tiles = split_tiles(warped, layout)
    fix_tiles = split_tiles(fixed, layout)

    base = rng_new(cfg.seed)
    jobs = []
    for rect, mt, ft in zip(layout.rects, mov_tiles, fix_tiles):
        tile_cfg = DeformableConfig(**{**cfg.__dict__, "seed": base.next_u64()})
        jobs.append((mt, ft, rect, tile_cfg))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: _register_tile(*j), jobs))
    else:
        results = [_register_tile(*j) for j in jobs]

    stitched = stitch_tiles([r[0] for r in results], layout)
    refined = refine_borders(stitched)
    colorspace = "grayscale" if refined.shape[2] == 1 else "sRGB"
    report = RegistrationReport(H, [r[1] for r in results])
    return ImageBuffer(refined, colorspace), report


def render_overlay(a, b):
    """50/50 blend, rounded half-up, for visual QC."""
    pa, pb = pixels(a), pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"dimension mismatch: {pa.shape} vs {pb.shape}")
    out = (np.asarray(pa, dtype=np.float64) + pb) / 2.0
    if isinstance(a, ImageBuffer):
        return ImageBuffer(to_uint8(out), a.colorspace)
    return to_uint8(out)
