"""Synthetic H&E/IHC-like slide pairs with known ground-truth warps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import ImageBuffer, LandmarkSet, Xoshiro256, to_uint8
from .registration import DeformationGrid, Homography


def structure_map(shape: tuple[int, int], rng: Xoshiro256) -> np.ndarray:
    """Nuclei-like blobs on a slowly varying tissue density, values in [0, 1]."""
    g = rng.numpy()
    h, w = shape
    fine = ndimage.gaussian_filter(g.standard_normal((h, w)), 2.0)
    fine /= fine.std()
    nuclei = 1.0 / (1.0 + np.exp(-4.0 * (fine - 0.8)))
    mid = ndimage.gaussian_filter(g.standard_normal((h, w)), 8.0)
    mid /= mid.std()
    coarse = ndimage.gaussian_filter(g.standard_normal((h, w)), 24.0)
    coarse /= coarse.std()
    density = 1.0 / (1.0 + np.exp(-1.5 * coarse))
    s = density * (0.75 * nuclei + 0.25 * (0.5 + 0.25 * mid))
    return np.clip(s, 0.0, 1.0)


_HE_BG = np.array([242.0, 236.0, 244.0])
_HE_EOSIN = np.array([232.0, 150.0, 192.0])
_HE_HEMA = np.array([70.0, 45.0, 120.0])
_IHC_BG = np.array([240.0, 238.0, 232.0])
_IHC_COUNTER = np.array([160.0, 172.0, 214.0])
_IHC_DAB = np.array([120.0, 70.0, 35.0])


def colorize(s: np.ndarray, stain: str) -> np.ndarray:
    """Map a structure map to an RGB uint8 image in the given stain's palette.

    Smoothed structure density sets the stroma/counterstain layer; the map
    itself sets the nuclear (or DAB) layer on top.
    """
    bg, wash, ink = (_HE_BG, _HE_EOSIN, _HE_HEMA) if stain == "he" else (_IHC_BG, _IHC_COUNTER, _IHC_DAB)
    tissue = np.clip(2.5 * ndimage.gaussian_filter(s, 6.0, mode="nearest"), 0.0, 1.0)[..., None]
    base = bg * (1.0 - tissue) + wash * tissue
    rgb = base * (1.0 - s[..., None]) + ink * s[..., None]
    return to_uint8(rgb)


def sample_map(s: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear lookup with edge clamping."""
    return ndimage.map_coordinates(s, [y, x], order=1, mode="nearest")


def random_bspline_grid(
    domain: tuple[int, int], spacing: float, max_disp: float, rng: Xoshiro256
) -> DeformationGrid:
    """Smooth random field whose dense magnitude peaks at exactly ``max_disp``."""
    g = rng.numpy()
    nx, ny = DeformationGrid.shape_for(domain, spacing)
    disp = g.uniform(-1.0, 1.0, size=(ny, nx, 2))
    peak = np.sqrt((DeformationGrid(spacing, domain, disp).dense() ** 2).sum(-1)).max()
    return DeformationGrid(spacing, domain, disp * (max_disp / peak))


@dataclass
class WarpedPair:
    """``fixed(p) = moving(p + truth(p))`` for a texture tile."""

    moving: ImageBuffer
    fixed: ImageBuffer
    truth: DeformationGrid


def warped_tile_pair(size: int, max_disp: float, seed: int, spacing: float = 128.0) -> WarpedPair:
    rng = Xoshiro256(seed)
    margin = int(np.ceil(max_disp)) + 8
    s = structure_map((size + 2 * margin, size + 2 * margin), rng)
    truth = random_bspline_grid((size, size), spacing, max_disp, rng)
    u = truth.dense()
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    moving = s[margin:margin + size, margin:margin + size]
    fixed = sample_map(s, xs + u[..., 0] + margin, ys + u[..., 1] + margin)
    return WarpedPair(ImageBuffer(colorize(moving, "ihc")), ImageBuffer(colorize(fixed, "ihc")), truth)


def landmark_grid(width: int, height: int, n: int = 10, margin: float = 0.0) -> np.ndarray:
    """``n x n`` cell-centered points, optionally inset by ``margin`` pixels."""
    xs = margin + (np.arange(n) + 0.5) * (width - 2 * margin) / n
    ys = margin + (np.arange(n) + 0.5) * (height - 2 * margin) / n
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass
class SlidePair:
    """Synthetic H&E (moving) and IHC (fixed) slides.

    An H&E point ``q`` shows the tissue at fixed-frame location
    ``forward(q) = H q + local(H q)``.
    """

    he: ImageBuffer
    ihc: ImageBuffer
    homography: Homography
    local: DeformationGrid
    landmarks: LandmarkSet

    def forward(self, q) -> np.ndarray:
        p = self.homography.apply(np.asarray(q, dtype=np.float64).reshape(-1, 2))
        return p + self.local.at(p)


def slide_pair(size: int = 2048, seed: int = 0, local_disp: float = 6.0) -> SlidePair:
    rng = Xoshiro256(seed)
    margin = max(64, size // 8)
    s = structure_map((size + 2 * margin, size + 2 * margin), rng)

    c = size / 2.0
    ang = np.deg2rad(rng.uniform(2.0, 3.0))
    scale = rng.uniform(1.02, 1.04)
    tx, ty = rng.uniform(14.0, 20.0), -rng.uniform(10.0, 16.0)
    rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]]) * scale
    h = np.eye(3)
    h[:2, :2] = rot
    h[:2, 2] = np.array([c, c]) - rot @ np.array([c, c]) + (tx, ty)
    h[2, :2] = (2e-6, -1.5e-6)
    H = Homography(h)
    local = random_bspline_grid((size, size), max(size / 8, 64), local_disp, rng)

    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    fq = H.apply(np.column_stack([xs.ravel(), ys.ravel()]))
    fq += local.at(fq)
    he_s = sample_map(s, fq[:, 0] + margin, fq[:, 1] + margin).reshape(size, size)
    ihc_s = s[margin:margin + size, margin:margin + size]

    inset = size * 0.1
    anchors = np.array(
        [
            [inset, inset], [size - inset, inset], [size - inset, size - inset], [inset, size - inset],
            [c, inset], [size - inset, c], [c, size - inset], [inset, c],
        ]
    )
    pair = SlidePair(
        ImageBuffer(colorize(he_s, "he")),
        ImageBuffer(colorize(ihc_s, "ihc")),
        H,
        local,
        LandmarkSet(np.zeros((0, 2)), np.zeros((0, 2))),
    )
    pair.landmarks = LandmarkSet(anchors, pair.forward(anchors))
    return pair
