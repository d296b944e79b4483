"""Property suites; each runs at least 1000 generated cases."""

import math

import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stainbench import losses as L
from stainbench.harness import TeamEntry, rank_teams
from stainbench.metrics import ssim_global, ssim_windowed
from stainbench.registration import TileLayout, border_black_mask, refine_borders, split_tiles, stitch_tiles

from oracles import oracle_focal

MANY = settings(max_examples=1000, deadline=None)

pixel_u8 = st.integers(0, 255)
img8 = arrays(np.uint8, (8, 8), elements=pixel_u8)
img_win = arrays(np.uint8, st.tuples(st.integers(11, 16), st.integers(11, 16)), elements=pixel_u8)
finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


# -- SSIM ---------------------------------------------------------------------


@MANY
@given(img8, img8)
def test_ssim_global_symmetric_and_bounded(x, y):
    a, b = ssim_global(x, y), ssim_global(y, x)
    assert a == b
    assert -1.0 - 1e-12 <= a <= 1.0 + 1e-12


@MANY
@given(st.data())
def test_ssim_windowed_symmetric_and_bounded(data):
    x = data.draw(img_win)
    y = data.draw(arrays(np.uint8, x.shape, elements=pixel_u8))
    a, b = ssim_windowed(x, y), ssim_windowed(y, x)
    assert abs(a - b) < 1e-12
    assert -1.0 - 1e-12 <= a <= 1.0 + 1e-12
    assert abs(ssim_windowed(x, x) - 1.0) < 1e-12


# -- focal --------------------------------------------------------------------


@st.composite
def logits_and_label(draw):
    n = draw(st.integers(2, 6))
    z = draw(st.lists(st.floats(-20, 20), min_size=n, max_size=n))
    return z, draw(st.integers(1, n))


@MANY
@given(logits_and_label())
def test_focal_gamma0_is_cross_entropy(case):
    z, y = case
    n = len(z)
    got = L.focal_loss(z, y, L.FocalParams((1.0,) * n, 0.0))
    assert abs(got - oracle_focal(z, y, [1.0] * n, 0.0)) < 1e-12


@MANY
@given(logits_and_label(), st.floats(0, 5), st.floats(0, 5))
def test_focal_non_increasing_in_gamma(case, g1, g2):
    z, y = case
    n = len(z)
    p = L.softmax_probs(z)
    pt = 1 - p
    pt[y - 1] = p[y - 1]
    assume((pt >= 0.5).all())
    lo, hi = sorted((g1, g2))
    alpha = (1.0,) * n
    assert L.focal_loss(z, y, L.FocalParams(alpha, hi)) <= L.focal_loss(z, y, L.FocalParams(alpha, lo)) + 1e-15


# -- cosine / InfoNCE ---------------------------------------------------------

vec = st.lists(st.floats(-10, 10), min_size=1, max_size=8)
pos_scale = st.floats(1e-3, 1e3)


@MANY
@given(st.data(), pos_scale, pos_scale)
def test_cosine_scale_invariant(data, c, d):
    a = np.array(data.draw(vec))
    b = np.array(data.draw(st.lists(st.floats(-10, 10), min_size=a.size, max_size=a.size)))
    assume(np.linalg.norm(a) > 1e-3 and np.linalg.norm(b) > 1e-3)
    v = L.cosine_sim_loss(a, b)
    assert 0.0 <= v <= 2.0
    assert abs(L.cosine_sim_loss(c * a, d * b) - v) < 1e-9


@MANY
@given(
    st.floats(0, math.pi),
    st.floats(0, math.pi),
    st.lists(st.tuples(finite, finite), min_size=1, max_size=5),
    st.floats(0.5, 2.0),
)
def test_infonce_monotone(t1, t2, negs, tau):
    assume(abs(math.cos(t1) - math.cos(t2)) > 1e-6)
    assume(all(abs(a) + abs(b) > 1e-3 for a, b in negs))
    q = [1.0, 0.0]
    near, far = sorted((t1, t2))
    l_near = L.infonce_loss(q, [math.cos(near), math.sin(near)], negs, tau)
    l_far = L.infonce_loss(q, [math.cos(far), math.sin(far)], negs, tau)
    assert l_near < l_far


@MANY
@given(finite, st.lists(finite, min_size=1, max_size=8), st.floats(-1e3, 1e3))
def test_infonce_shift_invariant(pos, negs, c):
    base = L.nce_from_logits(pos, negs)
    shifted = L.nce_from_logits(pos + c, [n + c for n in negs])
    assert abs(base - shifted) < 1e-9 * max(1.0, abs(c))
    assert base >= 0


# -- ranking ------------------------------------------------------------------

MONOTONE = (
    lambda x: 2.0 * x + 5.0,
    lambda x: x**3,
    lambda x: math.exp(x / 10.0),
    lambda x: math.log(x + 1.0),
)


@MANY
@given(
    st.lists(st.tuples(st.integers(1000, 4000), st.integers(-100, 100)), min_size=1, max_size=8),
    st.sampled_from(range(len(MONOTONE))),
)
def test_rank_invariant_to_monotone_psnr(scores, k):
    f = MONOTONE[k]
    teams = [TeamEntry(f"t{i}", p / 100.0, s / 100.0) for i, (p, s) in enumerate(scores)]
    moved = [TeamEntry(t.team, f(t.mean_psnr_db), t.mean_ssim) for t in teams]
    a = [(r.team, r.rank_psnr, r.final_score, r.final_rank) for r in rank_teams(teams)]
    b = [(r.team, r.rank_psnr, r.final_score, r.final_rank) for r in rank_teams(moved)]
    assert a == b


# -- border refinement / tiling ------------------------------------------------

sparse_u8 = st.one_of(st.just(0), st.just(0), pixel_u8)


@MANY
@given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12), st.sampled_from([1, 3])), elements=sparse_u8))
def test_refine_borders_idempotent(img):
    assume(img.any())
    once = refine_borders(img)
    assert not border_black_mask(once).any()
    assert np.array_equal(refine_borders(once), once)
    # pixels outside the border-connected black region are untouched
    keep = ~border_black_mask(img)
    assert np.array_equal(np.asarray(once)[keep], img[keep])


@MANY
@given(
    st.integers(1, 6), st.integers(1, 6), st.integers(0, 30), st.integers(0, 30), st.sampled_from([(), (3,)]),
    st.integers(0, 2**32 - 1),
)
def test_stitch_split_identity(rows, cols, extra_w, extra_h, tail, seed):
    h, w = rows + extra_h, cols + extra_w
    arr = np.random.default_rng(seed).integers(0, 256, (h, w) + tail, dtype=np.uint8)
    layout = TileLayout(w, h, rows, cols)
    tiles = split_tiles(arr, layout)
    assert sum(t.shape[0] * t.shape[1] for t in tiles) == h * w
    assert np.array_equal(stitch_tiles(tiles, layout), arr)


# -- wavelet ------------------------------------------------------------------


@MANY
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_dwt_energy_and_reconstruction(hh, hw, seed):
    x = np.random.default_rng(seed).uniform(-300, 300, (2 * hh, 2 * hw))
    q = L.dwt_haar(x)
    assert abs((q**2).sum() - (x**2).sum()) <= 1e-6 * max((x**2).sum(), 1.0)
    assert np.abs(L.idwt_haar(q) - x).max() < 1e-9
