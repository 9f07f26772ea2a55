import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hazedecomp.errors import DomainError, ShapeError
from hazedecomp.losses import (
    LossWeights,
    consistency_loss,
    photometric_theta,
    reconstruction_loss,
    smoothness_loss,
    ssim,
    total_loss,
    total_loss_grad,
)
from hazedecomp.scattering import ScatteringParams, synthesize_haze
from hazedecomp.scenes import make_scene

C1 = 1e-4
# SSIM of two constant images 0 and 1: means 0 and 1, zero variances
SSIM_ZERO_ONE = C1 / (1.0 + C1)


def test_ssim_constant_images():
    score, smap = ssim(np.zeros((6, 6)), np.ones((6, 6)))
    assert score == pytest.approx(SSIM_ZERO_ONE, rel=1e-12)
    assert score == pytest.approx(9.999000099990002e-05, rel=1e-12)
    np.testing.assert_allclose(smap, SSIM_ZERO_ONE, rtol=1e-12)


def test_ssim_identity_and_symmetry(rng):
    x = rng.uniform(size=(9, 11, 3))
    y = rng.uniform(size=(9, 11, 3))
    assert ssim(x, x)[0] == pytest.approx(1.0, abs=1e-12)
    assert ssim(x, y)[0] == pytest.approx(ssim(y, x)[0], abs=1e-15)


def test_ssim_shape_mismatch():
    with pytest.raises(ShapeError):
        ssim(np.zeros((3, 3)), np.zeros((3, 4)))


@given(arrays(np.float64, (5, 6), elements=st.floats(0, 1)), arrays(np.float64, (5, 6), elements=st.floats(0, 1)))
def test_ssim_bounded(x, y):
    score, smap = ssim(x, y)
    assert -1.0 <= score <= 1.0 + 1e-12
    assert np.all(np.abs(smap) <= 1.0 + 1e-12)


def test_theta_examples(rng):
    x = rng.uniform(0.1, 0.9, size=(7, 7, 3))
    assert photometric_theta(x, x) == pytest.approx(0.0, abs=1e-15)
    assert photometric_theta(x, x - 0.1, alpha=1.0) == pytest.approx(0.1, rel=1e-12)
    expected = 0.15 * 1.0 + 0.85 * (1.0 - SSIM_ZERO_ONE) / 2.0
    assert photometric_theta(np.zeros((4, 4)), np.ones((4, 4))) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.57496, abs=1e-5)


def test_reconstruction_examples(rng):
    target = rng.uniform(0.2, 0.8, size=(6, 6, 3))
    other = rng.uniform(0.2, 0.8, size=(6, 6, 3))
    assert reconstruction_loss([target, target], target) == 0.0
    single = photometric_theta(other, target)
    assert reconstruction_loss([other, other], target) == pytest.approx(2 * single, rel=1e-14)
    assert reconstruction_loss([target, target + 0.1], target, alpha=1.0) == pytest.approx(0.1, rel=1e-12)


def test_consistency_examples(rng):
    r = rng.uniform(5, 50, size=(8, 8))
    q = rng.uniform(5, 50, size=(8, 8))
    assert consistency_loss(r, r) == pytest.approx(0.0, abs=1e-15)
    assert consistency_loss(r, r + 0.25, alpha=1.0, normalize=False) == pytest.approx(0.25, rel=1e-12)
    assert consistency_loss(r, q) == pytest.approx(consistency_loss(q, r), abs=1e-15)
    # mean normalisation makes it blind to a global scale
    assert consistency_loss(r, 3.0 * r) == pytest.approx(0.0, abs=1e-12)


def test_smoothness_hand_step():
    r = np.array([[1.0, 2.0], [1.0, 2.0]])
    clear = np.full((2, 2, 3), 0.5)
    # inverse range [[1, .5], [1, .5]], mean .75 -> normalised [[4/3, 2/3], ...]
    # horizontal |dx| = 2/3 in both rows, vertical differences vanish
    assert smoothness_loss([r], clear, 0.001) == pytest.approx(0.001 * 2.0 / 3.0, rel=1e-14)
    assert smoothness_loss([r, r], clear, 0.001) == pytest.approx(0.002 * 2.0 / 3.0, rel=1e-14)


def test_smoothness_edges_downweight(rng):
    r = np.array([[1.0, 2.0], [1.0, 2.0]])
    flat = np.full((2, 2, 3), 0.5)
    edged = flat.copy()
    edged[:, 1] = 1.0
    assert smoothness_loss([r], edged) == pytest.approx(smoothness_loss([r], flat) * np.exp(-0.5), rel=1e-14)


def test_smoothness_constant_and_scale(rng):
    clear = rng.uniform(size=(6, 6, 3))
    assert smoothness_loss([np.full((6, 6), 7.0)], clear) == 0.0
    r = rng.uniform(1, 30, size=(6, 6))
    assert smoothness_loss([2 * r], clear) == pytest.approx(smoothness_loss([r], clear), rel=1e-12)


def test_smoothness_rejects_non_positive():
    with pytest.raises(DomainError):
        smoothness_loss([np.array([[1.0, 0.0], [1.0, 1.0]])], np.zeros((2, 2, 3)))


def _textured():
    return make_scene(16, 24, seed=3, visibility_rel=0.5)


def test_total_at_truth_constant_range(rng):
    clear = rng.uniform(size=(6, 6, 3))
    r = np.full((6, 6), 12.0)
    params = ScatteringParams((0.8, 0.85, 0.9), 30.0)
    hazy = synthesize_haze(clear, r, params)
    loss = total_loss(hazy, clear, [r, r], params.airlight, params.visibility)
    assert loss.total == pytest.approx(0.0, abs=1e-12)


def test_total_at_truth_is_smoothness_only():
    s = _textured()
    loss = total_loss(s.hazy, s.clear, [s.range, s.range], s.airlight, s.visibility)
    assert loss.reconstruction == pytest.approx(0.0, abs=1e-12)
    assert loss.consistency == pytest.approx(0.0, abs=1e-12)
    assert loss.smoothness > 0
    assert loss.total == pytest.approx(loss.smoothness, abs=1e-12)


def test_visibility_perturbation_raises_reconstruction():
    s = _textured()
    base = total_loss(s.hazy, s.clear, s.range, s.airlight, s.visibility).reconstruction
    grid = s.visibility * np.linspace(0.8, 1.25, 19)
    recs = [total_loss(s.hazy, s.clear, s.range, s.airlight, v).reconstruction for v in grid]
    # brute-force scan: the truth is the minimiser and +10% is strictly worse
    assert grid[int(np.argmin(recs))] == pytest.approx(s.visibility, rel=0.03)
    assert total_loss(s.hazy, s.clear, s.range, s.airlight, 1.1 * s.visibility).reconstruction > base


def test_single_field_mode_has_no_consistency():
    s = _textured()
    one = total_loss(s.hazy, s.clear, s.range, s.airlight, 0.9 * s.visibility)
    two = total_loss(s.hazy, s.clear, [s.range, s.range], s.airlight, 0.9 * s.visibility)
    assert one.consistency == 0.0
    assert one.total == pytest.approx(two.total, rel=1e-12)


def test_total_shape_and_domain_errors():
    s = _textured()
    with pytest.raises(ShapeError):
        total_loss(s.hazy, s.clear, s.range[:-1], s.airlight, s.visibility)
    with pytest.raises(DomainError):
        total_loss(s.hazy, s.clear, s.range, s.airlight, -1.0)
    with pytest.raises(ShapeError):
        total_loss(s.hazy, s.clear, [s.range] * 3, s.airlight, s.visibility)


def test_weights_validation():
    with pytest.raises(DomainError):
        LossWeights(alpha=1.5)
    with pytest.raises(DomainError):
        LossWeights(beta_smooth=-1.0)


@given(st.integers(0, 10_000), st.floats(0.5, 1.5), st.floats(0.7, 1.3))
def test_breakdown_invariants(seed, vscale, rscale):
    s = make_scene(8, 8, seed=seed)
    rng = np.random.default_rng(seed)
    r2 = s.range * rng.uniform(0.9, 1.1, size=s.range.shape)
    loss = total_loss(s.hazy, s.clear, [rscale * s.range, r2], s.airlight, vscale * s.visibility)
    parts = [loss.reconstruction, loss.consistency, loss.smoothness]
    assert all(np.isfinite(p) and p >= 0 for p in parts)
    assert abs(loss.total - sum(parts)) <= 1e-9


@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_smoothness_scale_invariance(seed, scale):
    s = make_scene(8, 8, seed=seed)
    a = smoothness_loss([s.range], s.clear)
    b = smoothness_loss([scale * s.range], s.clear)
    assert b == pytest.approx(a, rel=1e-9, abs=1e-15)


@given(st.integers(0, 10_000), st.floats(0.2, 5.0))
def test_loss_depends_on_range_over_visibility(seed, scale):
    # the scale gauge: (R, V) -> (sR, sV) leaves every term unchanged
    s = make_scene(8, 8, seed=seed)
    a = total_loss(s.hazy, s.clear, s.range, s.airlight, 0.8 * s.visibility)
    b = total_loss(s.hazy, s.clear, scale * s.range, s.airlight, scale * 0.8 * s.visibility)
    assert b.total == pytest.approx(a.total, rel=1e-9, abs=1e-14)


def test_gradient_matches_central_difference():
    s = make_scene(8, 8, seed=11)
    r = [0.9 * s.range, 1.05 * s.range ** 1.02]
    v = 1.1 * s.visibility
    _, g = total_loss_grad(s.hazy, s.clear, r, s.airlight, v)
    h = 1e-6 * v
    num = (total_loss(s.hazy, s.clear, r, s.airlight, v + h).total - total_loss(s.hazy, s.clear, r, s.airlight, v - h).total) / (2 * h)
    assert g.visibility == pytest.approx(num, rel=1e-4)
