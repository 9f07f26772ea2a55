"""Reconstruction objective for haze decomposition, with analytic gradients.

The objective has three parts, each a per-pixel mean:

* reconstruction: photometric error between each re-rendered hazy image and
  the observed one, summed over the two range branches;
* consistency: photometric error between the two (mean-normalised) range
  fields;
* smoothness: edge-aware first-difference penalty on mean-normalised
  inverse range, weighted by ``beta_smooth`` and summed over branches.

The photometric error mixes L1 and SSIM:
``alpha * mean|x - y| + (1 - alpha) * (1 - SSIM(x, y)) / 2``.

SSIM uses 3x3 uniform windows with mirror padding. Everything here is plain
numpy; the ``*_grad`` functions return exact derivatives which the
decomposition solver relies on.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import DomainError, ShapeError
from .scattering import as_field, as_image, extinction_coefficient

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.15
    beta_smooth: float = 0.001
    normalize_consistency: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta_smooth < 0:
            raise DomainError(f"beta_smooth must be non-negative, got {self.beta_smooth}")


@dataclass(frozen=True)
class LossBreakdown:
    reconstruction: float
    consistency: float
    smoothness: float
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", self.reconstruction + self.consistency + self.smoothness)

    def as_dict(self):
        return {
            "reconstruction": self.reconstruction,
            "consistency": self.consistency,
            "smoothness": self.smoothness,
            "total": self.total,
        }


@dataclass
class LossGradient:
    """Derivatives of the total loss. ``ranges`` holds one array per range
    field the caller passed in (a single field gets the sum over branches)."""

    ranges: list
    airlight: np.ndarray
    visibility: float


# -- windowed statistics -----------------------------------------------------


def _box(x):
    """3x3 mean over axes 1 and 2 of a stack (K, H, W, ...), mirror padded
    ("d c b | a b c d")."""
    size = (1, 3, 3) + (1,) * (x.ndim - 3)
    return uniform_filter(x, size, mode="mirror")


def _box_adjoint(g):
    # transpose of "mirror-pad then valid 3x3 mean": full correlation on a
    # zero-padded grid, then fold the padded border back onto its mirror sources
    h, w = g.shape[1], g.shape[2]
    pad = [(0, 0), (1, 1), (1, 1)] + [(0, 0)] * (g.ndim - 3)
    z = uniform_filter(np.pad(g, pad), (1, 3, 3) + (1,) * (g.ndim - 3), mode="constant")
    z[:, 2] += z[:, 0]
    z[:, h - 1] += z[:, h + 1]
    z[:, :, 2] += z[:, :, 0]
    z[:, :, w - 1] += z[:, :, w + 1]
    return z[:, 1 : h + 1, 1 : w + 1]


def _check_same(x, y):
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim < 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ShapeError(f"need at least 2x2 spatial extent, got {x.shape}")


def _ssim_terms(x, y, c1, c2):
    stats = _box(np.stack([x, y, x * x, y * y, x * y]))
    mu_x, mu_y = stats[0], stats[1]
    sigma_x = stats[2] - mu_x * mu_x
    sigma_y = stats[3] - mu_y * mu_y
    sigma_xy = stats[4] - mu_x * mu_y
    a1 = 2 * mu_x * mu_y + c1
    a2 = 2 * sigma_xy + c2
    b1 = mu_x * mu_x + mu_y * mu_y + c1
    b2 = sigma_x + sigma_y + c2
    return mu_x, mu_y, a1, a2, b1, b2


def ssim(x, y, c1: float = SSIM_C1, c2: float = SSIM_C2):
    """Return ``(mean_score, ssim_map)`` for two equally shaped arrays."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same(x, y)
    _, _, a1, a2, b1, b2 = _ssim_terms(x, y, c1, c2)
    smap = (a1 * a2) / (b1 * b2)
    return float(smap.mean()), smap


def _ssim_mean_grad(x, y, c1, c2):
    """Mean SSIM and its gradients with respect to x and y."""
    mu_x, mu_y, a1, a2, b1, b2 = _ssim_terms(x, y, c1, c2)
    den = b1 * b2
    s = a1 * a2 / den
    w = 1.0 / s.size
    d_sxy = w * 2 * a1 / den
    d_sx = w * -s / b2  # d/d sigma_x == d/d sigma_y
    d_mux = w * (2 * mu_y * a2 / den - s * 2 * mu_x / b1)
    d_muy = w * (2 * mu_x * a2 / den - s * 2 * mu_y / b1)
    # sigma_x = box(x^2) - mu_x^2, sigma_xy = box(xy) - mu_x mu_y
    adj = _box_adjoint(np.stack([d_sx, d_sxy, d_mux - 2 * mu_x * d_sx - mu_y * d_sxy, d_muy - 2 * mu_y * d_sx - mu_x * d_sxy]))
    t_sx, t_sxy = adj[0], adj[1]
    gx = adj[2] + 2 * x * t_sx + y * t_sxy
    gy = adj[3] + 2 * y * t_sx + x * t_sxy
    return float(s.mean()), gx, gy


# -- photometric error -------------------------------------------------------


def photometric_theta(x, y, alpha: float = 0.15) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same(x, y)
    score, _ = ssim(x, y)
    return float(alpha * np.abs(x - y).mean() + (1 - alpha) * (1 - score) / 2)


def photometric_theta_grad(x, y, alpha: float = 0.15):
    """Value of the photometric error and its gradients w.r.t. both inputs.
    The L1 part uses ``sign(0) = 0`` at ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same(x, y)
    diff = x - y
    score, gs_x, gs_y = _ssim_mean_grad(x, y, SSIM_C1, SSIM_C2)
    value = alpha * np.abs(diff).mean() + (1 - alpha) * (1 - score) / 2
    g_l1 = alpha * np.sign(diff) / diff.size
    k = -(1 - alpha) / 2
    return float(value), g_l1 + k * gs_x, -g_l1 + k * gs_y


def reconstruction_loss(reconstructions, target, alpha: float = 0.15) -> float:
    target = as_image(target, "target")
    return float(sum(photometric_theta(as_image(r, "reconstruction"), target, alpha) for r in reconstructions))


def _mean_normalize(f):
    m = f.mean()
    if not m > 0:
        raise DomainError("cannot mean-normalise a field with non-positive mean")
    return f / m, m


def _mean_normalize_adjoint(g, normalized, m):
    return (g - np.mean(g * normalized)) / m


def consistency_loss(r1, r2, alpha: float = 0.15, normalize: bool = True) -> float:
    return _consistency(as_field(r1, "r1"), as_field(r2, "r2"), alpha, normalize, grad=False)[0]


def _consistency(r1, r2, alpha, normalize, grad):
    if r1.shape != r2.shape:
        raise ShapeError(f"range fields differ in shape: {r1.shape} vs {r2.shape}")
    if normalize:
        n1, m1 = _mean_normalize(r1)
        n2, m2 = _mean_normalize(r2)
    else:
        n1, n2 = r1, r2
    if not grad:
        return photometric_theta(n1, n2, alpha), None, None
    value, g1, g2 = photometric_theta_grad(n1, n2, alpha)
    if normalize:
        g1 = _mean_normalize_adjoint(g1, n1, m1)
        g2 = _mean_normalize_adjoint(g2, n2, m2)
    return value, g1, g2


# -- edge-aware smoothness ---------------------------------------------------


def _edge_weights(clear):
    wx = np.exp(-np.abs(np.diff(clear, axis=1)).mean(axis=2))
    wy = np.exp(-np.abs(np.diff(clear, axis=0)).mean(axis=2))
    return wx, wy


def _smooth_branch(r, wx, wy, grad):
    if np.any(r <= 0):
        raise DomainError("smoothness needs strictly positive range values (it works on inverse range)")
    inv = 1.0 / r
    norm, m = _mean_normalize(inv)
    dx = np.diff(norm, axis=1)
    dy = np.diff(norm, axis=0)
    value = (np.abs(dx) * wx).mean() + (np.abs(dy) * wy).mean()
    if not grad:
        return value, None
    gdx = np.sign(dx) * wx / dx.size
    gdy = np.sign(dy) * wy / dy.size
    g = np.zeros_like(norm)
    g[:, 1:] += gdx
    g[:, :-1] -= gdx
    g[1:, :] += gdy
    g[:-1, :] -= gdy
    g = _mean_normalize_adjoint(g, norm, m)
    return value, g * -(inv * inv)


def smoothness_loss(ranges, clear, beta_smooth: float = 0.001) -> float:
    clear = as_image(clear, "clear")
    wx, wy = _edge_weights(clear)
    total = 0.0
    for r in ranges:
        r = as_field(r)
        if r.shape != clear.shape[:2]:
            raise ShapeError(f"range {r.shape} does not match image {clear.shape[:2]}")
        total += _smooth_branch(r, wx, wy, grad=False)[0]
    return float(beta_smooth * total)


# -- assembled objective -----------------------------------------------------


def _branches(ranges):
    if isinstance(ranges, np.ndarray) and ranges.ndim == 2:
        r = as_field(ranges)
        return [r, r], True
    ranges = [as_field(r) for r in ranges]
    if len(ranges) == 1:
        return [ranges[0], ranges[0]], True
    if len(ranges) != 2:
        raise ShapeError(f"expected one or two range fields, got {len(ranges)}")
    return ranges, False


def render(clear, transmission, airlight):
    """``I' T + A (1 - T)`` with T of shape (H, W); no validation."""
    t = transmission[..., None]
    return clear * t + airlight * (1.0 - t)


def total_loss(hazy, clear, ranges, airlight, visibility, epsilon=0.05, weights: LossWeights = LossWeights()):
    """Evaluate the full objective. ``ranges`` is one (H, W) field, used for
    both branches, or a pair of fields."""
    return _total(hazy, clear, ranges, airlight, visibility, epsilon, weights, grad=False)[0]


def total_loss_grad(hazy, clear, ranges, airlight, visibility, epsilon=0.05, weights: LossWeights = LossWeights()):
    """Like :func:`total_loss` but also returns a :class:`LossGradient`."""
    return _total(hazy, clear, ranges, airlight, visibility, epsilon, weights, grad=True)


def _total(hazy, clear, ranges, airlight, visibility, epsilon, weights, grad):
    hazy = as_image(hazy, "hazy")
    clear = as_image(clear, "clear")
    if hazy.shape != clear.shape:
        raise ShapeError(f"hazy {hazy.shape} and clear {clear.shape} differ")
    branches, single = _branches(ranges)
    for r in branches:
        if r.shape != hazy.shape[:2]:
            raise ShapeError(f"range {r.shape} does not match image {hazy.shape[:2]}")
        if np.any(r < 0):
            raise DomainError("range fields must be non-negative")
    airlight = np.broadcast_to(np.asarray(airlight, dtype=np.float64), (3,))
    beta = extinction_coefficient(visibility, epsilon)
    if beta == 0.0:
        raise DomainError("visibility must be finite")
    alpha = weights.alpha
    wx, wy = _edge_weights(clear)

    # identical branches in single-field mode: evaluate once, count twice
    distinct = branches[:1] if single else branches
    mult = 2.0 if single else 1.0

    rec = 0.0
    smooth = 0.0
    g_ranges = []
    g_air = np.zeros(3)
    g_beta = 0.0
    for r in distinct:
        t = np.exp(-beta * r)
        ir = render(clear, t, airlight)
        if grad:
            v, g_ir, _ = photometric_theta_grad(ir, hazy, alpha)
            g_t = (g_ir * (clear - airlight)).sum(axis=2)
            g_air += (g_ir * (1.0 - t)[..., None]).sum(axis=(0, 1))
            g_beta += float((g_t * -r * t).sum())
        else:
            v = photometric_theta(ir, hazy, alpha)
        rec += v
        s, gs = _smooth_branch(r, wx, wy, grad)
        smooth += s
        if grad:
            g_ranges.append(g_t * -beta * t + weights.beta_smooth * gs)
    rec *= mult
    smooth *= mult * weights.beta_smooth

    if single:
        con = 0.0
    else:
        con, gc1, gc2 = _consistency(branches[0], branches[1], alpha, weights.normalize_consistency, grad)

    breakdown = LossBreakdown(float(rec), float(con), float(smooth))
    if not grad:
        return breakdown, None
    if single:
        g_ranges = [2.0 * g_ranges[0]]
        g_air *= 2.0
        g_beta *= 2.0
    else:
        g_ranges = [g_ranges[0] + gc1, g_ranges[1] + gc2]
    g_vis = g_beta * -beta / visibility
    return breakdown, LossGradient(g_ranges, g_air, float(g_vis))
