"""Per-image decomposition of a hazy image into range, airlight and visibility.

Given the hazy image and its clear counterpart, the unknowns are fitted by
minimising the reconstruction objective in :mod:`hazedecomp.losses` with a
moment-based first-order method (Adam) plus step acceptance, so the loss trace
is non-increasing once the warm-up iterations (none by default) are over.

Feasibility is built into the parameterisation: ``V = exp(u)``,
``A = sigmoid(a)``, ``R = scale * softplus(z)``.

Scale gauge
-----------
The re-rendered image depends on range and visibility only through ``R / V``
and the smoothness prior is scale invariant, so when V is unknown the pair
(R, V) is only determined up to a common factor. The solver fixes that factor
after optimisation with one of two anchors:

* ``range_anchor``: an (H, W) array of known ranges, NaN where unknown (for
  instance sparse LiDAR returns). The factor is the median ratio over anchor
  pixels that fall inside the identifiability mask.
* ``d_ref``: the scene's maximum range; the estimated range over pixels
  with usable contrast is scaled so its maximum equals ``d_ref``. This is
  exact for clean inputs but fragile once quantisation hides the faintest
  far-field contrast, where anchors are the better choice. With
  ``d_ref=1`` (the default) visibility comes out relative to scene depth.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.optimize import minimize

from .errors import DegenerateDecompositionError, DomainError, InputError, ShapeError
from .losses import LossWeights, photometric_theta, render, total_loss_grad
from .scattering import DEFAULT_EPSILON, as_image

log = logging.getLogger(__name__)

IDENTIFIABLE_CONTRAST = 0.1
DEGENERATE_TOL = 1e-4
GRID_SIZE = 16


class DecomposeMode(Enum):
    FIX_AV = "fix-av"  # airlight and visibility known, estimate range
    FIX_A = "fix-a"  # airlight known, estimate range and visibility
    FULL = "full"  # estimate range, airlight and visibility

    @property
    def estimates_visibility(self):
        return self is not DecomposeMode.FIX_AV

    @property
    def estimates_airlight(self):
        return self is DecomposeMode.FULL


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 2000
    step_size: float = 1e-2
    tol: float = 1e-6
    patience: int = 20
    warmup: int = 0
    visibility_bounds: tuple = (1e-6, 1e9)
    t_min: float = 1e-6
    seed: int = 0
    refine_airlight: bool = True
    weights: LossWeights = LossWeights()

    def __post_init__(self):
        if self.max_iters < 1:
            raise InputError("max_iters must be >= 1")
        if not (self.step_size > 0 and self.tol > 0 and self.t_min > 0):
            raise InputError("step size and tolerances must be positive")


@dataclass
class CoarseInit:
    range: np.ndarray
    airlight: np.ndarray
    visibility: float
    transmission: np.ndarray
    identifiable: np.ndarray


@dataclass
class DecomposeResult:
    range: np.ndarray
    airlight: np.ndarray
    visibility: float
    loss_trace: list
    converged: bool
    identifiability_mask: np.ndarray
    final_loss: object = None
    iterations: int = 0
    gauge: str = "known-visibility"

    def summary(self):
        return {
            "visibility": self.visibility,
            "airlight": [float(a) for a in self.airlight],
            "converged": self.converged,
            "iterations": self.iterations,
            "gauge": self.gauge,
            "identifiable_fraction": float(self.identifiability_mask.mean()),
            "final_losses": self.final_loss.as_dict() if self.final_loss is not None else None,
        }


# -- helpers -------------------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _logit(p):
    p = np.clip(p, 1e-6, 1 - 1e-6)
    return np.log(p) - np.log1p(-p)


def _softplus(z):
    return np.logaddexp(0.0, z)


def _softplus_inv(y):
    y = np.maximum(y, 1e-12)
    return np.where(y > 30, y, np.log(np.expm1(np.minimum(y, 30))))


def _check_inputs(hazy, clear):
    hazy = as_image(hazy, "hazy")
    clear = as_image(clear, "clear")
    if hazy.shape != clear.shape:
        raise ShapeError(f"hazy {hazy.shape} and clear {clear.shape} differ")
    for name, img in (("hazy", hazy), ("clear", clear)):
        if img.min() < 0 or img.max() > 1:
            raise InputError(f"{name} values must lie in [0, 1]")
    if np.max(np.abs(hazy - clear)) < DEGENERATE_TOL:
        raise DegenerateDecompositionError(
            "hazy and clear images are identical: the decomposition collapses "
            "(zero range or airlight equal to the scene, with any visibility)"
        )
    return hazy, clear


def _known_value(known, key):
    if not known:
        return None
    value = known.get(key)
    return None if value is None else value


def estimate_airlight(hazy, fraction=0.1):
    """Mean colour of the brightest ``fraction`` of hazy pixels."""
    brightness = hazy.mean(axis=2).ravel()
    k = max(1, int(np.ceil(fraction * brightness.size)))
    idx = np.argpartition(brightness, brightness.size - k)[-k:]
    return hazy.reshape(-1, 3)[idx].mean(axis=0)


def closed_form_transmission(hazy, clear, airlight, t_min=1e-3):
    """Per-pixel transmission from the channel ratios ``(I - A) / (I' - A)``,
    median over channels; channels with no contrast are ignored."""
    denom = clear - airlight
    usable = np.abs(denom) >= 1e-6
    ratio = np.where(usable, (hazy - airlight) / np.where(usable, denom, 1.0), np.nan)
    ratio = np.clip(ratio, t_min, 1.0)
    with np.errstate(all="ignore"):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            t = np.nanmedian(ratio, axis=2)
    return np.where(np.isfinite(t), t, 1.0)


def _lsq_transmission(hazy, clear, airlight, t_min):
    d = clear - airlight
    num = ((hazy - airlight) * d).sum(axis=2)
    den = (d * d).sum(axis=2)
    return np.clip(num / np.maximum(den, 1e-12), t_min, 1.0)


def refine_airlight(hazy, clear, airlight, t_min=1e-3):
    """Polish an airlight estimate by variable projection: for each candidate
    A the per-pixel transmission is solved in closed form (least squares over
    channels) and the remaining squared residual is minimised over A."""

    def residual(logit_a):
        a = _sigmoid(logit_a)
        t = _lsq_transmission(hazy, clear, a, t_min)
        return float(np.mean((render(clear, t, a) - hazy) ** 2))

    x0 = _logit(np.asarray(airlight, dtype=float))
    res = minimize(residual, x0, method="Nelder-Mead", options={"xatol": 1e-7, "fatol": 1e-14, "maxiter": 2000})
    best = res.x if res.fun <= residual(x0) else x0
    return _sigmoid(best)


def identifiable_pixels(clear, airlight, threshold=IDENTIFIABLE_CONTRAST):
    return np.max(np.abs(clear - np.asarray(airlight)), axis=2) >= threshold


def _anchor_factor(range_shape, optical_depth, anchor, mask):
    """Median of known range over estimated optical depth at anchor pixels."""
    if anchor is None:
        return None
    anchor = np.asarray(anchor, dtype=np.float64)
    if anchor.shape != range_shape:
        raise ShapeError(f"range anchor {anchor.shape} does not match image {range_shape}")
    use = np.isfinite(anchor) & (anchor > 0) & mask & (optical_depth > 1e-9)
    if not use.any():
        return None
    return float(np.median(anchor[use] / optical_depth[use]))


# -- initialisation ----------------------------------------------------------------


def coarse_init(
    hazy, clear, epsilon=DEFAULT_EPSILON, known=None, range_anchor=None, d_ref=None, t_min=1e-3, refine=False
):
    """Starting point for the solver.

    Airlight comes from the brightest decile of the hazy image (or ``known``;
    ``refine`` polishes it with :func:`refine_airlight`),
    transmission from the closed-form channel ratio, and visibility from a
    scan over 16 log-spaced candidates in ``[0.05, 20] * d_max`` using a
    range field whose scale is pinned by the gauge (see module docs). Ties go
    to the smaller visibility.
    """
    hazy = as_image(hazy, "hazy")
    clear = as_image(clear, "clear")
    ln_eps = -np.log(epsilon)
    a_known = _known_value(known, "airlight")
    v_known = _known_value(known, "visibility")
    if a_known is not None:
        airlight = np.asarray(a_known, dtype=float)
    else:
        airlight = estimate_airlight(hazy)
        if refine:
            airlight = refine_airlight(hazy, clear, airlight, t_min)
    ident = identifiable_pixels(clear, airlight)
    if not ident.any():
        raise DegenerateDecompositionError(
            "no pixel differs from the airlight by the identifiability threshold; range is unconstrained"
        )
    t_hat = closed_form_transmission(hazy, clear, airlight, t_min)
    tau = -np.log(t_hat)  # optical depth, beta * R

    if v_known is not None:
        visibility = float(v_known)
    else:
        factor = _anchor_factor(tau.shape, tau, range_anchor, ident)
        tau_max = float(tau[ident].max())
        if factor is not None:
            shaped = factor * tau
            d_max = float(shaped[ident].max()) if tau_max > 0 else float(np.nanmax(range_anchor))
        else:
            d_max = float(d_ref) if d_ref is not None else 1.0
            shaped = d_max * tau / tau_max if tau_max > 0 else None
        if shaped is None or tau_max <= 0:
            shaped = np.full(tau.shape, d_max)
        grid = np.geomspace(0.05 * d_max, 20.0 * d_max, GRID_SIZE)
        losses = [photometric_theta(render(clear, np.exp(-ln_eps / v * shaped), airlight), hazy) for v in grid]
        visibility = float(grid[int(np.argmin(losses))])

    beta = ln_eps / visibility
    range0 = tau / beta
    fill = np.median(range0[ident])
    if not fill > 0:
        fill = visibility
    range0 = np.where(ident, range0, fill)
    range0 = np.maximum(range0, 1e-3 * fill)
    return CoarseInit(range0, airlight, visibility, t_hat, ident)


def _inpaint_log(values, reliable, sigmas=(2.0, 4.0, 8.0, 16.0, 32.0)):
    """Fill unreliable pixels of ``values`` by normalised Gaussian convolution
    over the reliable ones, widening the kernel until every hole is covered."""
    out = values.copy()
    todo = ~reliable
    w = reliable.astype(float)
    vw = np.where(reliable, values, 0.0)
    for sigma in sigmas:
        if not todo.any():
            break
        den = gaussian_filter(w, sigma, mode="nearest")
        num = gaussian_filter(vw, sigma, mode="nearest")
        ok = todo & (den > 1e-3)
        out[ok] = num[ok] / den[ok]
        todo &= ~ok
    if todo.any():
        out[todo] = np.median(values[reliable])
    return out


def _warm_start(hazy, clear, init, epsilon, t_min):
    """Per-pixel least-squares range wherever contrast survives, with pixels
    that carry no contrast filled smoothly from their neighbours."""
    d = clear - init.airlight
    t = _lsq_transmission(hazy, clear, init.airlight, t_min)
    reliable = ((d * d).sum(axis=2) >= 1e-4) & (t > t_min) & (t < 1.0)
    if not reliable.any():
        return init.range
    beta = -np.log(epsilon) / init.visibility
    log_r = np.log(np.maximum(-np.log(t) / beta, 1e-12))
    return np.exp(_inpaint_log(log_r, reliable))


# -- solver ------------------------------------------------------------------------


class _Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = None
        self.v = None
        self.t = 0

    def observe(self, g):
        if self.m is None:
            self.m = np.zeros_like(g)
            self.v = np.zeros_like(g)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g

    def direction(self):
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return m_hat / (np.sqrt(v_hat) + self.eps)


class _Problem:
    """Maps a flat latent vector to (R, A, V) and back, with chained gradients."""

    def __init__(self, hazy, clear, epsilon, mode, airlight, visibility, range_scale, config):
        self.hazy, self.clear, self.epsilon, self.mode = hazy, clear, epsilon, mode
        self.fixed_airlight = np.asarray(airlight, dtype=float)
        self.fixed_visibility = float(visibility)
        self.scale = range_scale
        self.shape = hazy.shape[:2]
        self.n = self.shape[0] * self.shape[1]
        self.config = config
        lo, hi = config.visibility_bounds
        self.log_v_bounds = (np.log(lo), np.log(hi))

    def pack(self, range_map, airlight, visibility):
        parts = [_softplus_inv(range_map / self.scale).ravel()]
        if self.mode.estimates_visibility:
            parts.append([np.log(visibility)])
        if self.mode.estimates_airlight:
            parts.append(_logit(airlight))
        return np.concatenate(parts)

    def unpack(self, x):
        z = x[: self.n].reshape(self.shape)
        r = self.scale * _softplus(z)
        k = self.n
        v = self.fixed_visibility
        if self.mode.estimates_visibility:
            v = float(np.exp(np.clip(x[k], *self.log_v_bounds)))
            k += 1
        a = self.fixed_airlight
        if self.mode.estimates_airlight:
            a = _sigmoid(x[k : k + 3])
        return z, r, a, v

    def evaluate(self, x):
        z, r, a, v = self.unpack(x)
        loss, grad = total_loss_grad(self.hazy, self.clear, r, a, v, self.epsilon, self.config.weights)
        parts = [(grad.ranges[0] * self.scale * _sigmoid(z)).ravel()]
        if self.mode.estimates_visibility:
            parts.append([grad.visibility * v])
        if self.mode.estimates_airlight:
            parts.append(grad.airlight * a * (1 - a))
        return loss, np.concatenate(parts)


def _solve(problem, x0, config):
    opt = _Adam(config.step_size)
    x = x0.copy()
    loss, g = problem.evaluate(x)
    best = (loss.total, x.copy(), loss)
    trace = [loss.total]
    lr_scale = 1.0
    converged = False
    it = 0
    opt.observe(g)
    for it in range(1, config.max_iters + 1):
        proposal = x - lr_scale * opt.lr * opt.direction()
        new_loss, new_g = problem.evaluate(proposal)
        if it <= config.warmup or new_loss.total <= loss.total:
            x, loss, g = proposal, new_loss, new_g
            opt.observe(g)
            lr_scale = min(1.0, lr_scale * 1.1)
            if loss.total < best[0]:
                best = (loss.total, x.copy(), loss)
        else:
            lr_scale *= 0.5
        trace.append(loss.total)
        if it > config.warmup + config.patience:
            past = trace[-config.patience - 1]
            if abs(past - trace[-1]) <= config.tol * max(abs(trace[-1]), 1e-12):
                converged = True
                break
    return best, trace, converged, it


def decompose(
    hazy,
    clear,
    epsilon=DEFAULT_EPSILON,
    mode=DecomposeMode.FULL,
    known=None,
    config: SolverConfig | None = None,
    range_anchor=None,
    d_ref=None,
) -> DecomposeResult:
    """Recover range, airlight and visibility from a hazy/clear image pair.

    ``known`` is a mapping with ``airlight`` and/or ``visibility``; it must
    supply exactly what ``mode`` holds fixed. See the module docstring for how
    ``range_anchor`` and ``d_ref`` pin the range/visibility scale.
    Non-convergence is reported through ``converged=False``.
    """
    config = config or SolverConfig()
    mode = DecomposeMode(mode)
    hazy, clear = _check_inputs(hazy, clear)
    if not 0 < epsilon < 1:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    has_a = _known_value(known, "airlight") is not None
    has_v = _known_value(known, "visibility") is not None
    if has_a != (not mode.estimates_airlight) or has_v != (not mode.estimates_visibility):
        raise InputError(
            f"mode {mode.value} needs known airlight={not mode.estimates_airlight}, "
            f"visibility={not mode.estimates_visibility}; got airlight={has_a}, visibility={has_v}"
        )
    if has_v and not float(known["visibility"]) > 0:
        raise DomainError("known visibility must be positive")

    init = coarse_init(hazy, clear, epsilon, known, range_anchor, d_ref, config.t_min, refine=config.refine_airlight)
    range0 = _warm_start(hazy, clear, init, epsilon, config.t_min)
    scale = float(np.median(range0))
    problem = _Problem(hazy, clear, epsilon, mode, init.airlight, init.visibility, scale, config)
    x0 = problem.pack(range0, init.airlight, init.visibility)
    (best_total, x_best, best_loss), trace, converged, iters = _solve(problem, x0, config)
    _, r, a, v = problem.unpack(x_best)
    r = r.copy()
    a = np.asarray(a, dtype=float).copy()

    beta = -np.log(epsilon) / v
    mask = identifiable_pixels(clear, a) & (np.exp(-beta * r) >= epsilon)
    gauge = "known-visibility"
    if mode.estimates_visibility:
        factor = _anchor_factor(r.shape, r, range_anchor, mask) if range_anchor is not None else None
        if factor is not None:
            gauge = "range-anchor"
        else:
            # the visibility cut in ``mask`` would cap max R at V, so the
            # maximum is taken over every pixel with usable contrast instead
            target = float(d_ref) if d_ref is not None else 1.0
            support = identifiable_pixels(clear, a)
            factor = target / float(r[support].max())
            gauge = "max-range"
        # loss is invariant along this direction: R / V is unchanged
        r *= factor
        v *= factor
    log.debug("decompose mode=%s iters=%d loss=%.6g converged=%s", mode.value, iters, best_total, converged)
    return DecomposeResult(
        range=r,
        airlight=a,
        visibility=float(v),
        loss_trace=trace,
        converged=converged,
        identifiability_mask=mask,
        final_loss=best_loss,
        iterations=iters,
        gauge=gauge,
    )
