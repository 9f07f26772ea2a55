"""Procedural test scenes: textured clear images over smooth, road-like range
fields, rendered through haze with known parameters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .scattering import DEFAULT_EPSILON, AirlightFamily, ScatteringParams, sample_airlight, synthesize_haze


@dataclass
class SyntheticScene:
    clear: np.ndarray
    range: np.ndarray
    hazy: np.ndarray
    params: ScatteringParams
    visibility_rel: float
    d_ref: float
    family: AirlightFamily

    @property
    def airlight(self):
        return np.asarray(self.params.airlight)

    @property
    def visibility(self):
        return self.params.visibility


def _smooth_noise(rng, shape, sigma):
    n = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return (n - n.mean()) / (n.std() + 1e-12)


def textured_image(rng, height, width):
    """Colour texture in [0, 1]: blotchy regions plus fine detail."""
    base = np.stack([_smooth_noise(rng, (height, width), max(height, width) / 12) for _ in range(3)], axis=2)
    detail = np.stack([_smooth_noise(rng, (height, width), 1.0) for _ in range(3)], axis=2)
    img = 0.45 + 0.22 * base + 0.12 * detail
    return np.clip(img, 0.0, 1.0)


def road_range(rng, height, width, near=3.0, far=80.0):
    """Range that grows geometrically from the bottom row to the top row,
    with gentle smooth lateral variation."""
    rows = np.linspace(1.0, 0.0, height)[:, None]
    log_r = np.log(near) + (np.log(far) - np.log(near)) * (1.0 - rows) ** 1.5
    log_r = log_r + 0.15 * _smooth_noise(rng, (height, width), max(height, width) / 8)
    return np.clip(np.exp(log_r), near * 0.5, far)


def make_scene(
    height=64,
    width=192,
    seed=0,
    visibility_rel=None,
    family=None,
    epsilon=DEFAULT_EPSILON,
    near=3.0,
    far=80.0,
) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    clear = textured_image(rng, height, width)
    rng_range = road_range(rng, height, width, near, far)
    if visibility_rel is None:
        visibility_rel = float(rng.uniform(0.1, 1.0))
    if family is None:
        family = list(AirlightFamily)[int(rng.integers(len(AirlightFamily)))]
    elif not isinstance(family, AirlightFamily):
        family = AirlightFamily.parse(family)
    airlight = sample_airlight(family, int(rng.integers(2**31)))
    d_ref = float(rng_range.max())
    params = ScatteringParams(tuple(airlight), visibility_rel * d_ref, epsilon)
    hazy = synthesize_haze(clear, rng_range, params)
    return SyntheticScene(clear, rng_range, hazy, params, float(visibility_rel), d_ref, family)


def flat_scene(height=8, width=8, airlight=(0.8, 0.8, 0.8), range_value=20.0, visibility=40.0, epsilon=DEFAULT_EPSILON):
    """Scene whose clear image equals the airlight everywhere, over constant
    range: haze leaves it unchanged, so range carries no signal."""
    params = ScatteringParams(tuple(airlight), visibility, epsilon)
    clear = np.broadcast_to(np.asarray(params.airlight), (height, width, 3)).copy()
    rng_range = np.full((height, width), float(range_value))
    hazy = synthesize_haze(clear, rng_range, params)
    return SyntheticScene(clear, rng_range, hazy, params, visibility / range_value, float(range_value), None)
