"""Koschmieder-law haze formation and its inverse.

Images are float arrays of shape (H, W, 3) holding linear intensities in
[0, 1]; range maps are (H, W) arrays in metres. Transmission follows
``T = exp(-beta * R)`` with ``beta = -ln(epsilon) / V``, so a black object at
range V is seen with contrast exactly epsilon against the airlight.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DomainError, InputError, LowTransmissionError, ShapeError

DEFAULT_EPSILON = 0.05
AIRLIGHT_JITTER = 0.05


class AirlightFamily(Enum):
    WHITE = "white"
    BLUE_GREY = "blue-grey"
    YELLOW = "yellow"
    GREY = "grey"
    SEPIA = "sepia"

    @property
    def base(self) -> np.ndarray:
        return np.array(_FAMILY_BASES[self])

    @classmethod
    def parse(cls, name: str) -> "AirlightFamily":
        key = name.strip().lower().replace("_", "-").replace(" ", "-")
        if key in ("blue-gray", "bluegrey", "bluegray"):
            key = "blue-grey"
        if key == "gray":
            key = "grey"
        try:
            return cls(key)
        except ValueError:
            raise InputError(f"unknown airlight family {name!r}; choose from {[f.value for f in cls]}") from None


_FAMILY_BASES = {
    AirlightFamily.WHITE: (0.95, 0.95, 0.95),
    AirlightFamily.BLUE_GREY: (0.75, 0.78, 0.82),
    AirlightFamily.YELLOW: (0.85, 0.80, 0.60),
    AirlightFamily.GREY: (0.70, 0.70, 0.70),
    AirlightFamily.SEPIA: (0.70, 0.60, 0.45),
}


@dataclass(frozen=True)
class ScatteringParams:
    """Airlight colour, visibility (metres) and minimal observable contrast.

    ``visibility=math.inf`` is accepted and means no attenuation at all.
    """

    airlight: tuple
    visibility: float
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        airlight = tuple(float(a) for a in np.broadcast_to(np.asarray(self.airlight, dtype=float), (3,)))
        object.__setattr__(self, "airlight", airlight)
        if not all(0.0 <= a <= 1.0 for a in airlight):
            raise DomainError(f"airlight components must lie in [0, 1], got {airlight}")
        extinction_coefficient(self.visibility, self.epsilon)

    @property
    def beta(self) -> float:
        return extinction_coefficient(self.visibility, self.epsilon)


def extinction_coefficient(visibility: float, epsilon: float = DEFAULT_EPSILON) -> float:
    if not 0.0 < epsilon < 1.0:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not visibility > 0:
        raise DomainError(f"visibility must be positive, got {visibility}")
    if math.isinf(visibility):
        return 0.0
    return -math.log(epsilon) / visibility


def as_image(image, name="image") -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] * image.shape[1] == 0:
        raise ShapeError(f"{name} must have shape (H, W, 3), got {image.shape}")
    if not np.all(np.isfinite(image)):
        raise InputError(f"{name} contains non-finite values")
    return image


def as_field(field, name="range") -> np.ndarray:
    field = np.asarray(field, dtype=np.float64)
    if field.ndim == 3 and field.shape[2] == 1:
        field = field[..., 0]
    if field.ndim != 2 or field.size == 0:
        raise ShapeError(f"{name} must have shape (H, W), got {field.shape}")
    if not np.all(np.isfinite(field)):
        raise InputError(f"{name} contains non-finite values")
    return field


def _check_pair(image, range_map):
    if image.shape[:2] != range_map.shape:
        raise ShapeError(f"image is {image.shape[:2]} but range map is {range_map.shape}")


def transmission_map(range_map, beta: float) -> np.ndarray:
    range_map = as_field(range_map)
    if beta < 0 or not np.isfinite(beta):
        raise DomainError(f"extinction coefficient must be a finite non-negative number, got {beta}")
    if np.any(range_map < 0):
        raise DomainError("range map contains negative values")
    return np.exp(-beta * range_map)


def synthesize_haze(clear, range_map, params: ScatteringParams) -> np.ndarray:
    """Render the hazy observation of ``clear`` seen through homogeneous haze."""
    clear = as_image(clear, "clear")
    range_map = as_field(range_map)
    _check_pair(clear, range_map)
    t = transmission_map(range_map, params.beta)[..., None]
    airlight = np.asarray(params.airlight)
    # A + (I - A) T reproduces A exactly where I == A; T == 1 passes I through
    out = np.where(t == 1.0, clear, airlight + (clear - airlight) * t)
    return np.clip(out, 0.0, 1.0)


@dataclass
class DehazeResult:
    image: np.ndarray
    clamped_pixels: int
    low_transmission: np.ndarray = field(repr=False)


def invert_haze(hazy, range_map, params: ScatteringParams, t_min: float = 1e-3, clamp: bool = False) -> DehazeResult:
    """Recover the clear image from a hazy one given range and scattering
    parameters: ``I' = (I - A (1 - T)) / T``.

    Pixels with ``T < t_min`` raise :class:`LowTransmissionError` unless
    ``clamp`` is set, in which case T is floored at ``t_min`` and the pixels are
    reported in ``low_transmission``. ``clamped_pixels`` counts outputs that
    had to be clipped back into [0, 1].
    """
    hazy = as_image(hazy, "hazy")
    range_map = as_field(range_map)
    _check_pair(hazy, range_map)
    t = transmission_map(range_map, params.beta)
    low = t < t_min
    if np.any(low):
        if not clamp:
            raise LowTransmissionError(
                f"{int(low.sum())} pixels have transmission below t_min={t_min}; pass clamp=True to floor them"
            )
        t = np.maximum(t, t_min)
    airlight = np.asarray(params.airlight)
    t = t[..., None]
    raw = np.where(t == 1.0, hazy, airlight + (hazy - airlight) / t)
    out = np.clip(raw, 0.0, 1.0)
    clamped = int(np.any(np.abs(out - raw) > 1e-12, axis=2).sum())
    return DehazeResult(out, clamped, low)


def contrast_map(image, airlight) -> np.ndarray:
    """Signed per-channel contrast ``(I - A) / A`` against the airlight."""
    image = as_image(image)
    airlight = np.broadcast_to(np.asarray(airlight, dtype=np.float64), (3,))
    if np.any(airlight <= 0):
        raise DomainError(f"airlight channels must be positive to define contrast, got {airlight}")
    return (image - airlight) / airlight


def sample_airlight(family, seed: int, jitter: float = AIRLIGHT_JITTER) -> np.ndarray:
    if not isinstance(family, AirlightFamily):
        family = AirlightFamily.parse(family)
    rng = np.random.default_rng(seed)
    offset = rng.uniform(-jitter, jitter, size=3) if jitter > 0 else np.zeros(3)
    return np.clip(family.base + offset, 0.0, 1.0)
