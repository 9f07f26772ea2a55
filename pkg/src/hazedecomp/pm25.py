"""Polynomial calibration from relative visibility to PM2.5 concentration,
optionally stratified by relative humidity."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, IngestionError, InputError, SingularFitError
from .metrics import eval_scalar

CSV_COLUMNS = ("visibility", "pm25", "relative_humidity")
DEFAULT_RH_BINS = (0.0, 0.5, 0.7, 0.9, 1.0)


class EmptyBinWarning(UserWarning):
    """A humidity bin received no samples and was skipped."""


@dataclass(frozen=True)
class Pm25Sample:
    visibility: float  # relative, (0, 1]
    pm25: float  # ug/m3
    relative_humidity: float = 0.0  # fraction, [0, 1]

    def __post_init__(self):
        if not 0 < self.visibility <= 1:
            raise DomainError(f"relative visibility must lie in (0, 1], got {self.visibility}")
        if not (self.pm25 >= 0 and math.isfinite(self.pm25)):
            raise DomainError(f"PM2.5 must be finite and non-negative, got {self.pm25}")
        if not 0 <= self.relative_humidity <= 1:
            raise DomainError(f"relative humidity must lie in [0, 1], got {self.relative_humidity}")


@dataclass(frozen=True)
class Pm25Model:
    coefficients: tuple  # c_0 .. c_k, ascending powers of visibility
    humidity_bin: tuple | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if not coeffs:
            raise InputError("a model needs at least one coefficient")
        if not all(math.isfinite(c) for c in coeffs):
            raise DomainError("model coefficients must be finite")
        object.__setattr__(self, "coefficients", coeffs)
        if self.humidity_bin is not None:
            object.__setattr__(self, "humidity_bin", tuple(float(e) for e in self.humidity_bin))

    @property
    def order(self):
        return len(self.coefficients) - 1

    def to_dict(self):
        return {
            "coefficients": list(self.coefficients),
            "order": self.order,
            "humidity_bin": None if self.humidity_bin is None else list(self.humidity_bin),
            "diagnostics": dict(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            coeffs = data["coefficients"]
        except (KeyError, TypeError):
            raise InputError("model document lacks 'coefficients'") from None
        if "order" in data and int(data["order"]) != len(coeffs) - 1:
            raise InputError(f"order {data['order']} disagrees with {len(coeffs)} coefficients")
        return cls(tuple(coeffs), data.get("humidity_bin"), dict(data.get("diagnostics") or {}))


@dataclass(frozen=True)
class Pm25Prediction:
    value: object  # clamped concentration, float or array
    raw: object  # polynomial value before clamping
    clamped: object  # True where the raw polynomial was negative


def _arrays(samples):
    if not samples:
        raise SingularFitError("no samples to fit")
    v = np.array([s.visibility for s in samples], dtype=np.float64)
    rho = np.array([s.pm25 for s in samples], dtype=np.float64)
    return v, rho


def vandermonde(v, order):
    return np.vander(np.asarray(v, dtype=np.float64), order + 1, increasing=True)


def horner(coefficients, v):
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros_like(v)
    for c in reversed(coefficients):
        out = out * v + c
    return out


def fit_pm25(samples, order: int, humidity_bin=None) -> Pm25Model:
    """Least-squares polynomial of degree ``order`` through (visibility, pm25),
    solved by QR on the Vandermonde matrix."""
    if order < 0:
        raise InputError(f"order must be >= 0, got {order}")
    v, rho = _arrays(samples)
    distinct = np.unique(v).size
    if distinct < order + 1:
        raise SingularFitError(
            f"order {order} needs at least {order + 1} distinct visibilities, got {distinct} "
            f"among {v.size} samples"
        )
    X = vandermonde(v, order)
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    if diag.min() <= diag.max() * max(X.shape) * np.finfo(float).eps:
        raise SingularFitError(f"Vandermonde system of order {order} is numerically rank deficient")
    coeffs = np.linalg.solve(r, q.T @ rho)
    fitted = X @ coeffs
    diagnostics = eval_scalar(fitted, rho, mape=bool(np.all(rho > 0)))
    diagnostics["sse"] = float(np.sum((fitted - rho) ** 2))
    diagnostics["n_samples"] = int(v.size)
    return Pm25Model(tuple(coeffs), humidity_bin, diagnostics)


def predict_pm25(model: Pm25Model, visibility) -> Pm25Prediction:
    """Evaluate the polynomial and clamp negative concentrations to 0, flagging them."""
    v = np.asarray(visibility, dtype=np.float64)
    if np.any(~(v > 0)) or np.any(v > 1):
        raise DomainError("relative visibility must lie in (0, 1]")
    raw = horner(model.coefficients, v)
    clamped = raw < 0
    value = np.where(clamped, 0.0, raw)
    if v.ndim == 0:
        return Pm25Prediction(float(value), float(raw), bool(clamped))
    return Pm25Prediction(value, raw, clamped)


def _check_edges(edges):
    edges = [float(e) for e in edges]
    if len(edges) < 2:
        raise InputError("need at least two bin edges")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise InputError(f"bin edges must be strictly increasing, got {edges}")
    if edges[0] < 0 or edges[-1] > 1:
        raise InputError(f"bin edges must lie in [0, 1], got {edges}")
    return edges


def assign_bins(humidity, edges):
    """Index of the half-open bin [lo, hi) holding each humidity; the top
    edge is inclusive when it is 1. Returns -1 outside all bins."""
    edges = _check_edges(edges)
    h = np.asarray(humidity, dtype=np.float64)
    idx = np.searchsorted(edges, h, side="right") - 1
    idx = np.where((h == edges[-1]) & (edges[-1] == 1.0), len(edges) - 2, idx)
    return np.where((idx < 0) | (idx >= len(edges) - 1), -1, idx)


def stratified_fit(samples, bin_edges=DEFAULT_RH_BINS, order: int = 3) -> list:
    """One model per humidity bin with samples; empty bins are skipped and
    reported through an :class:`EmptyBinWarning`."""
    edges = _check_edges(bin_edges)
    idx = assign_bins([s.relative_humidity for s in samples], edges)
    models = []
    for b, (lo, hi) in enumerate(zip(edges, edges[1:])):
        members = [s for s, i in zip(samples, idx) if i == b]
        if not members:
            warnings.warn(f"humidity bin [{lo}, {hi}) has no samples; skipped", EmptyBinWarning, stacklevel=2)
            continue
        models.append(fit_pm25(members, order, humidity_bin=(lo, hi)))
    return models


def load_samples_csv(path) -> list:
    path = Path(path)
    try:
        with path.open(newline="") as f:
            reader = csv.DictReader(f)
            missing = [c for c in CSV_COLUMNS[:2] if c not in (reader.fieldnames or [])]
            if missing:
                raise IngestionError(f"{path}: missing columns {missing}", [str(path)])
            rows = list(reader)
    except OSError as exc:
        raise IngestionError(f"{path}: {exc}", [str(path)]) from None
    samples = []
    for line, row in enumerate(rows, start=2):
        try:
            samples.append(
                Pm25Sample(
                    float(row["visibility"]),
                    float(row["pm25"]),
                    float(row.get("relative_humidity") or 0.0),
                )
            )
        except ValueError as exc:
            raise IngestionError(f"{path}:{line}: {exc}", [f"{path}:{line}"]) from None
    return samples


def save_samples_csv(path, samples) -> None:
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for s in samples:
            writer.writerow([repr(s.visibility), repr(s.pm25), repr(s.relative_humidity)])
