"""Depth-map error metrics and scalar regression metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError, InputError, NoValidPixelsError, ShapeError

DELTA_BASE = 1.25
DEPTH_COLUMNS = ("abs_rel", "sq_rel", "rms", "rms_log", "delta_1", "delta_2", "delta_3")


@dataclass(frozen=True)
class DepthEvalConfig:
    min_depth: float = 1e-3
    max_depth: float = 80.0
    median_scaling: bool = False
    crop: tuple | None = None  # (top, bottom, left, right), half-open rows/cols

    def __post_init__(self):
        if not 0 < self.min_depth < self.max_depth:
            raise InputError(f"need 0 < min_depth < max_depth, got {self.min_depth}, {self.max_depth}")
        if self.crop is not None:
            top, bottom, left, right = self.crop
            if not (0 <= top < bottom and 0 <= left < right):
                raise InputError(f"invalid crop rectangle {self.crop}")


@dataclass(frozen=True)
class DepthEvalReport:
    abs_rel: float
    sq_rel: float
    rms: float
    rms_log: float
    delta_1: float
    delta_2: float
    delta_3: float
    valid_pixel_count: int

    def as_dict(self):
        return asdict(self)

    def row(self):
        return [getattr(self, name) for name in DEPTH_COLUMNS]


def _prepare(pred, gt, cfg):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} must be matching 2-D fields")
    if cfg.crop is not None:
        top, bottom, left, right = cfg.crop
        pred = pred[top:bottom, left:right]
        gt = gt[top:bottom, left:right]
    valid = np.isfinite(gt) & (gt > 0)
    if not valid.any():
        raise NoValidPixelsError("ground truth has no positive pixels to evaluate")
    p, g = pred[valid], gt[valid]
    if not np.all(np.isfinite(p)):
        raise DomainError("prediction is not finite on valid pixels")
    if cfg.median_scaling:
        med = np.median(p)
        if not med > 0:
            raise DomainError("median scaling needs a positive prediction median")
        p = p * (np.median(g) / med)
    p = np.clip(p, cfg.min_depth, cfg.max_depth)
    g = np.clip(g, cfg.min_depth, cfg.max_depth)
    return p, g


def eval_depth(pred, gt, cfg: DepthEvalConfig | None = None) -> DepthEvalReport:
    """Standard monocular-depth errors over pixels with ``gt > 0``.

    The accuracy terms count pixels with ``max(p/g, g/p) < 1.25**k``.
    """
    cfg = cfg or DepthEvalConfig()
    p, g = _prepare(pred, gt, cfg)
    ratio = np.maximum(p / g, g / p)
    diff = p - g
    return DepthEvalReport(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff**2 / g)),
        rms=float(np.sqrt(np.mean(diff**2))),
        rms_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta_1=float(np.mean(ratio < DELTA_BASE)),
        delta_2=float(np.mean(ratio < DELTA_BASE**2)),
        delta_3=float(np.mean(ratio < DELTA_BASE**3)),
        valid_pixel_count=int(p.size),
    )


def eval_scalar(preds, gts, mape=True) -> dict:
    """RMSE, MAE and MAPE (in percent) of paired scalar estimates."""
    preds = np.asarray(preds, dtype=np.float64).ravel()
    gts = np.asarray(gts, dtype=np.float64).ravel()
    if preds.size == 0 or preds.size != gts.size:
        raise ShapeError(f"need equal nonzero lengths, got {preds.size} and {gts.size}")
    err = preds - gts
    out = {"rmse": float(np.sqrt(np.mean(err**2))), "mae": float(np.mean(np.abs(err)))}
    if mape:
        zero = np.flatnonzero(gts == 0)
        if zero.size:
            raise DomainError(f"MAPE undefined: zero ground truth at indices {zero.tolist()}")
        out["mape"] = float(100.0 * np.mean(np.abs(err / gts)))
    return out
