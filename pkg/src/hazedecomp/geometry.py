"""Pinhole back-projection: z-depth maps to range (ray length) maps and back.

Pixel (i, j) is sampled at its centre, i.e. the homogeneous image point
(j + 0.5, i + 0.5, 1). Skew is not supported.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if not (np.isfinite(self.fx) and np.isfinite(self.fy) and self.fx > 0 and self.fy > 0):
            raise InputError(f"focal lengths must be finite and positive, got fx={self.fx}, fy={self.fy}")
        if not (np.isfinite(self.cx) and np.isfinite(self.cy)):
            raise InputError("principal point must be finite")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def load(cls, path) -> "CameraIntrinsics":
        with open(path) as f:
            doc = json.load(f)
        try:
            return cls(
                fx=float(doc["fx"]),
                fy=float(doc["fy"]),
                cx=float(doc["cx"]),
                cy=float(doc["cy"]),
                width=int(doc["width"]) if doc.get("width") is not None else None,
                height=int(doc["height"]) if doc.get("height") is not None else None,
            )
        except KeyError as exc:
            raise InputError(f"{path}: intrinsics missing key {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    def check_size(self, height: int, width: int) -> None:
        if self.width is not None and self.width != width or self.height is not None and self.height != height:
            raise InputError(
                f"intrinsics were calibrated for {self.width}x{self.height}, image is {width}x{height}"
            )


def ray_norms(shape, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Per-pixel ``||K^-1 p||`` for pixel-centre sampling; >= 1 everywhere."""
    height, width = shape
    u = (np.arange(width) + 0.5 - intrinsics.cx) / intrinsics.fx
    v = (np.arange(height) + 0.5 - intrinsics.cy) / intrinsics.fy
    return np.sqrt(u[None, :] ** 2 + v[:, None] ** 2 + 1.0)


def _check_field(field, name):
    field = np.asarray(field, dtype=np.float64)
    if field.ndim == 3 and field.shape[2] == 1:
        field = field[..., 0]
    if field.ndim != 2 or field.size == 0:
        raise InputError(f"{name} must be a non-empty HxW field, got shape {field.shape}")
    if not np.all(np.isfinite(field)):
        raise InputError(f"{name} contains non-finite values")
    if np.any(field < 0):
        raise InputError(f"{name} contains negative values")
    return field


def depth_to_range(depth, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Convert a z-depth map (metres) into a range map by back-projecting
    each pixel and taking the Euclidean norm of the 3-D point."""
    depth = _check_field(depth, "depth")
    return depth * ray_norms(depth.shape, intrinsics)


def range_to_depth(range_map, intrinsics: CameraIntrinsics) -> np.ndarray:
    range_map = _check_field(range_map, "range")
    return range_map / ray_norms(range_map.shape, intrinsics)
