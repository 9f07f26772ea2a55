"""File formats: PFM float maps, 8/16-bit PNG images, PNG16 depth maps with a
scale sidecar, and JSON documents for sidecars, manifests and reports."""
from __future__ import annotations

import json
import math
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import IngestionError

REPORT_SCHEMA = "hazedecomp.report/1"
DEFAULT_DEPTH_SCALE = 256
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".pfm")


# -- PFM ---------------------------------------------------------------------------


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into an (H, W) or (H, W, 3) float32 array, top row first."""
    with open(path, "rb") as f:
        header = f.readline().decode("latin-1").rstrip()
        if header == "PF":
            channels = 3
        elif header == "Pf":
            channels = 1
        else:
            raise IngestionError(f"{path}: not a PFM file", [str(path)])
        dims = f.readline().decode("latin-1")
        while dims.startswith("#"):
            dims = f.readline().decode("latin-1")
        match = re.match(r"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not match:
            raise IngestionError(f"{path}: malformed PFM header", [str(path)])
        width, height = map(int, match.groups())
        scale = float(f.readline().decode("latin-1").strip())
        endian = "<" if scale < 0 else ">"
        data = np.fromfile(f, dtype=endian + "f4", count=width * height * channels)
    if data.size != width * height * channels:
        raise IngestionError(f"{path}: truncated PFM payload", [str(path)])
    shape = (height, width, 3) if channels == 3 else (height, width)
    # rows are stored bottom to top
    return np.flipud(data.reshape(shape)).astype(np.float32)


def write_pfm(path, array) -> None:
    """Write little-endian PFM (scale -1.0); accepts (H, W), (H, W, 1) or (H, W, 3)."""
    array = np.asarray(array, dtype=np.float32)
    if array.ndim == 3 and array.shape[2] == 1:
        array = array[..., 0]
    if array.ndim == 2:
        header = "Pf"
    elif array.ndim == 3 and array.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError(f"cannot store array of shape {array.shape} as PFM")
    height, width = array.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{header}\n{width} {height}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(np.flipud(array)).astype("<f4").tobytes())


# -- images ------------------------------------------------------------------------


def read_image(path) -> np.ndarray:
    """Read an RGB image as float64 (H, W, 3) in [0, 1]. 8-bit data is divided
    by 255 and 16-bit data by 65535; no gamma handling."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        img = read_pfm(path).astype(np.float64)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        return img
    try:
        with Image.open(path) as im:
            mode = im.mode
            arr = np.array(im)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"{path}: cannot read image ({exc})", [str(path)]) from None
    if arr.dtype == np.uint8:
        img = arr.astype(np.float64) / 255.0
    elif arr.dtype in (np.uint16, np.int32) or mode.startswith("I"):
        img = arr.astype(np.float64) / 65535.0
    else:
        img = arr.astype(np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return img[..., :3]


def write_png(path, image) -> None:
    """Quantise an image in [0, 1] to 8 bits per channel."""
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(image * 255.0).astype(np.uint8)).save(path, optimize=False)


def write_image(path, image) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        write_pfm(path, image)
    else:
        write_png(path, image)


def write_mask(path, mask) -> None:
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im.convert("L")) > 127


# -- depth -------------------------------------------------------------------------


def depth_sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def read_depth(path) -> np.ndarray:
    """Read a depth or range map in metres. PFM is taken as is; a 16-bit PNG is
    divided by the integer ``scale`` from its ``<stem>.json`` sidecar (256 if
    the sidecar is absent). Zero PNG values mean "no measurement" and map to 0."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        data = read_pfm(path).astype(np.float64)
        return data[..., 0] if data.ndim == 3 else data
    scale = DEFAULT_DEPTH_SCALE
    sidecar = depth_sidecar_path(path)
    if sidecar.exists():
        scale = int(json.loads(sidecar.read_text()).get("scale", DEFAULT_DEPTH_SCALE))
    try:
        with Image.open(path) as im:
            raw = np.array(im)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"{path}: cannot read depth map ({exc})", [str(path)]) from None
    if raw.ndim == 3:
        raw = raw[..., 0]
    return raw.astype(np.float64) / float(scale)


def write_depth_png16(path, depth, scale: int = DEFAULT_DEPTH_SCALE) -> None:
    path = Path(path)
    raw = np.round(np.asarray(depth, dtype=np.float64) * scale)
    if raw.max(initial=0) > 65535:
        raise ValueError(f"depth {raw.max() / scale:.1f} m does not fit 16 bits at scale {scale}")
    Image.fromarray(raw.astype(np.uint16)).save(path)
    depth_sidecar_path(path).write_text(json.dumps({"scale": int(scale)}) + "\n")


# -- JSON --------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, non-finite floats as null."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"{path}: cannot read JSON ({exc})", [str(path)]) from None


def report(command: str, **fields) -> dict:
    return {"schema": REPORT_SCHEMA, "command": command, **fields}


def list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise IngestionError(f"{directory} is not a directory", [str(directory)])
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
