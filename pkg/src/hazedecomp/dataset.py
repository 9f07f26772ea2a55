"""Build a multi-visibility haze dataset from clear images and depth maps.

Every (image, scale) pair becomes one sample: a hazy image, a JSON sidecar
with the generating parameters, and a manifest record. Each sample draws its
airlight from ``default_rng([seed, sample_index])`` so results do not depend
on processing order or on ``jobs``.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .errors import DomainError, IngestionError, InputError, ShapeError
from .geometry import CameraIntrinsics, depth_to_range
from .scattering import DEFAULT_EPSILON, AirlightFamily, ScatteringParams, sample_airlight, synthesize_haze

MANIFEST_NAME = "manifest.json"
DEFAULT_SCALES = (0.1, 0.3, 0.5, 0.8, 1.0)


@dataclass(frozen=True)
class AirlightSpec:
    """Either a fixed colour, one family, or ``random`` (family drawn per sample)."""

    family: AirlightFamily | None = None
    colour: tuple | None = None

    @classmethod
    def parse(cls, text: str) -> "AirlightSpec":
        text = text.strip()
        if text.lower() == "random":
            return cls()
        if "," in text:
            try:
                colour = tuple(float(c) for c in text.split(","))
            except ValueError:
                raise InputError(f"cannot parse airlight colour {text!r}") from None
            if len(colour) != 3 or not all(0 <= c <= 1 for c in colour):
                raise InputError(f"airlight colour needs three values in [0, 1], got {text!r}")
            return cls(colour=colour)
        return cls(family=AirlightFamily.parse(text))

    def draw(self, rng):
        if self.colour is not None:
            return None, np.array(self.colour)
        families = list(AirlightFamily)
        family = self.family or families[int(rng.integers(len(families)))]
        return family, sample_airlight(family, int(rng.integers(2**31)))

    def __str__(self):
        if self.colour is not None:
            return ",".join(repr(c) for c in self.colour)
        return self.family.value if self.family else "random"


@dataclass
class Manifest:
    records: list

    def to_dict(self):
        return io.report("synthesize", samples=self.records)

    def counts_by_scale(self):
        counts = {}
        for rec in self.records:
            counts[rec["visibility_rel"]] = counts.get(rec["visibility_rel"], 0) + 1
        return counts

    @classmethod
    def load(cls, path):
        doc = io.read_json(path)
        if not isinstance(doc, dict) or "samples" not in doc:
            raise IngestionError(f"{path}: not a sample manifest", [str(path)])
        return cls(list(doc["samples"]))


def pair_inputs(clear_dir, depth_dir):
    """Match clear images to depth maps by file stem."""
    clear = {p.stem: p for p in io.list_images(clear_dir)}
    depth = {p.stem: p for p in io.list_images(depth_dir)}
    offenders = sorted(str(clear[s]) for s in clear.keys() - depth.keys())
    offenders += sorted(str(depth[s]) for s in depth.keys() - clear.keys())
    if offenders:
        raise IngestionError(f"{len(offenders)} file(s) have no partner: " + ", ".join(offenders), offenders)
    return [(stem, clear[stem], depth[stem]) for stem in sorted(clear)]


def scale_tag(v_rel: float) -> str:
    return f"v{v_rel:.3f}".replace(".", "p")


def _check_scales(scales):
    scales = [float(s) for s in scales]
    bad = [s for s in scales if not 0 < s <= 1]
    if bad:
        raise DomainError(f"relative visibilities must lie in (0, 1], got {bad}")
    if len(set(scales)) != len(scales):
        raise InputError(f"duplicate scales in {scales}")
    return scales


def _process_image(job):
    (image_index, stem, clear_path, depth_path, intrinsics, scales, epsilon, airlight, seed, out_dir, d_ref, fmt) = job
    out_dir = Path(out_dir)
    clear = io.read_image(clear_path)
    depth = io.read_depth(depth_path)
    if depth.shape != clear.shape[:2]:
        raise ShapeError(f"{depth_path}: depth {depth.shape} does not match image {clear.shape[:2]}")
    intrinsics.check_size(*depth.shape)
    valid = depth > 0
    if not valid.any():
        raise IngestionError(f"{depth_path}: no valid depth", [str(depth_path)])
    range_map = depth_to_range(depth, intrinsics)
    ref = float(d_ref) if d_ref is not None else float(range_map[valid].max())
    # pixels without a depth return (sky) are treated as infinitely far
    synth_range = np.where(valid, range_map, np.inf)
    range_path = out_dir / "range" / f"{stem}.pfm"
    io.write_pfm(range_path, range_map)

    records = []
    suffix = ".pfm" if fmt == "pfm" else ".png"
    for scale_index, v_rel in enumerate(scales):
        sample_index = image_index * len(scales) + scale_index
        rng = np.random.default_rng([seed, sample_index])
        family, colour = airlight.draw(rng)
        sample_id = f"{stem}_{scale_tag(v_rel)}"
        if v_rel == 1.0:
            # relative visibility 1 stands for a clear day
            params = ScatteringParams(tuple(colour), math.inf, epsilon)
            hazy = clear
        else:
            params = ScatteringParams(tuple(colour), v_rel * ref, epsilon)
            t = np.exp(-params.beta * synth_range)
            hazy = np.clip(clear * t[..., None] + np.asarray(params.airlight) * (1 - t[..., None]), 0, 1)
        hazy_path = out_dir / "hazy" / f"{sample_id}{suffix}"
        io.write_image(hazy_path, hazy)
        sidecar = {
            "id": sample_id,
            "V_abs": params.visibility,
            "V_rel": v_rel,
            "A": list(params.airlight),
            "epsilon": epsilon,
            "d_ref": ref,
            "airlight_family": family.value if family else None,
            "seed": seed,
            "sample_index": sample_index,
            "source_clear": str(clear_path),
            "source_depth": str(depth_path),
        }
        sidecar_path = out_dir / "hazy" / f"{sample_id}.json"
        io.write_json(sidecar_path, sidecar)
        records.append(
            {
                "id": sample_id,
                "hazy": str(hazy_path),
                "sidecar": str(sidecar_path),
                "clear": str(clear_path),
                "depth": str(depth_path),
                "range": str(range_path),
                "airlight": list(params.airlight),
                "visibility": params.visibility,
                "visibility_rel": v_rel,
                "epsilon": epsilon,
                "d_ref": ref,
                "seed": seed,
            }
        )
    return records


def make_visibility_dataset(
    clear_dir,
    depth_dir,
    intrinsics: CameraIntrinsics,
    scales=DEFAULT_SCALES,
    epsilon: float = DEFAULT_EPSILON,
    airlight_spec="random",
    seed: int = 0,
    out_dir="out",
    d_ref=None,
    fmt: str = "png",
    jobs: int = 1,
) -> Manifest:
    """Render every clear image at every relative visibility in ``scales``.

    ``d_ref`` converts relative to absolute visibility (``V = V_rel * d_ref``);
    by default it is the largest valid range of each image. Scale 1 emits the
    clear image unchanged. Depth pixels equal to 0 are treated as infinitely
    far and render as pure airlight.
    """
    scales = _check_scales(scales)
    if not 0 < epsilon < 1:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    if fmt not in ("png", "pfm"):
        raise InputError(f"unknown output format {fmt!r}")
    if d_ref is not None and not d_ref > 0:
        raise DomainError(f"d_ref must be positive, got {d_ref}")
    airlight = airlight_spec if isinstance(airlight_spec, AirlightSpec) else AirlightSpec.parse(str(airlight_spec))
    pairs = pair_inputs(clear_dir, depth_dir)
    out_dir = Path(out_dir)
    records = []
    if scales:
        (out_dir / "hazy").mkdir(parents=True, exist_ok=True)
        (out_dir / "range").mkdir(parents=True, exist_ok=True)
        work = [
            (i, stem, cp, dp, intrinsics, scales, epsilon, airlight, seed, str(out_dir), d_ref, fmt)
            for i, (stem, cp, dp) in enumerate(pairs)
        ]
        if jobs > 1 and len(work) > 1:
            with ProcessPoolExecutor(max_workers=min(jobs, os.cpu_count() or 1, len(work))) as pool:
                for recs in pool.map(_process_image, work):
                    records.extend(recs)
        else:
            for job in work:
                records.extend(_process_image(job))
    manifest = Manifest(records)
    out_dir.mkdir(parents=True, exist_ok=True)
    io.write_json(out_dir / MANIFEST_NAME, manifest.to_dict())
    return manifest
