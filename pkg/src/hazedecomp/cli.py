"""Command-line front end.

Exit codes: 0 success, 1 a verification (gradcheck) failed, 2 input error
(unreadable or unpaired files, bad arguments), 3 domain error (parameters
outside the model's validity, degenerate decompositions). Tabular results go
to stdout as tab-separated lines with a header; every command can also write
a JSON report carrying a versioned ``schema`` field.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .dataset import DEFAULT_SCALES, Manifest, make_visibility_dataset
from .decompose import DecomposeMode, SolverConfig, decompose
from .errors import DomainError, HazeError, IngestionError, InputError
from .geometry import CameraIntrinsics
from .gradcheck import GradCheckConfig, gradient_check
from .metrics import DEPTH_COLUMNS, DepthEvalConfig, eval_depth, eval_scalar
from .pm25 import Pm25Model, fit_pm25, load_samples_csv, predict_pm25, stratified_fit
from .scattering import DEFAULT_EPSILON, ScatteringParams, invert_haze
from .scenes import flat_scene, make_scene

log = logging.getLogger("hazedecomp")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INPUT, EXIT_DOMAIN = 0, 1, 2, 3


# -- argument helpers --------------------------------------------------------------


def float_list(text):
    text = text.strip()
    if not text:
        return []
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def crop_box(text):
    values = float_list(text)
    if len(values) != 4 or any(v != int(v) for v in values):
        raise argparse.ArgumentTypeError("crop needs four integers: top,bottom,left,right")
    return tuple(int(v) for v in values)


def emit(rows, header=None, out=None):
    out = out or sys.stdout
    if header:
        out.write("\t".join(header) + "\n")
    for row in rows:
        out.write("\t".join(_cell(c) for c in row) + "\n")
    out.flush()


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(_cell(v) for v in value)
    if value is None:
        return "-"
    return str(value)


def _write_report(path, doc):
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        io.write_json(path, doc)


def _paired_files(pred, gt):
    pred, gt = Path(pred), Path(gt)
    if pred.is_file() and gt.is_file():
        return [(pred.stem, pred, gt)]
    if pred.is_dir() and gt.is_dir():
        p = {f.stem: f for f in io.list_images(pred)}
        g = {f.stem: f for f in io.list_images(gt)}
        offenders = sorted(str(p[s]) for s in p.keys() - g.keys()) + sorted(str(g[s]) for s in g.keys() - p.keys())
        if offenders:
            raise IngestionError("unpaired prediction/ground-truth files", offenders)
        return [(s, p[s], g[s]) for s in sorted(p)]
    raise IngestionError("--pred and --gt must both be files or both be directories", [str(pred), str(gt)])


# -- synthesize ---------------------------------------------------------------------


def cmd_synthesize(args):
    intrinsics = CameraIntrinsics.load(args.intrinsics)
    manifest = make_visibility_dataset(
        args.clear_dir,
        args.depth_dir,
        intrinsics,
        scales=args.scales,
        epsilon=args.epsilon,
        airlight_spec=args.airlight,
        seed=args.seed,
        out_dir=args.out,
        d_ref=args.d_ref,
        fmt=args.format,
        jobs=args.jobs,
    )
    counts = manifest.counts_by_scale()
    emit([(v, counts.get(v, 0)) for v in args.scales] + [("total", len(manifest.records))], header=("scale", "count"))
    return EXIT_OK


# -- decompose ----------------------------------------------------------------------


def _known_for(mode, sidecar):
    known = {}
    if not mode.estimates_airlight:
        known["airlight"] = sidecar.get("A") if sidecar else None
    if not mode.estimates_visibility:
        known["visibility"] = sidecar.get("V_abs") if sidecar else None
    missing = [k for k, v in known.items() if v is None]
    if missing:
        raise InputError(f"mode {mode.value} needs known {', '.join(missing)} (pass a sidecar that records them)")
    return known or None


def _decompose_task(task):
    """Run one decomposition; never raises, failures are returned as data."""
    sample_id = task["id"]
    try:
        hazy = io.read_image(task["hazy"])
        clear = io.read_image(task["clear"])
        sidecar = io.read_json(task["sidecar"]) if task.get("sidecar") else None
        mode = DecomposeMode(task["mode"])
        epsilon = task["epsilon"] if task["epsilon"] is not None else (sidecar or {}).get("epsilon", DEFAULT_EPSILON)
        d_ref = task["d_ref"] if task["d_ref"] is not None else (sidecar or {}).get("d_ref")
        anchor = None
        if task.get("anchor"):
            anchor = io.read_depth(task["anchor"])
            anchor = np.where(anchor > 0, anchor, np.nan)
        elif task.get("anchor_points") and task.get("range"):
            truth = io.read_depth(task["range"])
            rng = np.random.default_rng([task["seed"], task["index"]])
            candidates = np.flatnonzero(truth.ravel() > 0)
            picks = rng.choice(candidates, size=min(task["anchor_points"], candidates.size), replace=False)
            anchor = np.full(truth.shape, np.nan)
            anchor.flat[picks] = truth.flat[picks]
        config = SolverConfig(max_iters=task["max_iters"], seed=task["seed"])
        result = decompose(
            hazy, clear, epsilon, mode, _known_for(mode, sidecar), config, range_anchor=anchor, d_ref=d_ref
        )
    except DomainError as exc:
        return {"id": sample_id, "status": "domain-error", "error": str(exc)}
    except (InputError, OSError) as exc:
        return {"id": sample_id, "status": "input-error", "error": str(exc)}

    out = Path(task["out"]) / sample_id
    out.mkdir(parents=True, exist_ok=True)
    io.write_pfm(out / "range.pfm", result.range)
    io.write_mask(out / "mask.png", result.identifiability_mask)
    params = {"id": sample_id, "mode": mode.value, "epsilon": epsilon, **result.summary()}
    truth = {}
    if sidecar:
        truth = {"visibility": sidecar.get("V_abs"), "airlight": sidecar.get("A")}
        params["truth"] = truth
    io.write_json(out / "params.json", params)
    record = {
        "id": sample_id,
        "status": "ok",
        "visibility": result.visibility,
        "airlight": [float(a) for a in result.airlight],
        "converged": result.converged,
        "iterations": result.iterations,
        "final_loss": result.final_loss.total,
        "truth": truth,
        # relative to --out, so reports do not depend on where the batch ran
        "outputs": {name: f"{sample_id}/{name}" for name in ("range.pfm", "mask.png", "params.json")},
    }
    if task.get("figures"):
        from . import plotting

        range_true = io.read_depth(task["range"]) if task.get("range") else None
        fig_dir = Path(task["figures"])
        plotting.plot_decomposition(
            fig_dir / f"{sample_id}_decomposition.png",
            hazy,
            clear,
            result.range,
            result.identifiability_mask,
            range_true,
            title=f"{sample_id}: V={result.visibility:.3g} m",
        )
        plotting.plot_loss_trace(fig_dir / f"{sample_id}_loss.png", result.loss_trace)
    return record


def _decompose_tasks(args):
    common = {
        "mode": args.mode,
        "epsilon": args.epsilon,
        "d_ref": args.d_ref,
        "seed": args.seed,
        "max_iters": args.max_iters,
        "out": str(args.out),
        "anchor_points": args.anchor_points,
        "figures": str(args.figures) if args.figures else None,
    }
    if args.manifest:
        records = Manifest.load(args.manifest).records
        return [
            {
                **common,
                "index": i,
                "id": rec["id"],
                "hazy": rec["hazy"],
                "clear": rec["clear"],
                "sidecar": rec.get("sidecar"),
                "range": rec.get("range"),
            }
            for i, rec in enumerate(records)
        ]
    if not (args.hazy and args.clear):
        raise InputError("give either --manifest or both --hazy and --clear")
    return [
        {
            **common,
            "index": 0,
            "id": Path(args.hazy).stem,
            "hazy": str(args.hazy),
            "clear": str(args.clear),
            "sidecar": str(args.known) if args.known else None,
            "range": str(args.range) if args.range else None,
            "anchor": str(args.anchor) if args.anchor else None,
        }
    ]


def _map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, os.cpu_count() or 1, len(tasks))) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def cmd_decompose(args):
    tasks = _decompose_tasks(args)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    results = _map(_decompose_task, tasks, args.jobs)
    rows = []
    for r in results:
        if r["status"] == "ok":
            rows.append((r["id"], r["status"], r["visibility"], r["airlight"], r["converged"], r["final_loss"]))
        else:
            rows.append((r["id"], r["status"], None, None, None, None))
            print(f"{r['id']}: {r['error']}", file=sys.stderr)
    emit(rows, header=("id", "status", "visibility", "airlight", "converged", "final_loss"))

    ok = [r for r in results if r["status"] == "ok"]
    summary = {"n_samples": len(results), "n_ok": len(ok), "n_failed": len(results) - len(ok)}
    mode = DecomposeMode(args.mode)
    scored = [r for r in ok if r["truth"].get("visibility") is not None and r["truth"].get("airlight") is not None]
    if scored:
        if mode.estimates_visibility:
            v = eval_scalar([r["visibility"] for r in scored], [r["truth"]["visibility"] for r in scored])
            summary["visibility_mape"] = v["mape"]
        if mode.estimates_airlight:
            err = np.abs(np.array([r["airlight"] for r in scored]) - np.array([r["truth"]["airlight"] for r in scored]))
            summary["airlight_mae"] = err.mean(axis=0).tolist()
    emit([(k, summary[k]) for k in sorted(summary)], header=("summary", "value"))
    io.write_json(Path(args.out) / "summary.json", io.report("decompose", mode=mode.value, summary=summary, samples=results))
    if args.figures and scored and mode.estimates_visibility:
        from . import plotting

        plotting.plot_recovery(
            Path(args.figures) / "visibility_recovery.png",
            [r["truth"]["visibility"] for r in scored],
            [r["visibility"] for r in scored],
        )
    if any(r["status"] == "domain-error" for r in results):
        return EXIT_DOMAIN
    if any(r["status"] == "input-error" for r in results):
        return EXIT_INPUT
    return EXIT_OK


# -- dehaze -------------------------------------------------------------------------


def cmd_dehaze(args):
    hazy = io.read_image(args.hazy)
    range_map = io.read_depth(args.range)
    if args.sidecar:
        side = io.read_json(args.sidecar)
        airlight, visibility = side.get("A"), side.get("V_abs")
        epsilon = args.epsilon if args.epsilon is not None else side.get("epsilon", DEFAULT_EPSILON)
    else:
        airlight, visibility, epsilon = args.airlight, args.visibility, args.epsilon
    if airlight is None or visibility is None:
        raise InputError("dehaze needs airlight and visibility (from --sidecar or --airlight/--visibility)")
    params = ScatteringParams(tuple(airlight), float(visibility), epsilon if epsilon is not None else DEFAULT_EPSILON)
    result = invert_haze(hazy, range_map, params, t_min=args.t_min, clamp=args.clamp)
    io.write_image(args.out, result.image)
    low = int(result.low_transmission.sum())
    emit([(str(args.out), result.clamped_pixels, low)], header=("output", "clamped_pixels", "low_transmission_pixels"))
    _write_report(
        args.report,
        io.report("dehaze", output=str(args.out), clamped_pixels=result.clamped_pixels, low_transmission_pixels=low),
    )
    return EXIT_OK


# -- evaluation ---------------------------------------------------------------------


def cmd_eval_depth(args):
    cfg = DepthEvalConfig(args.min_depth, args.max_depth, args.median_scaling, args.crop)
    if args.manifest:
        doc = io.read_json(args.manifest)
        pairs = [(p.get("id", Path(p["pred"]).stem), Path(p["pred"]), Path(p["gt"])) for p in doc["pairs"]]
    elif args.pred and args.gt:
        pairs = _paired_files(args.pred, args.gt)
    else:
        raise InputError("give --manifest or both --pred and --gt")
    reports = []
    for sample_id, pred, gt in pairs:
        reports.append((sample_id, eval_depth(io.read_depth(pred), io.read_depth(gt), cfg)))
    mean = {c: float(np.mean([getattr(r, c) for _, r in reports])) for c in DEPTH_COLUMNS}
    rows = [(sid, *r.row(), r.valid_pixel_count) for sid, r in reports]
    rows.append(("mean", *[mean[c] for c in DEPTH_COLUMNS], sum(r.valid_pixel_count for _, r in reports)))
    emit(rows, header=("id", *DEPTH_COLUMNS, "valid_pixels"))
    _write_report(
        args.report,
        io.report(
            "eval-depth",
            config={"min_depth": cfg.min_depth, "max_depth": cfg.max_depth, "median_scaling": cfg.median_scaling, "crop": cfg.crop},
            columns=list(DEPTH_COLUMNS),
            samples=[{"id": sid, **r.as_dict()} for sid, r in reports],
            mean=mean,
        ),
    )
    return EXIT_OK


def cmd_eval_scalar(args):
    import csv

    try:
        with open(args.csv, newline="") as f:
            rows = list(csv.DictReader(f))
        preds = [float(r[args.pred_column]) for r in rows]
        gts = [float(r[args.gt_column]) for r in rows]
    except (OSError, KeyError, ValueError) as exc:
        raise IngestionError(f"{args.csv}: cannot read columns {args.pred_column!r}/{args.gt_column!r} ({exc})", [str(args.csv)]) from None
    result = eval_scalar(preds, gts, mape=not args.no_mape)
    emit([tuple(result[k] for k in sorted(result))], header=tuple(sorted(result)))
    _write_report(args.report, io.report("eval-scalar", n=len(preds), **result))
    return EXIT_OK


# -- PM2.5 --------------------------------------------------------------------------


def cmd_fit_pm25(args):
    samples = load_samples_csv(args.csv)
    if args.rh_bins:
        import warnings

        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            models = stratified_fit(samples, args.rh_bins, args.order)
        skipped = [str(w.message) for w in caught]
        for msg in skipped:
            print(msg, file=sys.stderr)
    else:
        models, skipped = [fit_pm25(samples, args.order)], []
    rows = []
    for m in models:
        lo, hi = m.humidity_bin if m.humidity_bin else (None, None)
        d = m.diagnostics
        rows.append((lo, hi, d["n_samples"], m.order, list(m.coefficients), d["rmse"], d["mae"], d.get("mape")))
    emit(rows, header=("rh_lo", "rh_hi", "n", "order", "coefficients", "rmse", "mae", "mape"))
    doc = io.report("fit-pm25", order=args.order, rh_bins=args.rh_bins, skipped=skipped, models=[m.to_dict() for m in models])
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        io.write_json(args.out, doc)
    _write_report(args.report, doc)
    if args.figures:
        from . import plotting

        plotting.plot_pm25_fit(Path(args.figures) / "pm25_fit.png", samples, models)
    return EXIT_OK


def _pick_model(models, rh):
    if rh is None:
        if len(models) != 1:
            raise InputError(f"model file holds {len(models)} humidity bins; pass --rh to choose one")
        return models[0]
    for i, m in enumerate(models):
        lo, hi = m.humidity_bin if m.humidity_bin else (0.0, 1.0)
        last = i == len(models) - 1
        if lo <= rh < hi or (last and rh == hi):
            return m
    raise DomainError(f"no model covers relative humidity {rh}")


def cmd_predict_pm25(args):
    doc = io.read_json(args.model)
    models = [Pm25Model.from_dict(m) for m in (doc.get("models") if isinstance(doc, dict) and "models" in doc else [doc])]
    model = _pick_model(models, args.rh)
    rows = []
    for v in args.visibility:
        p = predict_pm25(model, v)
        rows.append((v, p.value, p.raw, p.clamped))
    emit(rows, header=("visibility", "pm25", "raw", "clamped"))
    _write_report(
        args.report,
        io.report("predict-pm25", model=model.to_dict(), predictions=[dict(zip(("visibility", "pm25", "raw", "clamped"), r)) for r in rows]),
    )
    return EXIT_OK


# -- gradcheck ----------------------------------------------------------------------


def cmd_gradcheck(args):
    if args.zero_texture:
        scene = flat_scene(args.size, args.size, epsilon=args.epsilon)
    else:
        scene = make_scene(args.size, args.size, seed=args.seed, epsilon=args.epsilon)
    cfg = GradCheckConfig(n_pixels=args.n_pixels, tol=args.tol, epsilon=args.epsilon, seed=args.seed)
    report = gradient_check(scene, cfg)
    rows = [(e.name, e.analytic, e.numeric, e.rel_error, "vanishing" if e.vanishing else ("ok" if e.rel_error <= cfg.tol else "FAIL")) for e in report.entries]
    emit(rows, header=("parameter", "analytic", "numeric", "rel_error", "status"))
    emit(
        [("passed", report.passed), ("max_rel_error", report.max_rel_error), ("unidentifiable_range_pixels", len(report.unidentifiable))],
        header=("summary", "value"),
    )
    _write_report(args.report, io.report("gradcheck", seed=args.seed, size=args.size, zero_texture=args.zero_texture, **report.to_dict()))
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


# -- parser -------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="hazedecomp", description="Haze synthesis and decomposition toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, epsilon_default=DEFAULT_EPSILON, seed=True, report=True):
        p.add_argument("--epsilon", type=float, default=epsilon_default, help="minimal observable contrast")
        if seed:
            p.add_argument("--seed", type=int, default=0)
        if report:
            p.add_argument("--report", type=Path, help="write a JSON report here")

    p = sub.add_parser("synthesize", help="render hazy images at several relative visibilities")
    p.add_argument("--clear-dir", type=Path, required=True)
    p.add_argument("--depth-dir", type=Path, required=True)
    p.add_argument("--intrinsics", type=Path, required=True, help="JSON with fx, fy, cx, cy")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--scales", type=float_list, default=list(DEFAULT_SCALES), help="comma-separated relative visibilities")
    p.add_argument("--airlight", default="random", help="family name, 'random', or r,g,b")
    p.add_argument("--d-ref", type=float, help="reference distance for relative visibility (default: max range)")
    p.add_argument("--format", choices=("png", "pfm"), default="png")
    p.add_argument("--jobs", type=int, default=1)
    add_common(p, report=False)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("decompose", help="recover range, airlight and visibility")
    p.add_argument("--manifest", type=Path)
    p.add_argument("--hazy", type=Path)
    p.add_argument("--clear", type=Path)
    p.add_argument("--known", type=Path, help="sidecar JSON holding known A / V_abs")
    p.add_argument("--range", type=Path, help="ground-truth range (figures only)")
    p.add_argument("--anchor", type=Path, help="sparse known ranges (0 = unknown) to fix the scale")
    p.add_argument("--anchor-points", type=int, default=0, help="with --manifest: sample this many true ranges as anchors")
    p.add_argument("--mode", choices=[m.value for m in DecomposeMode], default="full")
    p.add_argument("--d-ref", type=float)
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--figures", type=Path)
    p.add_argument("--jobs", type=int, default=1)
    add_common(p, epsilon_default=None, report=False)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("dehaze", help="invert the haze model with known range and parameters")
    p.add_argument("--hazy", type=Path, required=True)
    p.add_argument("--range", type=Path, required=True)
    p.add_argument("--sidecar", type=Path)
    p.add_argument("--airlight", type=float_list)
    p.add_argument("--visibility", type=float)
    p.add_argument("--t-min", type=float, default=1e-3)
    p.add_argument("--clamp", action="store_true", help="floor low transmission instead of failing")
    p.add_argument("--out", type=Path, required=True)
    add_common(p, epsilon_default=None, seed=False)
    p.set_defaults(func=cmd_dehaze)

    p = sub.add_parser("eval-depth", help="depth error metrics")
    p.add_argument("--pred", type=Path)
    p.add_argument("--gt", type=Path)
    p.add_argument("--manifest", type=Path, help="JSON with pairs: [{id, pred, gt}]")
    p.add_argument("--min-depth", type=float, default=1e-3)
    p.add_argument("--max-depth", type=float, default=80.0)
    p.add_argument("--median-scaling", action="store_true")
    p.add_argument("--crop", type=crop_box, help="top,bottom,left,right")
    p.add_argument("--report", type=Path)
    p.set_defaults(func=cmd_eval_depth)

    p = sub.add_parser("eval-scalar", help="RMSE, MAE and MAPE of paired scalars")
    p.add_argument("--csv", type=Path, required=True)
    p.add_argument("--pred-column", default="pred")
    p.add_argument("--gt-column", default="gt")
    p.add_argument("--no-mape", action="store_true")
    p.add_argument("--report", type=Path)
    p.set_defaults(func=cmd_eval_scalar)

    p = sub.add_parser("fit-pm25", help="fit visibility-to-PM2.5 polynomials")
    p.add_argument("--csv", type=Path, required=True, help="columns: visibility, pm25, relative_humidity")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--rh-bins", type=float_list, help="humidity bin edges, e.g. 0,0.5,0.7,0.9,1")
    p.add_argument("--out", type=Path, help="model file")
    p.add_argument("--figures", type=Path)
    p.add_argument("--report", type=Path)
    p.set_defaults(func=cmd_fit_pm25)

    p = sub.add_parser("predict-pm25", help="evaluate a fitted PM2.5 model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--visibility", type=float, nargs="+", required=True)
    p.add_argument("--rh", type=float, help="relative humidity selecting the model bin")
    p.add_argument("--report", type=Path)
    p.set_defaults(func=cmd_predict_pm25)

    p = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--n-pixels", type=int, default=32)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--zero-texture", action="store_true", help="use a scene whose clear image equals the airlight")
    add_common(p)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except IngestionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for item in exc.offenders:
            print(f"  {item}", file=sys.stderr)
        return EXIT_INPUT
    except (HazeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
