import csv
import json

import numpy as np
import pytest

from hazedecomp import io
from hazedecomp.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def table(out):
    lines = out.strip().splitlines()
    header = lines[0].split("\t")
    return [dict(zip(header, line.split("\t"))) for line in lines[1:]]


@pytest.fixture(scope="module")
def dataset(image_dirs, tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    code = main([
        "synthesize", "--clear-dir", str(image_dirs / "clear"), "--depth-dir", str(image_dirs / "depth"),
        "--intrinsics", str(image_dirs / "K.json"), "--out", str(out), "--seed", "3",
    ])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def batch(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("dec")
    code = main(["decompose", "--manifest", str(dataset / "manifest.json"), "--anchor-points", "64", "--out", str(out)])
    return code, out


def test_synthesize_counts(dataset, image_dirs, capsys, tmp_path):
    code, out, _ = run(
        capsys, "synthesize", "--clear-dir", image_dirs / "clear", "--depth-dir", image_dirs / "depth",
        "--intrinsics", image_dirs / "K.json", "--out", tmp_path / "x", "--seed", 3,
    )
    assert code == 0
    rows = table(out)
    assert rows[-1] == {"scale": "total", "count": "10"}
    assert [r["count"] for r in rows[:-1]] == ["2"] * 5
    manifest = io.read_json(dataset / "manifest.json")
    assert manifest["schema"] == io.REPORT_SCHEMA
    assert len(manifest["samples"]) == 10


def test_synthesize_missing_depth(image_dirs, tmp_path, capsys):
    depth = tmp_path / "depth"
    depth.mkdir()
    code, _, err = run(
        capsys, "synthesize", "--clear-dir", image_dirs / "clear", "--depth-dir", depth,
        "--intrinsics", image_dirs / "K.json", "--out", tmp_path / "o",
    )
    assert code == 2
    assert "img0.png" in err and "img1.png" in err


def test_synthesize_full_visibility_equals_input(image_dirs, tmp_path, capsys):
    code, _, _ = run(
        capsys, "synthesize", "--clear-dir", image_dirs / "clear", "--depth-dir", image_dirs / "depth",
        "--intrinsics", image_dirs / "K.json", "--out", tmp_path / "o", "--scales", "1.0",
    )
    assert code == 0
    for rec in io.read_json(tmp_path / "o" / "manifest.json")["samples"]:
        assert np.max(np.abs(io.read_image(rec["hazy"]) - io.read_image(rec["clear"]))) <= 1 / 255


def test_synthesize_is_byte_identical(image_dirs, tmp_path):
    docs = []
    for name in ("a", "b"):
        out = tmp_path / name
        main([
            "synthesize", "--clear-dir", str(image_dirs / "clear"), "--depth-dir", str(image_dirs / "depth"),
            "--intrinsics", str(image_dirs / "K.json"), "--out", str(out), "--seed", "5",
        ])
        docs.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file() and p.suffix != ".json"})
    assert docs[0] == docs[1]


def test_decompose_batch(batch):
    code, out = batch
    summary = io.read_json(out / "summary.json")
    # the two scale-1 samples have hazy == clear: they fail and the rest carry on
    assert code == 3
    assert summary["summary"]["n_samples"] == 10
    assert summary["summary"]["n_failed"] == 2
    failed = [s for s in summary["samples"] if s["status"] != "ok"]
    assert {s["id"] for s in failed} == {"img0_v1p000", "img1_v1p000"}
    assert all(s["status"] == "domain-error" for s in failed)
    assert summary["summary"]["visibility_mape"] <= 5.0
    assert max(summary["summary"]["airlight_mae"]) <= 0.05
    for s in summary["samples"]:
        if s["status"] == "ok":
            for rel in s["outputs"].values():
                assert (out / rel).exists()
            params = io.read_json(out / s["outputs"]["params.json"])
            assert params["visibility"] == s["visibility"]


def test_decompose_rerun_is_byte_identical(dataset, batch, tmp_path):
    _, first = batch
    main(["decompose", "--manifest", str(dataset / "manifest.json"), "--anchor-points", "64", "--out", str(tmp_path)])
    files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*") if p.is_file())
    for rel in files:
        assert (first / rel).read_bytes() == (tmp_path / rel).read_bytes(), rel


def test_decompose_single_pair_degenerate(dataset, tmp_path, capsys):
    rec = io.read_json(dataset / "manifest.json")["samples"][0]
    code, out, err = run(capsys, "decompose", "--hazy", rec["clear"], "--clear", rec["clear"], "--out", tmp_path)
    assert code == 3
    assert "collapses" in err
    assert table(out.split("\n\n")[0])[0]["status"] == "domain-error"


def test_decompose_needs_inputs(tmp_path, capsys):
    code, _, _ = run(capsys, "decompose", "--out", tmp_path)
    assert code == 2


def test_decompose_fix_av_uses_sidecar(dataset, tmp_path, capsys):
    rec = next(r for r in io.read_json(dataset / "manifest.json")["samples"] if r["visibility_rel"] == 0.8)
    code, _, _ = run(
        capsys, "decompose", "--hazy", rec["hazy"], "--clear", rec["clear"], "--known", rec["sidecar"],
        "--mode", "fix-av", "--out", tmp_path,
    )
    assert code == 0
    params = io.read_json(tmp_path / rec["id"] / "params.json")
    assert params["visibility"] == rec["visibility"]
    assert io.read_depth(tmp_path / rec["id"] / "range.pfm").shape == (32, 96)


def test_dehaze(dataset, tmp_path, capsys):
    rec = next(r for r in io.read_json(dataset / "manifest.json")["samples"] if r["visibility_rel"] == 0.8)
    code, out, _ = run(
        capsys, "dehaze", "--hazy", rec["hazy"], "--range", rec["range"], "--sidecar", rec["sidecar"],
        "--out", tmp_path / "d.png", "--clamp",
    )
    assert code == 0
    rec_img = io.read_image(tmp_path / "d.png")
    clear = io.read_image(rec["clear"])
    assert np.median(np.abs(rec_img - clear)) <= 0.02
    assert table(out)[0]["output"] == str(tmp_path / "d.png")


def test_eval_depth_identity(tmp_path, capsys, rng):
    d = rng.uniform(1, 60, size=(8, 8))
    io.write_pfm(tmp_path / "p.pfm", d)
    code, out, _ = run(capsys, "eval-depth", "--pred", tmp_path / "p.pfm", "--gt", tmp_path / "p.pfm", "--report", tmp_path / "r.json")
    assert code == 0
    row = table(out)[0]
    assert row["abs_rel"] == "0" and row["delta_1"] == "1"
    doc = io.read_json(tmp_path / "r.json")
    assert doc["schema"] == io.REPORT_SCHEMA and doc["command"] == "eval-depth"
    assert doc["mean"]["rms"] == 0.0


def test_eval_depth_errors(tmp_path, capsys):
    io.write_pfm(tmp_path / "z.pfm", np.zeros((4, 4)))
    code, _, _ = run(capsys, "eval-depth", "--pred", tmp_path / "z.pfm", "--gt", tmp_path / "z.pfm")
    assert code == 3
    code, _, _ = run(capsys, "eval-depth", "--pred", tmp_path / "z.pfm", "--gt", tmp_path / "missing.pfm")
    assert code == 2
    code, _, _ = run(capsys, "eval-depth", "--pred", tmp_path / "z.pfm", "--gt", tmp_path / "z.pfm", "--crop", "1,2,3")
    assert code == 2


def test_eval_scalar(tmp_path, capsys):
    path = tmp_path / "s.csv"
    path.write_text("pred,gt\n1,2\n3,2\n")
    code, out, _ = run(capsys, "eval-scalar", "--csv", path)
    assert code == 0
    assert table(out)[0] == {"mae": "1", "mape": "50", "rmse": "1"}
    path.write_text("pred,gt\n1,0\n")
    code, _, err = run(capsys, "eval-scalar", "--csv", path)
    assert code == 3 and "[0]" in err


def linear_csv(path):
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["visibility", "pm25", "relative_humidity"])
        for v in np.linspace(0.1, 1.0, 10):
            w.writerow([v, 100 - 50 * v, 0.3])


def test_fit_and_predict_pm25(tmp_path, capsys):
    linear_csv(tmp_path / "lin.csv")
    code, out, _ = run(capsys, "fit-pm25", "--csv", tmp_path / "lin.csv", "--order", 1, "--out", tmp_path / "m.json")
    assert code == 0
    model = io.read_json(tmp_path / "m.json")["models"][0]
    np.testing.assert_allclose(model["coefficients"], [100.0, -50.0], atol=1e-9)
    code, out, _ = run(capsys, "predict-pm25", "--model", tmp_path / "m.json", "--visibility", 0.5, 1.0)
    assert code == 0
    assert [r["pm25"] for r in table(out)] == ["75", "50"]
    code, _, _ = run(capsys, "predict-pm25", "--model", tmp_path / "m.json", "--visibility", 1.5)
    assert code == 3


def test_fit_pm25_bins(tmp_path, capsys):
    linear_csv(tmp_path / "lin.csv")
    code, out, err = run(capsys, "fit-pm25", "--csv", tmp_path / "lin.csv", "--order", 1, "--rh-bins", "0,0.5,0.7,0.9,1", "--out", tmp_path / "m.json")
    assert code == 0
    assert len(table(out)) == 1
    assert err.count("no samples") == 3
    code, _, _ = run(capsys, "predict-pm25", "--model", tmp_path / "m.json", "--visibility", 0.5, "--rh", 0.8)
    assert code == 3
    code, _, _ = run(capsys, "fit-pm25", "--csv", tmp_path / "lin.csv", "--order", 12)
    assert code == 3


def test_gradcheck_passes(capsys, tmp_path):
    code, out, _ = run(capsys, "gradcheck", "--seed", 0, "--report", tmp_path / "g.json")
    assert code == 0
    doc = io.read_json(tmp_path / "g.json")
    assert doc["passed"] is True and doc["max_rel_error"] <= 1e-4
    assert len(doc["entries"]) == 36


def test_gradcheck_zero_texture(capsys):
    code, out, _ = run(capsys, "gradcheck", "--zero-texture")
    assert code == 0
    assert "unidentifiable_range_pixels\t32" in out


def test_bad_arguments(capsys):
    assert run(capsys, "synthesize")[0] == 2
    assert run(capsys, "nope")[0] == 2
    assert run(capsys, "--help")[0] == 0


def test_report_json_is_canonical(tmp_path, capsys):
    run(capsys, "gradcheck", "--report", tmp_path / "a.json")
    run(capsys, "gradcheck", "--report", tmp_path / "b.json")
    a = (tmp_path / "a.json").read_bytes()
    assert a == (tmp_path / "b.json").read_bytes()
    json.loads(a)
