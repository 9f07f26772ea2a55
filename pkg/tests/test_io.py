import math

import numpy as np
import pytest

from hazedecomp import io
from hazedecomp.errors import IngestionError


def test_pfm_round_trip(tmp_path, rng):
    for shape in ((5, 7), (5, 7, 3)):
        a = rng.uniform(-3, 100, size=shape).astype(np.float32)
        io.write_pfm(tmp_path / "a.pfm", a)
        np.testing.assert_array_equal(io.read_pfm(tmp_path / "a.pfm"), a)


def test_pfm_orientation(tmp_path):
    a = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    io.write_pfm(tmp_path / "a.pfm", a)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n2 2\n-1.0\n")
    # bottom row is stored first
    assert np.frombuffer(raw[-16:], dtype="<f4").tolist() == [3.0, 4.0, 1.0, 2.0]


def test_pfm_big_endian(tmp_path):
    a = np.array([[1.5, -2.0]], dtype=">f4")
    (tmp_path / "b.pfm").write_bytes(b"Pf\n2 1\n1.0\n" + a.tobytes())
    assert io.read_pfm(tmp_path / "b.pfm").tolist() == [[1.5, -2.0]]


def test_pfm_rejects_garbage(tmp_path):
    (tmp_path / "x.pfm").write_bytes(b"P6\n1 1\n255\n\0\0\0")
    with pytest.raises(IngestionError):
        io.read_pfm(tmp_path / "x.pfm")
    (tmp_path / "y.pfm").write_bytes(b"Pf\n4 4\n-1.0\n\0\0\0\0")
    with pytest.raises(IngestionError):
        io.read_pfm(tmp_path / "y.pfm")


def test_png_round_trip(tmp_path, rng):
    img = rng.uniform(size=(6, 9, 3))
    io.write_image(tmp_path / "i.png", img)
    back = io.read_image(tmp_path / "i.png")
    assert back.dtype == np.float64 and back.shape == img.shape
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_depth_png16(tmp_path, rng):
    d = rng.uniform(0, 200, size=(4, 5))
    d[0, 0] = 0.0
    io.write_depth_png16(tmp_path / "d.png", d, scale=256)
    assert io.read_json(tmp_path / "d.json") == {"scale": 256}
    back = io.read_depth(tmp_path / "d.png")
    assert np.max(np.abs(back - d)) <= 0.5 / 256
    assert back[0, 0] == 0.0
    with pytest.raises(ValueError):
        io.write_depth_png16(tmp_path / "e.png", np.full((2, 2), 300.0), scale=256)


def test_mask_round_trip(tmp_path, rng):
    m = rng.uniform(size=(5, 5)) > 0.5
    io.write_mask(tmp_path / "m.png", m)
    np.testing.assert_array_equal(io.read_mask(tmp_path / "m.png"), m)


def test_json_non_finite(tmp_path):
    doc = io.report("x", value=math.inf, arr=np.array([1.0, np.nan]), b=np.float64(2.5))
    io.write_json(tmp_path / "r.json", doc)
    back = io.read_json(tmp_path / "r.json")
    assert back == {"schema": io.REPORT_SCHEMA, "command": "x", "value": None, "arr": [1.0, None], "b": 2.5}
    assert io.dumps({"b": 1, "a": 2}).index('"a"') < io.dumps({"b": 1, "a": 2}).index('"b"')


def test_unreadable_image(tmp_path):
    (tmp_path / "bad.png").write_bytes(b"not a png")
    with pytest.raises(IngestionError):
        io.read_image(tmp_path / "bad.png")
