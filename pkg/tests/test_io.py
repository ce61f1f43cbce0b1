import struct

import numpy as np
import pytest

from geobrdf import io
from geobrdf.brdf import CoefficientMap
from geobrdf.dataset import load_dataset, write_dataset
from geobrdf.errors import InvalidInputError
from geobrdf.raster import DemGrid
from geobrdf.synth import SynthSceneConfig, generate_scene


def test_raster_header_layout(tmp_path):
    a = np.arange(6, dtype=np.float64).reshape(2, 3)
    path = io.write_raster(tmp_path / "a.sg2r", a)
    raw = path.read_bytes()
    assert raw[:4] == b"SG2R"
    assert struct.unpack("<HBII", raw[4:15]) == (1, 1, 3, 2)
    assert np.frombuffer(raw[15:], "<f4").tolist() == a.ravel().tolist()


def test_raster_roundtrip(tmp_path):
    a = np.random.default_rng(0).normal(size=(5, 7)).astype(np.float32)
    io.write_raster(tmp_path / "a.sg2r", a, meta={"k": 1})
    back, meta = io.read_raster(tmp_path / "a.sg2r")
    assert back.dtype == np.float64 and meta == {"k": 1}
    np.testing.assert_array_equal(back, a)
    mask = np.eye(3, dtype=np.uint8)
    io.write_raster(tmp_path / "m.sg2r", mask, "u8")
    back, meta = io.read_raster(tmp_path / "m.sg2r")
    assert back.dtype == np.uint8 and meta == {}
    np.testing.assert_array_equal(back, mask)


def test_raster_errors(tmp_path):
    with pytest.raises(InvalidInputError):
        io.write_raster(tmp_path / "x", np.zeros(3))
    with pytest.raises(InvalidInputError):
        io.write_raster(tmp_path / "x", np.zeros((2, 2)), "f64")
    (tmp_path / "bad").write_bytes(b"NOPE" + bytes(11))
    with pytest.raises(InvalidInputError):
        io.read_raster(tmp_path / "bad")
    io.write_raster(tmp_path / "t.sg2r", np.zeros((4, 4)))
    (tmp_path / "t.sg2r").write_bytes((tmp_path / "t.sg2r").read_bytes()[:-4])
    with pytest.raises(InvalidInputError):
        io.read_raster(tmp_path / "t.sg2r")


def test_dem_roundtrip(tmp_path):
    z = np.arange(16.0).reshape(4, 4)
    valid = np.ones((4, 4), bool)
    valid[1, 2] = False
    dem = DemGrid(np.where(valid, z, np.nan), 2.5, valid, (10.0, -5.0))
    io.save_dem(tmp_path / "dem.sg2r", dem)
    assert (tmp_path / "dem.meta.json").exists()
    back = io.load_dem(tmp_path / "dem.sg2r")
    assert back.gsd == 2.5 and back.origin == (10.0, -5.0)
    np.testing.assert_array_equal(back.valid, valid)
    np.testing.assert_array_equal(back.elevations[valid], z[valid])


def test_coeff_map_roundtrip(tmp_path):
    cm = CoefficientMap("M3", np.random.default_rng(1).normal(size=(4, 3, 5)).astype(np.float32))
    header = io.save_coeff_map(tmp_path / "c", cm, stem="fit")
    back = io.load_coeff_map(header)
    assert back.model is cm.model
    np.testing.assert_array_equal(back.values, cm.values)
    assert sorted(p.name for p in (tmp_path / "c").iterdir()) == [
        "fit.json", "fit_a.sg2r", "fit_b.sg2r", "fit_c.sg2r", "fit_d.sg2r"]


def test_png_and_pgm(tmp_path):
    a = np.random.default_rng(2).uniform(-1, 3, size=(6, 9))
    io.export_png16(tmp_path / "img.png", a)
    back = io.read_png16(tmp_path / "img.png")
    assert np.abs(back - a).max() <= 0.5 * 4 / 65535 + 1e-12
    io.export_pgm(tmp_path / "img.pgm", a)
    lines = (tmp_path / "img.pgm").read_text().splitlines()
    assert lines[0] == "P2" and lines[2] == "9 6" and lines[3] == "65535" and len(lines) == 4 + 6


def test_dataset_roundtrip(tmp_path):
    bundle = generate_scene(SynthSceneConfig(dem_size=64, crop_size=16, n_samples=6, n_views=2))
    write_dataset(bundle, tmp_path / "ds")
    ds = load_dataset(tmp_path / "ds")
    np.testing.assert_array_equal(ds.dem.elevations, bundle.dem.elevations)
    assert [m.to_dict() for m in ds.manifests] == [m.to_dict() for m in bundle.manifests]
    for a, b in zip(ds.samples, bundle.samples):
        np.testing.assert_array_equal(a.target, b.target.astype(np.float32))
    assert len(ds.views) == 2 and ds.config["seed"] == 0
    truth = io.load_coeff_map(ds.truth_path)
    np.testing.assert_array_equal(truth.values, bundle.true_coeffs.values)
    total = sum(len(ds.split(s)) for s in ("train", "val", "test"))
    assert total == 6


def test_load_dataset_missing(tmp_path):
    with pytest.raises(InvalidInputError):
        load_dataset(tmp_path / "nothing")
    (tmp_path / "empty").mkdir()
    with pytest.raises(InvalidInputError):
        load_dataset(tmp_path / "empty")
