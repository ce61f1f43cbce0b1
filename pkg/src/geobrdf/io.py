"""On-disk formats: raster container, JSONL manifests, coefficient maps, previews.

Raster container layout (little endian)::

    b"SG2R" | version u16 | dtype tag u8 | width u32 | height u32 | payload

The payload is row-major ``float32`` or ``uint8``.  Metadata (gsd, origin,
statistics) lives in a JSON sidecar next to the file.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .brdf import COEFF_NAMES, BrdfModel, CoefficientMap
from .errors import InvalidInputError
from .raster import DemGrid, SampleManifest

RASTER_MAGIC = b"SG2R"
RASTER_VERSION = 1
_HEADER = struct.Struct("<4sHBII")
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("u1")}
_TAGS = {"f32": 1, "u8": 2}


def sidecar_path(path) -> Path:
    """``dem.sg2r`` -> ``dem.meta.json``; other formats keep their suffix (``img.png.meta.json``)."""
    path = Path(path)
    base = path.stem if path.suffix == ".sg2r" else path.name
    return path.with_name(base + ".meta.json")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_raster(path, array, dtype="f32", meta=None) -> Path:
    a = np.asarray(array)
    if a.ndim != 2:
        raise InvalidInputError(f"raster must be 2-D, got shape {a.shape}")
    if dtype not in _TAGS:
        raise InvalidInputError(f"unsupported raster dtype {dtype!r}")
    tag = _TAGS[dtype]
    payload = np.ascontiguousarray(a, dtype=DTYPES[tag])
    path = Path(path)
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(RASTER_MAGIC, RASTER_VERSION, tag, w, h))
        fh.write(payload.tobytes())
    if meta is not None:
        write_json(sidecar_path(path), meta)
    return path


def read_raster(path):
    """Returns (array, meta); meta is {} when there is no sidecar."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise InvalidInputError(f"{path}: truncated header")
        magic, version, tag, w, h = _HEADER.unpack(head)
        if magic != RASTER_MAGIC:
            raise InvalidInputError(f"{path}: not a raster container")
        if version != RASTER_VERSION:
            raise InvalidInputError(f"{path}: unsupported version {version}")
        if tag not in DTYPES:
            raise InvalidInputError(f"{path}: unknown dtype tag {tag}")
        dt = DTYPES[tag]
        data = fh.read()
    if len(data) != w * h * dt.itemsize:
        raise InvalidInputError(f"{path}: payload has {len(data)} bytes, expected {w * h * dt.itemsize}")
    array = np.frombuffer(data, dtype=dt).reshape(h, w)
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    return (array.astype(np.float64) if tag == 1 else array.copy()), meta


def save_dem(path, dem: DemGrid, stats=None) -> Path:
    z = np.where(dem.valid, dem.elevations, np.nan)
    meta = {"gsd": dem.gsd, "origin": list(dem.origin), "nodata": "nan"}
    if stats:
        meta["stats"] = stats
    return write_raster(path, z, "f32", meta)


def load_dem(path) -> DemGrid:
    z, meta = read_raster(path)
    if "gsd" not in meta:
        raise InvalidInputError(f"{path}: sidecar with gsd is required for a DEM")
    return DemGrid(z, meta["gsd"], np.isfinite(z), tuple(meta.get("origin", (0.0, 0.0))))


def write_manifests(path, manifests) -> None:
    with open(path, "w") as fh:
        for m in manifests:
            fh.write(json.dumps(m.to_dict(), sort_keys=True) + "\n")


def read_manifests(path) -> list:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(SampleManifest.from_dict(json.loads(line)))
                except (KeyError, ValueError) as exc:
                    raise InvalidInputError(f"{path}:{n}: bad manifest line ({exc})") from exc
    return out


def save_coeff_map(directory, cmap: CoefficientMap, stem="coeffs") -> Path:
    """One raster per channel plus ``<stem>.json`` naming the model."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for name, channel in zip(COEFF_NAMES, cmap.values):
        fname = f"{stem}_{name}.sg2r"
        write_raster(directory / fname, channel, "f32")
        files.append(fname)
    header = directory / f"{stem}.json"
    write_json(header, {"model": cmap.model.value, "channels": files, "shape": list(cmap.values.shape[1:])})
    return header


def load_coeff_map(header) -> CoefficientMap:
    header = Path(header)
    meta = json.loads(header.read_text())
    model = BrdfModel(meta["model"])
    if len(meta["channels"]) != model.n_params:
        raise InvalidInputError(f"{header}: {model.value} needs {model.n_params} channels")
    return CoefficientMap(model, np.stack([read_raster(header.parent / f)[0] for f in meta["channels"]]))


def _scale16(array, lo=None, hi=None):
    a = np.asarray(array, dtype=np.float64)
    finite = a[np.isfinite(a)]
    lo = float(finite.min()) if lo is None else float(lo)
    hi = float(finite.max()) if hi is None else float(hi)
    span = hi - lo if hi > lo else 1.0
    q = np.clip(np.round((np.nan_to_num(a, nan=lo) - lo) / span * 65535.0), 0, 65535).astype(np.uint16)
    return q, lo, hi


def export_png16(path, array, lo=None, hi=None) -> Path:
    """16-bit grayscale PNG; value = lo + q / 65535 * (hi - lo), recorded in the sidecar."""
    q, lo, hi = _scale16(array, lo, hi)
    path = Path(path)
    Image.fromarray(q).save(path, format="PNG")
    write_json(sidecar_path(path), {"scale": "linear", "lo": lo, "hi": hi, "max_code": 65535})
    return path


def read_png16(path) -> np.ndarray:
    """Decode a PNG written by ``export_png16`` back to floats."""
    q = np.asarray(Image.open(path), dtype=np.float64)
    meta = json.loads(sidecar_path(path).read_text())
    return meta["lo"] + q / meta["max_code"] * (meta["hi"] - meta["lo"])


def export_pgm(path, array, lo=None, hi=None) -> Path:
    """ASCII (P2) PGM with maxval 65535 and the same linear scaling as the PNG export."""
    q, lo, hi = _scale16(array, lo, hi)
    h, w = q.shape
    lines = ["P2", f"# lo={lo!r} hi={hi!r}", f"{w} {h}", "65535"]
    lines += [" ".join(str(v) for v in row) for row in q]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path
