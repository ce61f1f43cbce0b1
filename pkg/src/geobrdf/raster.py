"""DEM containers, validity-mask algebra, crop sampling and geographic splits.

World frame: x east, y north, z up (meters).  Raster column ``j`` maps to
``x = origin[0] + j * gsd`` and row ``i`` to ``y = origin[1] + i * gsd``.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidStatsError
from .photogeom import CameraPose


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DemGrid:
    elevations: np.ndarray
    gsd: float
    valid: np.ndarray | None = None
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        z = _frozen(self.elevations, np.float64)
        if z.ndim != 2 or min(z.shape) < 2:
            raise InvalidInputError(f"DEM must be a 2-D raster of at least 2x2, got {z.shape}")
        if not (np.isfinite(self.gsd) and self.gsd > 0):
            raise InvalidInputError(f"gsd must be > 0, got {self.gsd}")
        valid = np.isfinite(z) if self.valid is None else _frozen(self.valid, bool)
        if valid.shape != z.shape:
            raise InvalidInputError("elevations and valid mask differ in shape")
        if not np.all(np.isfinite(z[valid])):
            raise InvalidInputError("valid pixels must hold finite elevations")
        object.__setattr__(self, "elevations", z)
        object.__setattr__(self, "valid", _frozen(valid, bool))
        object.__setattr__(self, "gsd", float(self.gsd))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def height(self) -> int:
        return self.elevations.shape[0]

    @property
    def width(self) -> int:
        return self.elevations.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.elevations.shape

    def world_xy(self):
        """Per-pixel world (x, y) coordinates of pixel centers."""
        rows, cols = np.indices(self.shape, dtype=np.float64)
        return self.origin[0] + cols * self.gsd, self.origin[1] + rows * self.gsd

    def pixel_to_world(self, row, col):
        return self.origin[0] + col * self.gsd, self.origin[1] + row * self.gsd

    def crop(self, spec: "CropSpec") -> "DemGrid":
        r0, c0, r1, c1 = spec.window()
        if r0 < 0 or c0 < 0 or r1 > self.height or c1 > self.width:
            raise InvalidInputError(f"crop window {spec.window()} outside raster {self.shape}")
        return DemGrid(
            self.elevations[r0:r1, c0:c1],
            self.gsd,
            self.valid[r0:r1, c0:c1],
            self.pixel_to_world(r0, c0),
        )

    def shifted(self, dz: float) -> "DemGrid":
        return DemGrid(self.elevations + dz, self.gsd, self.valid, self.origin)


@dataclass(frozen=True)
class NormalizationStats:
    dataset_std: float

    def __post_init__(self):
        if not (math.isfinite(self.dataset_std) and self.dataset_std > 0):
            raise InvalidStatsError(f"dataset_std must be finite and > 0, got {self.dataset_std}")

    @classmethod
    def from_rasters(cls, rasters) -> "NormalizationStats":
        """Std over the raw elevations of all given rasters (training split)."""
        values = np.concatenate([np.asarray(r, dtype=np.float64).ravel() for r in rasters])
        values = values[np.isfinite(values)]
        return cls(float(values.std()))


def normalize_crop(crop_elevations, stats: NormalizationStats) -> np.ndarray:
    """Center a crop on its mean elevation and scale by the dataset-wide std."""
    z = np.asarray(crop_elevations, dtype=np.float64)
    if z.size == 0:
        raise InvalidInputError("empty crop")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("crop contains non-finite elevations")
    if not isinstance(stats, NormalizationStats):
        stats = NormalizationStats(float(stats))
    return (z - z.mean()) / stats.dataset_std


def footprint_area(size_px: int, gsd: float) -> float:
    """Ground area in m^2 covered by a square crop of ``size_px`` pixels."""
    side = size_px * gsd
    return side * side


@dataclass(frozen=True)
class CropSpec:
    """Square crop of ``size_px`` pixels centered on ``center`` = (row, col).

    For even sizes the window spans [c - s/2, c + s/2 - 1] on each axis.
    """

    size_px: int
    gsd: float
    center: tuple[int, int]

    def window(self):
        s = self.size_px
        r0 = self.center[0] - s // 2
        c0 = self.center[1] - s // 2
        return r0, c0, r0 + s, c0 + s

    def fits(self, shape) -> bool:
        r0, c0, r1, c1 = self.window()
        return r0 >= 0 and c0 >= 0 and r1 <= shape[0] and c1 <= shape[1]

    @property
    def footprint_m(self) -> float:
        return self.size_px * self.gsd

    @property
    def area_m2(self) -> float:
        return footprint_area(self.size_px, self.gsd)


def erosion_radius(size_px: int, gsd: float):
    """Erosion half-width as (meters, pixels): (s * gsd) / 2 and ceil(s / 2)."""
    return size_px * gsd / 2.0, math.ceil(size_px / 2)


def erode_mask(valid, crop) -> np.ndarray:
    """Mark every pixel that can serve as the center of a fully valid crop.

    ``crop`` is a CropSpec or a crop size in pixels.  The window test uses a
    summed-area table of invalid pixels, so the result is exact for any mask.
    """
    s = crop.size_px if isinstance(crop, CropSpec) else int(crop)
    if s < 2:
        raise InvalidInputError(f"crop size must be >= 2, got {s}")
    valid = np.asarray(valid, dtype=bool)
    h, w = valid.shape
    out = np.zeros((h, w), dtype=bool)
    if s > h or s > w:
        return out
    bad = np.zeros((h + 1, w + 1), dtype=np.int64)
    bad[1:, 1:] = np.cumsum(np.cumsum(~valid, axis=0), axis=1)
    # window starts (top-left corners) that fit entirely
    n_r, n_c = h - s + 1, w - s + 1
    counts = bad[s:, s:] - bad[:n_r, s:] - bad[s:, :n_c] + bad[:n_r, :n_c]
    off = s // 2
    out[off:off + n_r, off:off + n_c] = counts == 0
    return out


def sample_crop_centers(eroded, n: int, seed: int, size_px: int, gsd: float = 1.0) -> list[CropSpec]:
    """Draw up to ``n`` distinct crop centers uniformly from the eroded mask."""
    if n < 0:
        raise InvalidInputError("n must be >= 0")
    rows, cols = np.nonzero(np.asarray(eroded, dtype=bool))
    k = min(n, rows.size)
    rng = np.random.default_rng(seed)
    pick = rng.choice(rows.size, size=k, replace=False) if k else np.empty(0, dtype=int)
    return [CropSpec(size_px, gsd, (int(rows[i]), int(cols[i]))) for i in pick]


def allocate_crop_budget(valid_areas, total: int) -> list[int]:
    """Split ``total`` crops across sources in proportion to their valid area.

    Largest-remainder rounding; ties go to the lower source index.
    """
    areas = np.asarray(valid_areas, dtype=np.float64)
    if total < 0 or np.any(areas < 0) or not np.all(np.isfinite(areas)):
        raise InvalidInputError("total and areas must be non-negative")
    if areas.size == 0 or areas.sum() <= 0:
        raise InvalidInputError("at least one source needs a positive valid area")
    quotas = areas / areas.sum() * total
    counts = np.floor(quotas).astype(int)
    remainder = quotas - counts
    short = total - int(counts.sum())
    # stable sort on -remainder keeps index order among ties
    order = np.argsort(-remainder, kind="stable")
    counts[order[:short]] += 1
    return counts.tolist()


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


def tile_index(x, y, tile_size: float):
    if not tile_size > 0:
        raise InvalidInputError(f"tile_size must be > 0, got {tile_size}")
    return math.floor(x / tile_size), math.floor(y / tile_size)


def tile_id(x, y, tile_size: float) -> int:
    """Unique non-negative integer for the tile containing (x, y)."""
    ix, iy = tile_index(x, y, tile_size)
    # zigzag then Cantor pairing: bijective on Z^2
    zx = 2 * ix if ix >= 0 else -2 * ix - 1
    zy = 2 * iy if iy >= 0 else -2 * iy - 1
    return (zx + zy) * (zx + zy + 1) // 2 + zy


def split_for_tile(tid: int, ratios, seed: int) -> Split:
    digest = hashlib.blake2b(f"{seed}:{tid}".encode(), digest_size=8).digest()
    u = int.from_bytes(digest, "little") / 2.0**64
    train, val, _ = ratios
    if u < train:
        return Split.TRAIN
    if u < train + val:
        return Split.VAL
    return Split.TEST


def _check_ratios(ratios):
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidInputError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    return ratios


def assign_geographic_split(centers, tile_size: float, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> list[Split]:
    """Tag each world-space center with the split of the tile it falls in."""
    ratios = _check_ratios(ratios)
    if not tile_size > 0:
        raise InvalidInputError(f"tile_size must be > 0, got {tile_size}")
    cache = {}
    tags = []
    for x, y in centers:
        tid = tile_id(x, y, tile_size)
        if tid not in cache:
            cache[tid] = split_for_tile(tid, ratios, seed)
        tags.append(cache[tid])
    return tags


@dataclass
class SampleManifest:
    crop: CropSpec
    dem_path: str
    target_path: str
    camera: CameraPose
    sun_dir: tuple[float, float, float]
    fov_deg: float
    footprint: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax (m)
    split: Split
    tile_id: int
    view_index: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "crop": {"size_px": self.crop.size_px, "gsd": self.crop.gsd, "center": list(self.crop.center)},
            "dem_path": self.dem_path,
            "target_path": self.target_path,
            "camera": self.camera.to_dict(),
            "sun_dir": [float(v) for v in self.sun_dir],
            "fov_deg": float(self.fov_deg),
            "footprint": [float(v) for v in self.footprint],
            "split": Split(self.split).value,
            "tile_id": int(self.tile_id),
            "view_index": int(self.view_index),
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampleManifest":
        c = d["crop"]
        return cls(
            crop=CropSpec(int(c["size_px"]), float(c["gsd"]), tuple(int(v) for v in c["center"])),
            dem_path=d["dem_path"],
            target_path=d["target_path"],
            camera=CameraPose.from_dict(d["camera"]),
            sun_dir=tuple(float(v) for v in d["sun_dir"]),
            fov_deg=float(d["fov_deg"]),
            footprint=tuple(float(v) for v in d["footprint"]),
            split=Split(d["split"]),
            tile_id=int(d["tile_id"]),
            view_index=int(d.get("view_index", 0)),
            extra=dict(d.get("extra", {})),
        )


def crop_footprint(dem: DemGrid, spec: CropSpec):
    """World rectangle (xmin, ymin, xmax, ymax) covered by the crop's pixel cells."""
    r0, c0, r1, c1 = spec.window()
    x0, y0 = dem.pixel_to_world(r0, c0)
    x1, y1 = dem.pixel_to_world(r1 - 1, c1 - 1)
    half = dem.gsd / 2
    return (x0 - half, y0 - half, x1 + half, y1 + half)


def check_split_purity(manifests) -> None:
    """Raise if a tile_id appears under more than one split."""
    seen = {}
    for m in manifests:
        prev = seen.setdefault(m.tile_id, Split(m.split))
        if prev != Split(m.split):
            raise InvalidInputError(f"tile {m.tile_id} appears in both {prev.value} and {Split(m.split).value}")
