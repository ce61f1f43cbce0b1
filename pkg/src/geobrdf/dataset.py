"""Dataset directory layout shared by the command-line tools.

::

    config.json              scene configuration (seed included)
    dem.sg2r, dem.meta.json  elevations with gsd/origin sidecar
    manifests.jsonl          every sample, in generation order
    manifest_{split}.jsonl   the same records grouped by split
    targets/sample_NNNNN.sg2r
    views/view_NNN.json      camera and sun of each full-scene view
    views/view_NNN.sg2r      full-scene target radiance
    truth/coeffs.json        ground-truth coefficient map (oracle use only)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import InvalidInputError
from .photogeom import CameraPose
from .raster import DemGrid, Split
from .synth import GroundTruthBundle, Sample, SynthSceneConfig


@dataclass(eq=False)
class StoredView:
    camera: CameraPose
    sun_dir: np.ndarray
    target: np.ndarray


@dataclass(eq=False)
class Dataset:
    root: Path
    dem: DemGrid
    samples: list
    views: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def manifests(self):
        return [s.manifest for s in self.samples]

    def split(self, split) -> list:
        split = Split(split)
        return [s for s in self.samples if s.manifest.split is split]

    @property
    def truth_path(self) -> Path:
        return self.root / "truth" / "coeffs.json"


def write_dataset(bundle: GroundTruthBundle, root) -> None:
    root = Path(root)
    (root / "targets").mkdir(parents=True, exist_ok=True)
    (root / "views").mkdir(exist_ok=True)
    config = bundle.config.to_dict() if bundle.config is not None else {}
    io.write_json(root / "config.json", config)
    io.save_dem(root / "dem.sg2r", bundle.dem)
    for k, view in enumerate(bundle.views):
        io.write_json(root / "views" / f"view_{k:03d}.json",
                      {"camera": view.camera.to_dict(), "sun_dir": [float(v) for v in view.sun_dir]})
        io.write_raster(root / "views" / f"view_{k:03d}.sg2r", view.target)
    for s in bundle.samples:
        io.write_raster(root / s.manifest.target_path, s.target)
    write_sample_manifests(root, [s.manifest for s in bundle.samples])
    io.save_coeff_map(root / "truth", bundle.true_coeffs)


def write_sample_manifests(root, manifests) -> None:
    root = Path(root)
    io.write_manifests(root / "manifests.jsonl", manifests)
    for split in Split:
        io.write_manifests(root / f"manifest_{split.value}.jsonl", [m for m in manifests if m.split is split])


def load_dataset(root, with_views=True) -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise InvalidInputError(f"dataset directory {root} does not exist")
    for name in ("dem.sg2r", "manifests.jsonl"):
        if not (root / name).exists():
            raise InvalidInputError(f"{root} is not a dataset: missing {name}")
    dem = io.load_dem(root / "dem.sg2r")
    samples = []
    for m in io.read_manifests(root / "manifests.jsonl"):
        target, _ = io.read_raster(root / m.target_path)
        samples.append(Sample(m, target))
    views = []
    if with_views:
        for path in sorted((root / "views").glob("view_*.json")):
            meta = json.loads(path.read_text())
            target, _ = io.read_raster(path.with_suffix(".sg2r"))
            views.append(StoredView(CameraPose.from_dict(meta["camera"]), np.asarray(meta["sun_dir"]), target))
    config_path = root / "config.json"
    config = json.loads(config_path.read_text()) if config_path.exists() else {}
    return Dataset(root, dem, samples, views, config)


def scene_config(dataset: Dataset) -> SynthSceneConfig | None:
    return SynthSceneConfig.from_dict(dataset.config) if dataset.config else None
