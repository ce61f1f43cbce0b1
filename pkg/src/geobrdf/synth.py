"""Synthetic scenes with known coefficient fields.

Generates fBm terrain, spatially varying coefficient maps (partly tied to
slope), and rendered views/crops with manifests, so every estimator can be
checked against ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import seeds
from .brdf import BrdfModel, CoefficientMap
from .errors import DegenerateGeometryError, InvalidInputError
from .photogeom import CameraPose, Projection, direction_from_angles, surface_normals
from .raster import (
    CropSpec,
    DemGrid,
    SampleManifest,
    Split,
    allocate_crop_budget,
    crop_footprint,
    erode_mask,
    sample_crop_centers,
    split_for_tile,
    tile_id,
)
from .render import RenderedImage, render

# (mean, amplitude, correlation length in meters) per coefficient
DEFAULT_COEFF_FIELDS = {
    BrdfModel.M1: [(0.6, 0.3, 40.0), (0.2, 0.3, 40.0)],
    BrdfModel.M2: [(0.6, 0.3, 40.0), (0.2, 0.3, 40.0), (0.1, 0.3, 40.0)],
    BrdfModel.M3: [(0.6, 0.3, 40.0), (0.2, 0.3, 40.0), (0.1, 0.1, 40.0), (0.05, 0.1, 40.0)],
    BrdfModel.M4: [(0.6, 0.3, 40.0), (0.2, 0.3, 40.0), (0.1, 0.1, 40.0), (0.05, 0.1, 40.0)],
    BrdfModel.M5: [(0.6, 0.3, 40.0), (0.2, 0.3, 40.0), (0.1, 0.1, 40.0), (0.05, 0.1, 40.0)],
    BrdfModel.M6: [(0.5, 0.2, 40.0), (0.3, 0.2, 40.0), (0.05, 0.05, 40.0), (0.05, 0.05, 40.0)],
}


@dataclass
class SynthSceneConfig:
    dem_size: int = 64
    gsd: float = 5.0
    relief_amplitude: float = 40.0
    spectral_exponent: float = 3.0
    model: BrdfModel = BrdfModel.M2
    coeff_field_spec: list | None = None
    alpha: float = 0.5
    n_views: int = 4
    sun_elevation_range: tuple[float, float] = (10.0, 60.0)
    sun_azimuth_range: tuple[float, float] = (0.0, 360.0)
    view_mix: float = 0.7
    oblique_tilt_range: tuple[float, float] = (20.0, 35.0)
    oblique_fov_deg: float = 45.0
    camera_altitude_range: tuple[float, float] = (1000.0, 3000.0)
    noise_sigma: float = 0.0
    crop_size: int = 32
    n_samples: int = 64
    tile_size_m: float = 160.0
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        self.model = BrdfModel(self.model)
        if self.coeff_field_spec is None:
            self.coeff_field_spec = [tuple(f) for f in DEFAULT_COEFF_FIELDS[self.model]]
        else:
            self.coeff_field_spec = [tuple(float(v) for v in f) for f in self.coeff_field_spec]
        if len(self.coeff_field_spec) != self.model.n_params:
            raise InvalidInputError(f"{self.model.value} needs {self.model.n_params} coefficient field specs")
        if self.n_views < 1:
            raise InvalidInputError("n_views must be >= 1")
        if any(f[2] <= 0 for f in self.coeff_field_spec):
            raise InvalidInputError("correlation lengths must be > 0")
        lo, hi = self.sun_elevation_range
        if not (0 < lo <= hi <= 90):
            raise InvalidInputError("sun elevations must lie in (0, 90] degrees")
        if not 0 <= self.view_mix <= 1:
            raise InvalidInputError("view_mix is a fraction in [0, 1]")
        if not 0 <= self.alpha <= 1:
            raise InvalidInputError("alpha is a fraction in [0, 1]")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["model"] = self.model.value
        d["coeff_field_spec"] = [list(f) for f in self.coeff_field_spec]
        for key in ("sun_elevation_range", "sun_azimuth_range", "oblique_tilt_range",
                    "camera_altitude_range", "split_ratios"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSceneConfig":
        d = dict(d)
        for key in ("sun_elevation_range", "sun_azimuth_range", "oblique_tilt_range",
                    "camera_altitude_range", "split_ratios"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(eq=False)
class View:
    camera: CameraPose
    sun_dir: np.ndarray
    image: RenderedImage
    target: np.ndarray

    @property
    def nadir(self) -> bool:
        return self.camera.projection is Projection.ORTHO_NADIR


@dataclass(eq=False)
class Sample:
    manifest: SampleManifest
    target: np.ndarray


@dataclass(eq=False)
class GroundTruthBundle:
    dem: DemGrid
    true_coeffs: CoefficientMap
    views: list[View]
    manifests: list[SampleManifest] = field(default_factory=list)
    samples: list[Sample] = field(default_factory=list)
    config: SynthSceneConfig | None = None


def _unit_variance_field(rng, shape, transfer):
    """Filter white noise in the Fourier domain and scale to unit expected variance."""
    white = rng.standard_normal(shape)
    spectrum = np.fft.fft2(white) * transfer
    power = np.mean(np.abs(transfer) ** 2)
    if power == 0:
        return np.zeros(shape)
    return np.real(np.fft.ifft2(spectrum)) / math.sqrt(power)


def _freq_radius(shape, spacing):
    fy = np.fft.fftfreq(shape[0], d=spacing)
    fx = np.fft.fftfreq(shape[1], d=spacing)
    return np.hypot(fy[:, None], fx[None, :])


def generate_dem(config: SynthSceneConfig) -> DemGrid:
    """Power-law (fBm) heightfield rescaled to the configured peak-to-peak relief."""
    n = config.dem_size
    shape = (n, n)
    if config.relief_amplitude == 0:
        return DemGrid(np.zeros(shape), config.gsd)
    f = _freq_radius(shape, config.gsd)
    transfer = np.zeros(shape)
    nz = f > 0
    transfer[nz] = f[nz] ** (-config.spectral_exponent / 2.0)
    z = _unit_variance_field(seeds.rng(config.seed, "dem"), shape, transfer)
    z -= z.min()
    z *= config.relief_amplitude / z.max()
    # float32-representable so a scene written to disk is the scene that was rendered
    return DemGrid(z.astype(np.float32).astype(np.float64), config.gsd)


def slope_feature(dem: DemGrid) -> np.ndarray:
    """Slope magnitude standardized to zero mean, unit std (zeros on flat terrain)."""
    n = surface_normals(dem)
    slope = np.sqrt(np.maximum(1.0 / n[..., 2] ** 2 - 1.0, 0.0))
    std = slope.std()
    if std < 1e-12:
        return np.zeros(dem.shape)
    return (slope - slope.mean()) / std


def generate_coeff_field(config: SynthSceneConfig, dem: DemGrid) -> CoefficientMap:
    """mean + amplitude * (alpha * smooth noise + (1 - alpha) * slope feature)."""
    rng = seeds.rng(config.seed, "coeffs")
    f = _freq_radius(dem.shape, dem.gsd)
    slope = slope_feature(dem)
    channels = []
    for mean, amplitude, corr_len in config.coeff_field_spec:
        # Gaussian kernel of std corr_len (m) has transfer exp(-2 pi^2 sigma^2 f^2)
        transfer = np.exp(-2.0 * math.pi**2 * corr_len**2 * f**2)
        noise = _unit_variance_field(rng, dem.shape, transfer)
        channels.append(mean + amplitude * (config.alpha * noise + (1.0 - config.alpha) * slope))
    return CoefficientMap(config.model, np.stack(channels).astype(np.float32).astype(np.float64))


def _draw_camera(rng, config: SynthSceneConfig, dem: DemGrid) -> CameraPose:
    cx, cy = dem.pixel_to_world((dem.height - 1) / 2, (dem.width - 1) / 2)
    top = float(dem.elevations.max())
    altitude = top + rng.uniform(*config.camera_altitude_range)
    if rng.uniform() < config.view_mix:
        return CameraPose.nadir([cx, cy, altitude], image_size=(dem.width, dem.height))
    tilt = math.radians(rng.uniform(*config.oblique_tilt_range))
    azimuth = rng.uniform(0.0, 2.0 * math.pi)
    offset = altitude * math.tan(tilt)
    position = [cx - offset * math.sin(azimuth), cy - offset * math.cos(azimuth), altitude]
    target = [cx, cy, float(dem.elevations.mean())]
    return CameraPose.look_at(position, target, config.oblique_fov_deg, (dem.width, dem.height),
                              Projection.PERSPECTIVE)


def draw_views(config: SynthSceneConfig, dem: DemGrid, n_views=None, stream="views", max_retries=10):
    """Camera/sun pairs; degenerate cameras are redrawn a bounded number of times."""
    rng = seeds.rng(config.seed, stream)
    out = []
    for _ in range(config.n_views if n_views is None else n_views):
        for attempt in range(max_retries):
            camera = _draw_camera(rng, config, dem)
            sun = direction_from_angles(rng.uniform(*config.sun_elevation_range),
                                        rng.uniform(*config.sun_azimuth_range))
            if camera.projection is Projection.ORTHO_NADIR or camera.position[2] > dem.elevations.max():
                break
        else:
            raise DegenerateGeometryError(f"no usable camera after {max_retries} draws")
        out.append((camera, sun))
    return out


def generate_views(config: SynthSceneConfig, dem: DemGrid, coeffs: CoefficientMap,
                   poses=None) -> GroundTruthBundle:
    """Render views of the whole scene plus per-crop targets with split-tagged manifests."""
    noise_rng = seeds.rng(config.seed, "noise")
    views = []
    for camera, sun in poses if poses is not None else draw_views(config, dem):
        image = render(dem, coeffs, camera, sun)
        target = image.radiance
        if config.noise_sigma > 0:
            target = target + noise_rng.normal(0.0, config.noise_sigma, target.shape)
        views.append(View(camera, np.asarray(sun), image, target))
    bundle = GroundTruthBundle(dem, coeffs, views, config=config)
    if config.n_samples > 0 and config.crop_size <= min(dem.shape):
        bundle.samples = make_samples(config, dem, coeffs, views, noise_rng)
        bundle.manifests = [s.manifest for s in bundle.samples]
    return bundle


def plan_samples(config, dem, views, lit_areas=None) -> list[SampleManifest]:
    """Crop manifests: per-view budgets proportional to lit area, split by tile.

    ``lit_areas`` (m^2 per view) defaults to the unshadowed valid area of each
    rendered view.
    """
    if lit_areas is None:
        lit_areas = [float((~v.image.shadow & dem.valid).sum()) * dem.gsd**2 for v in views]
    if sum(lit_areas) == 0:
        lit_areas = [1.0] * len(views)
    budget = allocate_crop_budget(lit_areas, config.n_samples)
    eroded = erode_mask(dem.valid, config.crop_size)
    manifests = []
    for vi, (view, count) in enumerate(zip(views, budget)):
        centers = sample_crop_centers(eroded, count, seeds.int_seed(config.seed, f"crops/{vi}"),
                                      config.crop_size, dem.gsd)
        for spec in centers:
            x, y = dem.pixel_to_world(*spec.center)
            tid = tile_id(x, y, config.tile_size_m)
            manifests.append(SampleManifest(
                crop=spec,
                dem_path="dem.sg2r",
                target_path=f"targets/sample_{len(manifests):05d}.sg2r",
                camera=view.camera,
                sun_dir=tuple(float(v) for v in view.sun_dir),
                fov_deg=view.camera.fov_deg,
                footprint=crop_footprint(dem, spec),
                split=split_for_tile(tid, config.split_ratios, config.seed),
                tile_id=tid,
                view_index=vi,
            ))
    return manifests


def make_samples(config, dem, coeffs, views, noise_rng=None):
    """Planned crops with their rendered targets."""
    samples = []
    for m in plan_samples(config, dem, views):
        target = render_sample_target(dem, coeffs, m.camera, m.sun_dir, m.crop)
        if noise_rng is not None and config.noise_sigma > 0:
            target = target + noise_rng.normal(0.0, config.noise_sigma, target.shape)
        samples.append(Sample(m, target))
    return samples


def render_sample_target(dem, coeffs, camera, sun_dir, spec: CropSpec) -> np.ndarray:
    """Target for one crop: the crop rendered on its own (shadows limited to the crop)."""
    return render(dem.crop(spec), coeffs.crop(spec), camera, sun_dir).radiance


def generate_scene(config: SynthSceneConfig) -> GroundTruthBundle:
    dem = generate_dem(config)
    coeffs = generate_coeff_field(config, dem)
    return generate_views(config, dem, coeffs)


def split_counts(manifests) -> dict:
    counts = {s.value: 0 for s in Split}
    for m in manifests:
        counts[Split(m.split).value] += 1
    return counts
