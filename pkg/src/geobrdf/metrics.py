"""Photometric image metrics and the spatially uniform baseline."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .brdf import BrdfModel, CoefficientMap
from .errors import InvalidInputError
from .infer.fit import PixelObservations, fit_pixel_ls
from .render import render

EXACT = "exact"  # PSNR of identical images
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def _mask(valid, shape):
    if valid is None:
        return np.ones(shape, bool)
    valid = np.asarray(valid, bool)
    if valid.shape != shape:
        raise InvalidInputError("valid mask shape differs from the images")
    return valid


def mse(a, b, valid=None) -> float:
    a, b = _pair(a, b)
    m = _mask(valid, a.shape)
    if not m.any():
        raise InvalidInputError("no valid pixels")
    return float(np.mean((a[m] - b[m]) ** 2))


def default_peak(target) -> float:
    peak = float(np.max(target))
    if not peak > 0:
        raise InvalidInputError("peak must be positive; ground truth has no positive pixel")
    return peak


def psnr(a, b, peak=None, valid=None):
    """10 log10(peak^2 / mse) in dB, or ``EXACT`` when the images agree exactly.

    ``peak`` defaults to the maximum of ``b`` (the ground truth).
    """
    a, b = _pair(a, b)
    peak = default_peak(b) if peak is None else float(peak)
    if not peak > 0:
        raise InvalidInputError("peak must be > 0")
    err = mse(a, b, valid)
    if err == 0:
        return EXACT
    return 10.0 * math.log10(peak * peak / err)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(a, b, peak=None) -> np.ndarray:
    """Local SSIM over every full window position (valid region)."""
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise InvalidInputError(f"SSIM needs a 2-D raster of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    peak = default_peak(b) if peak is None else float(peak)
    if not peak > 0:
        raise InvalidInputError("peak must be > 0")
    w = gaussian_window()
    filt = lambda x: convolve2d(x, w, mode="valid")  # noqa: E731  (window is symmetric)
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))


def ssim(a, b, peak=None) -> float:
    return float(np.mean(ssim_map(a, b, peak)))


def range_normalize(rendered, target, valid=None) -> np.ndarray:
    """Affine map taking the (min, max) of ``rendered`` onto that of ``target``.

    A constant ``rendered`` maps to the target mean.
    """
    r, t = _pair(rendered, target)
    m = _mask(valid, r.shape)
    if not m.any():
        raise InvalidInputError("no valid pixels")
    rlo, rhi = r[m].min(), r[m].max()
    tlo, thi = t[m].min(), t[m].max()
    if rhi == rlo:
        return np.full_like(r, t[m].mean())
    return tlo + (r - rlo) * ((thi - tlo) / (rhi - rlo))


def uniform_baseline(observations, model) -> np.ndarray:
    """One coefficient vector fit by least squares to every usable observation.

    ``observations`` is an iterable of objects with ``basis`` (..., P, H, W),
    ``targets``/``target`` and ``usable`` arrays, or (basis, target, usable)
    triples.  Scene observations with a leading view axis are accepted too.
    """
    model = BrdfModel(model)
    p = model.n_params
    rows, ys = [], []
    if hasattr(observations, "basis"):
        observations = [observations]
    for item in observations:
        if isinstance(item, tuple):
            basis, target, usable = item
        else:
            basis = item.basis
            target = item.targets if hasattr(item, "targets") else item.target
            usable = item.usable if hasattr(item, "usable") else item.lit
        basis = np.asarray(basis, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        usable = np.asarray(usable, bool)
        if basis.ndim == 3:  # single (P, H, W) view
            basis = basis[None]
            target, usable = target[None], usable[None]
        if basis.shape[1] != p:
            raise InvalidInputError(f"basis has {basis.shape[1]} channels, {model.value} needs {p}")
        rows.append(np.moveaxis(basis, 1, -1)[usable])
        ys.append(target[usable])
    A = np.concatenate(rows) if rows else np.zeros((0, p))
    y = np.concatenate(ys) if ys else np.zeros(0)
    return fit_pixel_ls(PixelObservations(A, y, None), model).coeffs


@dataclass(frozen=True)
class SampleScore:
    mse: float
    psnr: float | str
    ssim: float


def score_sample(rendered, target, valid=None, peak=None) -> SampleScore:
    peak = default_peak(target) if peak is None else peak
    return SampleScore(mse(rendered, target, valid), psnr(rendered, target, peak, valid), ssim(rendered, target, peak))


@dataclass
class EvalReport:
    """Per-sample scores and their means for one method.

    Aggregate PSNR averages the finite per-sample values; samples reproduced
    exactly are counted in ``n_exact``.
    """

    method: str
    samples: list = field(default_factory=list)

    def add(self, score: SampleScore):
        self.samples.append(score)

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def n_exact(self) -> int:
        return sum(s.psnr == EXACT for s in self.samples)

    @property
    def mse(self) -> float:
        return float(np.mean([s.mse for s in self.samples])) if self.samples else math.nan

    @property
    def psnr(self):
        finite = [s.psnr for s in self.samples if s.psnr != EXACT]
        if not finite:
            return EXACT if self.samples else math.nan
        return float(np.mean(finite))

    @property
    def ssim(self) -> float:
        return float(np.mean([s.ssim for s in self.samples])) if self.samples else math.nan


def fill_unobserved(fit_map: CoefficientMap, observed, uniform) -> CoefficientMap:
    """Replace coefficients of unobserved pixels with the uniform vector."""
    values = np.where(np.asarray(observed, bool)[None], fit_map.values, np.asarray(uniform)[:, None, None])
    return CoefficientMap(fit_map.model, values)


def evaluate_maps(dem, samples, methods: dict, uniform=None) -> list:
    """Score per-crop renders of each coefficient map against the sample targets.

    ``methods`` maps a label to a full-scene CoefficientMap, or to a callable
    ``(index, sample) -> CoefficientMap`` giving the crop's map directly.  When
    ``uniform`` (a (model, coeffs) pair) is given a "uniform-normalized" row is added whose renders are
    range-normalized per sample.
    """
    reports = {name: EvalReport(name) for name in methods}
    if uniform is not None:
        reports["uniform-normalized"] = EvalReport("uniform-normalized")
    for i, sample in enumerate(samples):
        m = sample.manifest
        crop = dem.crop(m.crop)
        target = np.asarray(sample.target, dtype=np.float64)
        peak = default_peak(target)
        for name, cmap in methods.items():
            crop_map = cmap(i, sample) if callable(cmap) else cmap.crop(m.crop)
            rendered = render(crop, crop_map, m.camera, m.sun_dir).radiance
            reports[name].add(score_sample(rendered, target, crop.valid, peak))
        if uniform is not None:
            model, coeffs = uniform
            rendered = render(crop, CoefficientMap.uniform(BrdfModel(model), coeffs, crop.shape), m.camera, m.sun_dir).radiance
            reports["uniform-normalized"].add(
                score_sample(range_normalize(rendered, target, crop.valid), target, crop.valid, peak))
    return list(reports.values())


REPORT_COLUMNS = ["method", "mse", "psnr_db", "ssim", "n_samples", "n_exact"]


def _report_row(r: EvalReport):
    return [r.method, r.mse, r.psnr, r.ssim, r.n, r.n_exact]


def write_reports_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow([v if isinstance(v, (str, int)) else repr(float(v)) for v in _report_row(r)])


def format_reports(reports) -> str:
    """Aligned text table, MSE then PSNR then SSIM."""
    fmt = lambda v: v if isinstance(v, str) else (str(v) if isinstance(v, int) else f"{v:.6g}")  # noqa: E731
    body = [[fmt(v) for v in _report_row(r)] for r in reports]
    rows = [REPORT_COLUMNS] + body
    widths = [max(len(row[i]) for row in rows) for i in range(len(REPORT_COLUMNS))]
    lines = [f"# SSIM: {SSIM_WINDOW}x{SSIM_WINDOW} Gaussian window, sigma={SSIM_SIGMA}, "
             f"K1={SSIM_K1}, K2={SSIM_K2}; peak = max of ground truth"]
    lines += ["  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(row, widths)))
              for row in rows]
    return "\n".join(lines)
