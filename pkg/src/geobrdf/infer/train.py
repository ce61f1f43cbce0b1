"""Training the predictor through the differentiable renderer."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .. import brdf as _brdf
from .. import seeds
from ..brdf import BrdfModel
from ..errors import InvalidInputError, TrainingInstabilityError
from ..photogeom import view_light_field
from ..raster import NormalizationStats, Split, normalize_crop
from ..render import shadow_mask
from . import tape
from .fit import build_observations, fit_map_ls, fit_mse
from .unet import NetConfig, PredictorNet

log = logging.getLogger(__name__)


@dataclass(eq=False)
class TrainItem:
    crop: np.ndarray  # normalized elevations (H, W)
    basis: np.ndarray  # (P, H, W)
    lit: np.ndarray  # valid and unshadowed (H, W)
    shadow: np.ndarray
    target: np.ndarray
    tile_id: int
    split: Split


@dataclass(eq=False)
class PredictorDataset:
    model: BrdfModel
    items: list
    stats: NormalizationStats

    def __len__(self):
        return len(self.items)

    def subset(self, split) -> "PredictorDataset":
        split = Split(split)
        return PredictorDataset(self.model, [it for it in self.items if it.split is split], self.stats)

    def arrays(self, idx, mask_shadows=True):
        its = [self.items[i] for i in idx]
        x = np.stack([it.crop for it in its])[:, None]
        basis = np.stack([it.basis for it in its])
        lit = np.stack([it.lit for it in its])
        target = np.stack([it.target for it in its])
        mask = lit.copy() if mask_shadows else np.ones_like(lit)
        return x, basis, lit, target, mask

    def augmented(self, idx, rng, mask_shadows=True):
        """Batch with a random dihedral transform per crop.

        Inputs, basis, lit mask and targets are transformed together, so the
        coefficient map that reproduces the target transforms the same way.
        """
        x, basis, lit, target, mask = self.arrays(idx, mask_shadows)
        for i in range(len(x)):
            k, flip = int(rng.integers(4)), bool(rng.integers(2))
            for arr in (x, basis, lit, target, mask):
                a = np.rot90(arr[i], k, axes=(-2, -1))
                arr[i] = a[..., ::-1] if flip else a
        return x, basis, lit, target, mask

    def tile_ids(self):
        return {it.tile_id for it in self.items}


def build_dataset(dem, samples, model, stats=None) -> PredictorDataset:
    """Turn (manifest, target) samples into network-ready arrays.

    ``stats`` defaults to the std of raw elevations over the training crops.
    """
    model = BrdfModel(model)
    samples = list(samples)
    if stats is None:
        train = [dem.crop(s.manifest.crop).elevations for s in samples if Split(s.manifest.split) is Split.TRAIN]
        stats = NormalizationStats.from_rasters(train or [dem.elevations])
    items = []
    for s in samples:
        m = s.manifest
        crop = dem.crop(m.crop)
        geometry = view_light_field(crop, m.camera, m.sun_dir)
        shadow = shadow_mask(crop, m.sun_dir)
        items.append(TrainItem(
            crop=normalize_crop(np.where(crop.valid, crop.elevations, 0.0), stats),
            basis=_brdf.basis(model, geometry),
            lit=crop.valid & ~shadow,
            shadow=shadow,
            target=np.asarray(s.target, dtype=np.float64),
            tile_id=m.tile_id,
            split=Split(m.split),
        ))
    return PredictorDataset(model, items, stats)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 3e-3
    optimizer: str = "adam"
    seed: int = 0
    leaky_slope: float = 0.01
    max_iterations: int | None = None
    mask_shadows: bool = True
    augment: bool = True
    weight_decay: float = 0.0
    encoder_widths: tuple = (8, 16, 32, 64)
    decoder_widths: tuple = (48, 24, 12, 8)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")

    def net_config(self) -> NetConfig:
        return NetConfig(self.encoder_widths, self.decoder_widths, self.leaky_slope,
                         seed=seeds.int_seed(self.seed, "init"))


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1 - self.beta1) * p.grad
            v *= self.beta2
            v += (1 - self.beta2) * p.grad**2
            step = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                step = step + self.weight_decay * p.data
            p.data = p.data - self.lr * step


class SGD:
    def __init__(self, params, lr):
        self.params, self.lr = params, lr

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad


def rendering_loss(net, x, basis, lit, target, mask):
    coeffs = net(x)
    return tape.masked_mse(tape.shade(coeffs, basis, lit), target, mask)


def evaluate_predictor(net, dataset: PredictorDataset, batch_size=32, mask_shadows=True) -> float:
    """Inference-mode rendering MSE pooled over all pixels of ``dataset``."""
    if not len(dataset):
        raise InvalidInputError("empty dataset")
    was = net.training
    net.eval()
    sse, count = 0.0, 0
    try:
        for start in range(0, len(dataset), batch_size):
            idx = range(start, min(start + batch_size, len(dataset)))
            x, basis, lit, target, mask = dataset.arrays(idx, mask_shadows)
            pred = tape.shade(net(x), basis, lit).data
            sse += float(np.sum(np.where(mask, pred - target, 0.0) ** 2))
            count += int(mask.sum())
    finally:
        net.train(was)
    return sse / max(count, 1)


def check_disjoint(train: PredictorDataset, val: PredictorDataset) -> None:
    if not len(train) or not len(val):
        raise InvalidInputError("train and validation splits must both be non-empty")
    shared = train.tile_ids() & val.tile_ids()
    if shared:
        raise InvalidInputError(f"tiles {sorted(shared)[:5]} appear in both train and validation")


@dataclass(eq=False)
class TrainResult:
    net: PredictorNet
    curves: list = field(default_factory=list)  # (epoch, split, mse)
    iterations: int = 0
    initial_train_mse: float = math.nan
    final_train_mse: float = math.nan
    final_val_mse: float = math.nan

    def curve(self, split):
        return [mse for _, s, mse in self.curves if s == split]


def train_predictor(train: PredictorDataset, val: PredictorDataset, config: TrainConfig | None = None,
                    net: PredictorNet | None = None) -> TrainResult:
    """Fit the predictor so its rendered coefficients match the training targets."""
    config = config or TrainConfig()
    check_disjoint(train, val)
    model = train.model
    net = net or PredictorNet(model, config.net_config())
    params = net.parameters()
    opt = Adam(params, config.learning_rate, weight_decay=config.weight_decay) if config.optimizer == "adam" else SGD(params, config.learning_rate)
    rng = seeds.rng(config.seed, "batches")

    result = TrainResult(net)
    result.initial_train_mse = evaluate_predictor(net, train, mask_shadows=config.mask_shadows)
    result.curves.append((0, "train", result.initial_train_mse))
    result.curves.append((0, "val", evaluate_predictor(net, val, mask_shadows=config.mask_shadows)))
    it = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        losses = []
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            if config.max_iterations is not None and it >= config.max_iterations:
                break
            net.train()
            net.zero_grad()
            idx = order[start:start + config.batch_size]
            batch = train.augmented(idx, rng, config.mask_shadows) if config.augment else train.arrays(idx, config.mask_shadows)
            loss = rendering_loss(net, *batch)
            if not np.isfinite(loss.data):
                raise TrainingInstabilityError(f"non-finite loss at epoch {epoch}, batch {b}", b, epoch)
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
            it += 1
        if not losses:
            break
        result.curves.append((epoch, "train", float(np.mean(losses))))
        result.curves.append((epoch, "val", evaluate_predictor(net, val, mask_shadows=config.mask_shadows)))
        log.debug("epoch %d train %.6f val %.6f", epoch, result.curves[-2][2], result.curves[-1][2])
    result.iterations = it
    result.final_train_mse = evaluate_predictor(net, train, mask_shadows=config.mask_shadows)
    result.final_val_mse = evaluate_predictor(net, val, mask_shadows=config.mask_shadows)
    return result


def write_loss_curves(path, rows) -> None:
    """rows: iterable of (epoch, split, model, mse)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "split", "model", "mse"])
        for epoch, split, model, mse in rows:
            w.writerow([epoch, split, BrdfModel(model).value, repr(float(mse))])


@dataclass
class ComparisonRow:
    model: BrdfModel
    n_params: int
    fit_mse: float  # exact per-pixel least squares on the scene views
    final_train_mse: float
    final_val_mse: float
    curves: list


@dataclass
class ComparisonTable:
    rows: list

    def csv_rows(self):
        yield ["model", "n_params", "fit_mse", "train_mse", "val_mse"]
        for r in self.rows:
            yield [r.model.value, r.n_params, repr(r.fit_mse), repr(r.final_train_mse), repr(r.final_val_mse)]

    def curve_rows(self):
        for r in self.rows:
            for epoch, split, mse in r.curves:
                yield epoch, split, r.model, mse

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.csv_rows())

    def to_text(self) -> str:
        rows = list(self.csv_rows())
        header, body = rows[0], [[r[0], str(r[1])] + [f"{float(v):.6g}" for v in r[2:]] for r in rows[1:]]
        widths = [max(len(str(row[i])) for row in [header] + body) for i in range(len(header))]
        lines = ["  ".join(str(v).rjust(w) for v, w in zip(row, widths)) for row in [header] + body]
        return "\n".join(lines)


def common_fit_mse(bundle, models) -> dict:
    """Exact per-pixel LS fit MSE of each model over pixels observed by every model."""
    fits = {}
    for model in dict.fromkeys(BrdfModel(m) for m in models):
        obs = build_observations(bundle.dem, bundle.views, model)
        fits[model] = (obs, fit_map_ls(obs))
    common = np.logical_and.reduce([f.observed for _, f in fits.values()])
    out = {}
    for model, (obs, f) in fits.items():
        sub = type(obs)(obs.model, obs.basis, obs.targets, obs.shadow, obs.valid & common[None], obs.geometries)
        out[model] = fit_mse(sub, f.coeffs)
    return out


def compare_models(bundle, models, config: TrainConfig | None = None) -> ComparisonTable:
    """Train one predictor per model on identical data and seeds."""
    models = [BrdfModel(m) for m in models]
    if len(models) < 2:
        raise InvalidInputError("compare_models needs at least two models")
    config = config or TrainConfig()
    fit = common_fit_mse(bundle, models) if len(bundle.views) else {}
    rows = []
    for model in models:
        data = build_dataset(bundle.dem, bundle.samples, model)
        result = train_predictor(data.subset(Split.TRAIN), data.subset(Split.VAL), config)
        rows.append(ComparisonRow(model, model.n_params, fit.get(model, math.nan), result.final_train_mse,
                                  result.final_val_mse, result.curves))
    return ComparisonTable(rows)
