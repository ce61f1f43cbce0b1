"""Command-line entry point: ``geobrdf <command> [options]``."""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import math
import shutil
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io, metrics
from .brdf import BrdfModel, CoefficientMap
from .dataset import Dataset, load_dataset, scene_config, write_dataset
from .errors import GeoBrdfError
from .infer.fit import GdConfig, WELL_CONDITIONED, build_observations, fit_map_gd, fit_map_ls, fit_mse
from .infer.train import (TrainConfig, build_dataset, compare_models, train_predictor, write_loss_curves)
from .infer.unet import load_checkpoint, predictor_forward, save_checkpoint
from .photogeom import CameraPose, Projection, direction_from_angles
from .raster import NormalizationStats, Split, normalize_crop
from .render import render
from .synth import GroundTruthBundle, SynthSceneConfig, View, generate_scene, make_samples, split_counts

log = logging.getLogger("geobrdf")


class CliError(Exception):
    pass


@dataclass
class ExperimentConfig:
    """Everything a run needs in one JSON document; command-line flags win."""

    seed: int = 0
    model: str = "M2"
    synth: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        if path is None:
            return cls()
        path = Path(path)
        if not path.exists():
            raise CliError(f"config file {path} does not exist")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"{path}: invalid JSON ({exc})") from exc
        unknown = set(raw) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise CliError(f"{path}: unknown keys {sorted(unknown)}")
        return cls(**raw)

    def synth_config(self, **overrides) -> SynthSceneConfig:
        d = {"model": self.model, **self.synth, "seed": self.seed}
        d.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return SynthSceneConfig.from_dict(d)
        except TypeError as exc:
            raise CliError(f"bad synth config: {exc}") from exc

    def train_config(self, **overrides) -> TrainConfig:
        d = {**self.train, "seed": self.seed}
        d.update({k: v for k, v in overrides.items() if v is not None})
        for key in ("encoder_widths", "decoder_widths"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return TrainConfig(**d)
        except TypeError as exc:
            raise CliError(f"bad train config: {exc}") from exc


@contextlib.contextmanager
def staged_output(out, force):
    """Write into a sibling staging directory and move it into place on success."""
    out = Path(out)
    if out.exists() and (not out.is_dir() or any(out.iterdir())) and not force:
        raise CliError(f"output {out} exists and is not empty (use --force to overwrite)")
    stage = out.parent / f".{out.name}.partial"
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir(parents=True)
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out) if out.is_dir() else out.unlink()
    stage.rename(out)


def _experiment(args) -> ExperimentConfig:
    exp = ExperimentConfig.load(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        exp.seed = args.seed
    if getattr(args, "model", None) is not None:
        exp.model = BrdfModel(args.model).value
    return exp


def _dataset(path, with_views=True) -> Dataset:
    if path is None:
        raise CliError("--dataset is required")
    return load_dataset(path, with_views)


def _print_splits(manifests):
    counts = split_counts(manifests)
    print(f"samples: {len(manifests)}  " + "  ".join(f"{k}={v}" for k, v in counts.items()))


# -- commands ----------------------------------------------------------------

def cmd_synth_gen(args) -> int:
    exp = _experiment(args)
    overrides = dict(n_views=args.views, n_samples=args.samples, dem_size=args.dem_size,
                     crop_size=args.crop_size, alpha=args.alpha, noise_sigma=args.noise)
    if args.nadir_only:
        overrides["view_mix"] = 1.0
    config = exp.synth_config(**overrides)
    with staged_output(args.out, args.force) as stage:
        bundle = generate_scene(config)
        write_dataset(bundle, stage)
    print(f"wrote dataset {args.out}: {config.dem_size}x{config.dem_size} DEM, {len(bundle.views)} views, "
          f"model {config.model.value}")
    _print_splits(bundle.manifests)
    return 0


def cmd_sample_crops(args) -> int:
    data = _dataset(args.dataset)
    if not data.truth_path.exists():
        raise CliError(f"{data.root} has no truth/ directory to render crops from")
    exp = _experiment(args)
    base = scene_config(data) or exp.synth_config()
    config = dataclasses.replace(base, **{k: v for k, v in dict(
        n_samples=args.samples, crop_size=args.crop_size, seed=args.seed).items() if v is not None})
    truth = io.load_coeff_map(data.truth_path)
    views = [View(v.camera, v.sun_dir, render(data.dem, truth, v.camera, v.sun_dir), v.target) for v in data.views]
    with staged_output(args.out, args.force) as stage:
        samples = make_samples(config, data.dem, truth, views)
        bundle = GroundTruthBundle(data.dem, truth, views, [s.manifest for s in samples], samples, config)
        write_dataset(bundle, stage)
    _print_splits(bundle.manifests)
    return 0


def _uniform_from_samples(dem, samples, model):
    items = build_dataset(dem, samples, model).items
    return metrics.uniform_baseline(items, model)


def _eval_split(data: Dataset, split) -> list:
    samples = data.split(split)
    if not samples:
        raise CliError(f"dataset has no {Split(split).value} samples to evaluate")
    return samples


def cmd_fit(args) -> int:
    exp = _experiment(args)
    data = _dataset(args.dataset)
    if not data.views:
        raise CliError(f"{data.root} has no full-scene views to fit")
    model = BrdfModel(exp.model)
    mode = args.mode or exp.fit.get("mode", "ls")
    with staged_output(args.out, args.force) as stage:
        obs = build_observations(data.dem, data.views, model)
        ls = fit_map_ls(obs)
        if mode == "ls":
            coeffs = ls.coeffs
        elif mode == "gd":
            gd = GdConfig(**{**exp.fit.get("gd", {}), **({"steps": args.steps} if args.steps else {}),
                             "seed": exp.seed})
            coeffs = fit_map_gd(obs, gd).coeffs
        else:
            raise CliError(f"unknown fit mode {mode!r}")
        uniform = metrics.uniform_baseline(obs, model)
        filled = metrics.fill_unobserved(coeffs, ls.observed, uniform)
        io.save_coeff_map(stage, filled)
        io.write_raster(stage / "observed.sg2r", ls.observed.astype(np.uint8), "u8")
        well = ls.well_conditioned()
        report = {
            "model": model.value,
            "mode": mode,
            "coverage": ls.coverage,
            "well_conditioned_fraction": float(well.mean()),
            "fit_mse": fit_mse(obs, filled),
            "uniform": [float(v) for v in uniform],
        }
        if data.truth_path.exists():
            truth = io.load_coeff_map(data.truth_path)
            if truth.model is model:
                err = (filled.values - truth.values)[:, ls.observed]
                err_well = (filled.values - truth.values)[:, well]
                report["recovery_rmse"] = float(np.sqrt(np.mean(err**2))) if err.size else math.nan
                report["recovery_max_abs"] = float(np.max(np.abs(err))) if err.size else math.nan
                report["recovery_max_abs_well_conditioned"] = \
                    float(np.max(np.abs(err_well))) if err_well.size else math.nan
        io.write_json(stage / "fit.json", report)
        reports = _report_pair(data, {"svbrdf": filled}, (model, uniform), args.split, stage)
    print(f"fit {model.value} ({mode}): coverage {100 * ls.coverage:.1f}% "
          f"(well conditioned, cond < {WELL_CONDITIONED:g}: {100 * report['well_conditioned_fraction']:.1f}%)")
    if "recovery_rmse" in report:
        print(f"recovery vs truth: rmse {report['recovery_rmse']:.3g}, max {report['recovery_max_abs']:.3g}")
    print(metrics.format_reports(reports))
    return 0


def _report_pair(data, methods, uniform, split, stage):
    reports = metrics.evaluate_maps(data.dem, _eval_split(data, split), methods, uniform)
    metrics.write_reports_csv(stage / "eval.csv", reports)
    (stage / "eval.txt").write_text(metrics.format_reports(reports) + "\n")
    return reports


def cmd_train(args) -> int:
    exp = _experiment(args)
    data = _dataset(args.dataset, with_views=False)
    model = BrdfModel(exp.model)
    config = exp.train_config(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                              max_iterations=args.max_iterations)
    with staged_output(args.out, args.force) as stage:
        ds = build_dataset(data.dem, data.samples, model)
        result = train_predictor(ds.subset(Split.TRAIN), ds.subset(Split.VAL), config)
        save_checkpoint(result.net, stage / "predictor.sg2n",
                        extra={"dataset_std": ds.stats.dataset_std, "train_config": _jsonable(config)})
        write_loss_curves(stage / "loss_curves.csv", [(e, s, model, m) for e, s, m in result.curves])
        val = ds.subset(Split.VAL)
        x = np.stack([it.crop for it in val.items])
        neg = float(np.mean([c.negative_fraction() for c in predictor_forward(result.net, x)]))
        summary = {"model": model.value, "iterations": result.iterations,
                   "initial_train_mse": result.initial_train_mse, "final_train_mse": result.final_train_mse,
                   "final_val_mse": result.final_val_mse, "val_negative_coefficient_fraction": neg}
        io.write_json(stage / "train.json", summary)
    log.info("negative coefficient fraction on val: %.4f", neg)
    print(f"trained {model.value} for {result.iterations} iterations: train mse "
          f"{result.initial_train_mse:.4g} -> {result.final_train_mse:.4g}, val mse {result.final_val_mse:.4g}")
    print(f"negative coefficients on val: {100 * neg:.2f}%")
    return 0


def _jsonable(config):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(config).items()}


def _load_predictor(path):
    path = Path(path)
    if not path.exists():
        raise CliError(f"checkpoint {path} does not exist")
    net, extra = load_checkpoint(path)
    if "dataset_std" not in extra:
        raise CliError(f"{path} lacks the normalization statistics")
    return net, NormalizationStats(extra["dataset_std"])


def _predict_fn(net, stats, dem):
    def predict(_, sample):
        crop = dem.crop(sample.manifest.crop)
        return predictor_forward(net, normalize_crop(np.where(crop.valid, crop.elevations, 0.0), stats))
    return predict


def cmd_predict(args) -> int:
    data = _dataset(args.dataset, with_views=False)
    net, stats = _load_predictor(args.checkpoint)
    samples = _eval_split(data, args.split)
    predict = _predict_fn(net, stats, data.dem)
    with staged_output(args.out, args.force) as stage:
        index = []
        for i, s in enumerate(samples):
            stem = Path(s.manifest.target_path).stem
            io.save_coeff_map(stage, predict(i, s), stem=stem)
            index.append({"target_path": s.manifest.target_path, "coeffs": f"{stem}.json"})
        with open(stage / "predictions.jsonl", "w") as fh:
            for row in index:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"predicted {net.model.value} coefficient maps for {len(samples)} {Split(args.split).value} samples")
    return 0


def cmd_eval(args) -> int:
    data = _dataset(args.dataset, with_views=False)
    sources = [args.coeffs, args.predictions, args.checkpoint]
    if sum(s is not None for s in sources) != 1:
        raise CliError("give exactly one of --coeffs, --predictions, --checkpoint")
    if args.coeffs:
        method = io.load_coeff_map(args.coeffs)
        model = method.model
    elif args.checkpoint:
        net, stats = _load_predictor(args.checkpoint)
        method, model = _predict_fn(net, stats, data.dem), net.model
    else:
        root = Path(args.predictions)
        if not (root / "predictions.jsonl").exists():
            raise CliError(f"{root} has no predictions.jsonl")
        rows = [json.loads(line) for line in (root / "predictions.jsonl").read_text().splitlines() if line]
        by_target = {r["target_path"]: root / r["coeffs"] for r in rows}

        def method(_, sample):
            if sample.manifest.target_path not in by_target:
                raise CliError(f"no prediction for {sample.manifest.target_path}")
            return io.load_coeff_map(by_target[sample.manifest.target_path])

        model = io.load_coeff_map(next(iter(by_target.values()))).model
    uniform = _uniform_from_samples(data.dem, data.split(Split.TRAIN) or data.samples, model)
    with staged_output(args.out, args.force) as stage:
        reports = _report_pair(data, {"svbrdf": method}, (model, uniform), args.split, stage)
    print(metrics.format_reports(reports))
    return 0


def _camera_for(dem, args) -> CameraPose:
    cx, cy = dem.pixel_to_world((dem.height - 1) / 2, (dem.width - 1) / 2)
    top = float(np.max(dem.elevations[dem.valid]))
    altitude = top + args.altitude
    if args.nadir or args.tilt == 0:
        return CameraPose.nadir([cx, cy, altitude], image_size=(dem.width, dem.height))
    tilt, az = math.radians(args.tilt), math.radians(args.cam_az)
    off = args.altitude * math.tan(tilt)
    position = [cx - off * math.sin(az), cy - off * math.cos(az), altitude]
    target = [cx, cy, float(np.mean(dem.elevations[dem.valid]))]
    return CameraPose.look_at(position, target, args.fov, (dem.width, dem.height), Projection.PERSPECTIVE)


def cmd_render(args) -> int:
    if args.dataset is None and args.dem is None:
        raise CliError("give --dataset or --dem")
    dem = io.load_dem(args.dem) if args.dem else _dataset(args.dataset, with_views=False).dem
    if args.uniform is not None:
        values = [float(v) for v in args.uniform.split(",")]
        coeffs = CoefficientMap.uniform(BrdfModel(args.model or "M2"), values, dem.shape)
    elif args.coeffs:
        coeffs = io.load_coeff_map(args.coeffs)
    elif args.dataset and (Path(args.dataset) / "truth" / "coeffs.json").exists():
        coeffs = io.load_coeff_map(Path(args.dataset) / "truth" / "coeffs.json")
    else:
        raise CliError("no coefficients: give --coeffs or --uniform")
    sun = direction_from_angles(args.sun_elev, args.sun_az)
    camera = _camera_for(dem, args)
    with staged_output(args.out, args.force) as stage:
        image = render(dem, coeffs, camera, sun)
        meta = {"camera": camera.to_dict(), "sun_dir": [float(v) for v in sun], "model": coeffs.model.value,
                "shadow_fraction": float(image.shadow.mean())}
        io.write_raster(stage / "image.sg2r", image.radiance, "f32", meta)
        io.export_png16(stage / "image.png", image.display())
        io.export_pgm(stage / "image.pgm", image.display())
    r = image.radiance
    print(f"rendered {r.shape[1]}x{r.shape[0]} image: radiance [{r.min():.4g}, {r.max():.4g}], "
          f"{100 * image.shadow.mean():.1f}% shadowed")
    return 0


def cmd_compare_models(args) -> int:
    exp = _experiment(args)
    data = _dataset(args.dataset)
    config = exp.train_config(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                              max_iterations=args.max_iterations)
    with staged_output(args.out, args.force) as stage:
        table = compare_models(data, args.models, config)
        table.write_csv(stage / "comparison.csv")
        (stage / "comparison.txt").write_text(table.to_text() + "\n")
        write_loss_curves(stage / "loss_curves.csv", table.curve_rows())
    print(table.to_text())
    return 0


# -- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geobrdf", description="Spatially varying BRDF estimation from DEMs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--seed", type=int)
        if out:
            sp.add_argument("--out", required=True)
            sp.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
        return sp

    models = [m.value for m in BrdfModel]

    sp = common(sub.add_parser("synth-gen", help="generate a synthetic dataset"))
    sp.add_argument("--model", choices=models)
    sp.add_argument("--views", type=int)
    sp.add_argument("--nadir-only", action="store_true")
    sp.add_argument("--samples", type=int)
    sp.add_argument("--dem-size", type=int)
    sp.add_argument("--crop-size", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--noise", type=float)
    sp.set_defaults(func=cmd_synth_gen)

    sp = common(sub.add_parser("sample-crops", help="resample crops of an existing synthetic dataset"))
    sp.add_argument("--dataset")
    sp.add_argument("--samples", type=int)
    sp.add_argument("--crop-size", type=int)
    sp.set_defaults(func=cmd_sample_crops)

    sp = common(sub.add_parser("fit", help="per-pixel inverse rendering from the full-scene views"))
    sp.add_argument("--dataset")
    sp.add_argument("--model", choices=models)
    sp.add_argument("--mode", choices=["ls", "gd"])
    sp.add_argument("--steps", type=int)
    sp.add_argument("--split", default="test", choices=[s.value for s in Split])
    sp.set_defaults(func=cmd_fit)

    for name, func, helptext in [("train", cmd_train, "train the predictor network"),
                                 ("compare-models", cmd_compare_models, "train one predictor per model")]:
        sp = common(sub.add_parser(name, help=helptext))
        sp.add_argument("--dataset")
        if name == "train":
            sp.add_argument("--model", choices=models)
        else:
            sp.add_argument("--models", nargs="+", required=True, choices=models)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--max-iterations", type=int)
        sp.set_defaults(func=func)

    sp = common(sub.add_parser("predict", help="predict coefficient maps for dataset crops"))
    sp.add_argument("--dataset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", default="test", choices=[s.value for s in Split])
    sp.set_defaults(func=cmd_predict)

    sp = common(sub.add_parser("eval", help="compare an SVBRDF against the normalized uniform baseline"))
    sp.add_argument("--dataset")
    sp.add_argument("--coeffs", help="full-scene coefficient map header (JSON)")
    sp.add_argument("--predictions", help="output directory of the predict command")
    sp.add_argument("--checkpoint")
    sp.add_argument("--split", default="test", choices=[s.value for s in Split])
    sp.set_defaults(func=cmd_eval)

    sp = common(sub.add_parser("render", help="render a scene under a chosen camera and sun"))
    sp.add_argument("--dataset")
    sp.add_argument("--dem")
    sp.add_argument("--coeffs")
    sp.add_argument("--uniform", help="comma-separated coefficients applied everywhere")
    sp.add_argument("--model", choices=models)
    sp.add_argument("--sun-elev", type=float, default=45.0)
    sp.add_argument("--sun-az", type=float, default=0.0, help="degrees clockwise from north")
    sp.add_argument("--nadir", action="store_true")
    sp.add_argument("--tilt", type=float, default=30.0, help="oblique off-nadir angle in degrees")
    sp.add_argument("--cam-az", type=float, default=0.0)
    sp.add_argument("--altitude", type=float, default=1500.0, help="meters above the highest point")
    sp.add_argument("--fov", type=float, default=45.0)
    sp.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, GeoBrdfError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
