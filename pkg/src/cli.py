import functools
import json
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import click
import numpy as np
import pandas as pd

from . import settings
from .action_set import ActionSet, action_set_for_bundle
from .calibration import (
    DEFAULT_ALPHA,
    DEFAULT_EPSILON,
    DEFAULT_INCREMENTS,
    pare_calibrate,
    select_threshold_f1_under_pare,
)
from .checkpoint import Checkpoint, checkpoint_digest, load_checkpoint, save_checkpoint
from .data import DatasetBundle, destandardize, load_config, prepare_dataset, write_toy_dataset
from .errors import BoundsError, ConfigError, RecourseError
from .evaluate import NOISE_SCALES, NOISE_STD, SWEEP_AXES, TARGET_PRECISION, SweepSettings, evaluate_model, sweep
from .recourse import ALGORITHMS, ALIASES, GRADIENT_DESCENT, compute_recourses, resolve_algorithm
from .training import TrainConfig, select_threshold_max_f1, train

THRESHOLD_POLICIES = ("f1-max", "pare", "pare-then-f1", "fixed")
ALGORITHM_CHOICE = click.Choice(sorted(ALIASES) + list(ALGORITHMS))
DEFAULT_GRIDS = {
    "lambda": [round(0.2 * i, 1) for i in range(11)],
    "threshold": [round(0.1 * i, 1) for i in range(11)],
    "delta_max": [0.25, 0.5, 0.75, 1.0, 1.25, 1.5],
}


def handle_errors(command):
    """Report package errors on stderr and exit with their code"""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except RecourseError as e:
            click.echo(f"Error: {e}", err=True)
            raise SystemExit(e.exit_code)
    return wrapper


def _write_json(path: Path, document: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _out_dir(out: str) -> Path:
    """Create the output directory and attach the sidecar log to it"""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    obj = click.get_current_context().find_root().obj or {}
    settings.configure_logging(level=obj.get("log_level"), out_dir=out_dir)
    return out_dir


def _parse_values(text: Optional[str], axis: str) -> List[float]:
    if not text:
        return list(DEFAULT_GRIDS[axis])
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values must be a comma-separated list of numbers, got {text!r}")


def _load_context(
    checkpoint_path: str,
    config: Optional[str],
    data: Optional[str],
    delta_max: Optional[float],
) -> Tuple[Checkpoint, DatasetBundle, ActionSet]:
    """Checkpoint plus the dataset and action set it was trained with (overridable)"""
    ckpt = load_checkpoint(checkpoint_path)
    dataset = ckpt.meta.get("dataset", {})
    config = config or dataset.get("config")
    if config is None:
        raise ConfigError("no --config given and the checkpoint does not record one")
    data = data or dataset.get("csv")
    bundle = prepare_dataset(config, data, seed=ckpt.meta.get("seed", 0))
    if bundle.n_features != ckpt.params.input_dim:
        raise ConfigError(
            f"dataset encodes {bundle.n_features} columns but the checkpoint expects {ckpt.params.input_dim}")
    aset = action_set_for_bundle(bundle, delta_max if delta_max is not None else ckpt.meta.get("delta_max"))
    return ckpt, bundle, aset


@click.group()
@click.option("--log-level", envvar="RECOURSE_LOG_LEVEL", default=settings.LOG_LEVEL, show_default=True)
@click.pass_context
def cli(ctx, log_level):
    """Recourse-aware training, threshold calibration and evaluation"""
    ctx.obj = {"log_level": log_level}
    settings.configure_logging(level=log_level)


@cli.command()
@click.option("--out", default="data/toy", show_default=True, help="Directory for toy.csv and toy.json")
@click.option("--n", "n_rows", default=200, show_default=True)
@click.option("--seed", default=settings.DEFAULT_SEED, envvar="RECOURSE_SEED", show_default=True)
@click.option("--separation", default=1.0, show_default=True)
@handle_errors
def toy(out, n_rows, seed, separation):
    """Writes a small two-blob dataset and its config"""
    config_path, csv_path = write_toy_dataset(out, n=n_rows, seed=seed, separation=separation)
    click.echo(f"Wrote {csv_path}")
    click.echo(f"Config: {config_path}")


@cli.command(name="train")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "csv_path", type=click.Path(exists=True, dir_okay=False), help="CSV, defaults to the config's")
@click.option("--lambda", "lam", type=float, default=0.8, show_default=True)
@click.option("--delta-max", type=float, help="Action bound in standardized units [default: config]")
@click.option("--epochs", type=int)
@click.option("--batch-size", type=int)
@click.option("--learning-rate", type=float)
@click.option("--seed", default=settings.DEFAULT_SEED, envvar="RECOURSE_SEED", show_default=True)
@click.option("--out", default=settings.DEFAULT_OUT_DIR, envvar="RECOURSE_OUT_DIR", show_default=True)
@handle_errors
def train_command(config_path, csv_path, lam, delta_max, epochs, batch_size, learning_rate, seed, out):
    """Trains with the recourse term and writes checkpoint.json + train_log.jsonl"""
    out_dir = _out_dir(out)
    config = load_config(config_path)
    bundle = prepare_dataset(config_path, csv_path, seed)
    aset = action_set_for_bundle(bundle, delta_max)
    train_config = TrainConfig.for_dataset(
        config, lam=lam, seed=seed, epochs=epochs, batch_size=batch_size, learning_rate=learning_rate)

    log_path = out_dir / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as log:
        def on_epoch(record, _params):
            log.write(json.dumps(record.as_dict(), sort_keys=True) + "\n")

        run = train(bundle, aset, train_config, on_epoch=on_epoch, progress=True)

    meta = {
        "dataset": {
            "name": config.name,
            "config": str(Path(config_path).resolve()),
            "csv": str(Path(csv_path).resolve()) if csv_path else None,
            "columns": list(bundle.columns),
        },
        "seed": seed,
        "lambda": lam,
        "delta_max": aset.delta_max,
        "best_epoch": run.best_epoch,
        "train": {**asdict(train_config), "widths": list(train_config.widths)},
    }
    ckpt = Checkpoint(params=run.params, meta=meta)
    path = save_checkpoint(out_dir / "checkpoint.json", ckpt)
    click.echo(f"Checkpoint: {path} (epoch {run.best_epoch}, threshold {run.params.threshold:.3f})")
    click.echo(f"Digest: {checkpoint_digest(ckpt)}")


@cli.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "csv_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--threshold-policy", type=click.Choice(THRESHOLD_POLICIES), default="pare", show_default=True)
@click.option("--epsilon", type=float, default=DEFAULT_EPSILON, show_default=True)
@click.option("--alpha", type=float, default=DEFAULT_ALPHA, show_default=True)
@click.option("--threshold", type=float, help="Required by the fixed policy")
@click.option("--increments", type=int, default=DEFAULT_INCREMENTS, show_default=True)
@click.option("--algorithm", type=ALGORITHM_CHOICE, default="lp", show_default=True)
@click.option("--delta-max", type=float)
@click.option("--seed", default=settings.DEFAULT_SEED, envvar="RECOURSE_SEED", show_default=True)
@click.option("--jobs", default=settings.DEFAULT_JOBS, envvar="RECOURSE_JOBS", show_default=True)
@click.option("--out", default=settings.DEFAULT_OUT_DIR, envvar="RECOURSE_OUT_DIR", show_default=True)
@handle_errors
def calibrate(checkpoint_path, config_path, csv_path, threshold_policy, epsilon, alpha, threshold,
              increments, algorithm, delta_max, seed, jobs, out):
    """Sets the decision threshold and writes the updated checkpoint + certificate.json"""
    if threshold_policy == "fixed" and threshold is None:
        raise ConfigError("--threshold-policy fixed needs --threshold")
    if threshold_policy != "fixed" and threshold is not None:
        raise ConfigError("--threshold only applies to --threshold-policy fixed")
    out_dir = _out_dir(out)
    ckpt, bundle, aset = _load_context(checkpoint_path, config_path, csv_path, delta_max)
    params = ckpt.params
    certificate: Dict[str, Any] = {"policy": threshold_policy}

    if threshold_policy == "fixed":
        params = params.with_threshold(threshold)
    elif threshold_policy == "f1-max":
        params = params.with_threshold(select_threshold_max_f1(params, bundle))
    else:
        X_cal, _ = bundle.rows("validation")
        params, result = pare_calibrate(params, aset, X_cal, epsilon, alpha, algorithm, jobs=jobs, seed=seed)
        certificate.update(result.as_dict())
        if threshold_policy == "pare-then-f1":
            params = params.with_threshold(select_threshold_f1_under_pare(params, bundle, result.tau, increments))
    certificate["threshold"] = params.threshold

    updated = Checkpoint(params=params, meta=ckpt.meta, calibration=certificate)
    path = save_checkpoint(out_dir / "checkpoint.json", updated)
    _write_json(out_dir / "certificate.json", certificate)
    click.echo(f"Threshold: {params.threshold:.4f} ({threshold_policy})")
    if "k_star" in certificate:
        click.echo(f"k* = {certificate['k_star']} of n = {certificate['n']} recourse points")
    click.echo(f"Checkpoint: {path}")


def _read_ids(ids: Optional[str], ids_file: Optional[str]) -> Optional[List[int]]:
    if ids is None and ids_file is None:
        return None
    text = ids or Path(ids_file).read_text(encoding="utf-8").replace("\n", ",")
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("row ids must be integers")


def recourse_record(bundle: DatasetBundle, row: int, x: np.ndarray, result) -> Dict[str, Any]:
    """Feature-level record in raw units"""
    before = destandardize(bundle, x)
    after = destandardize(bundle, x + result.delta)
    return {
        "row_id": int(bundle.row_ids[row]),
        "split": str(bundle.split[row]),
        "algorithm": result.algorithm,
        "valid": bool(result.valid),
        "post_score": result.post_score,
        "cost_l1": result.cost_l1,
        "cost_l2": result.cost_l2,
        "surrogate_warning": result.surrogate_warning,
        "features": [
            {"name": name, "x": float(a), "x_new": float(b), "delta": float(b - a)}
            for name, a, b in zip(bundle.columns, before, after)
        ],
    }


@cli.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "csv_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--ids", help="Comma-separated CSV row ids")
@click.option("--ids-file", type=click.Path(exists=True, dir_okay=False), help="File with one row id per line")
@click.option("--split", type=click.Choice(["train", "validation", "test"]), default="test", show_default=True)
@click.option("--algorithm", type=ALGORITHM_CHOICE, default="lp", show_default=True)
@click.option("--surrogate", type=click.Choice(["lime", "gradient"]), default="lime", show_default=True)
@click.option("--delta-max", type=float)
@click.option("--seed", default=settings.DEFAULT_SEED, envvar="RECOURSE_SEED", show_default=True)
@click.option("--jobs", default=settings.DEFAULT_JOBS, envvar="RECOURSE_JOBS", show_default=True)
@click.option("--out", default=settings.DEFAULT_OUT_DIR, envvar="RECOURSE_OUT_DIR", show_default=True)
@handle_errors
def recourse(checkpoint_path, config_path, csv_path, ids, ids_file, split, algorithm, surrogate,
             delta_max, seed, jobs, out):
    """Computes recourse for a split or for given rows and writes recourse.json"""
    out_dir = _out_dir(out)
    ckpt, bundle, aset = _load_context(checkpoint_path, config_path, csv_path, delta_max)
    algorithm = resolve_algorithm(algorithm)

    wanted = _read_ids(ids, ids_file)
    if wanted is None:
        rows = bundle.indices(split)
    else:
        position = {int(r): i for i, r in enumerate(bundle.row_ids)}
        unknown = [r for r in wanted if r not in position]
        if unknown:
            raise BoundsError(f"unknown row ids (dropped or out of range): {unknown[:10]}")
        rows = np.array([position[r] for r in wanted], dtype=int)

    options = {"surrogate": surrogate} if algorithm == "linear-approximation" else {}
    results = compute_recourses(ckpt.params, aset, bundle.X[rows], algorithm, jobs=jobs, seed=seed, **options)
    records = [recourse_record(bundle, row, bundle.X[row], r) for row, r in zip(rows, results)]
    path = _write_json(out_dir / "recourse.json", {
        "threshold": ckpt.params.threshold,
        "positive_label_meaning": bundle.positive_label_meaning,
        "records": records,
    })
    valid = sum(r["valid"] for r in records)
    click.echo(f"{valid}/{len(records)} instances have recourse ({algorithm})")
    click.echo(f"Records: {path}")


@cli.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "csv_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--algorithm", "algorithms", type=ALGORITHM_CHOICE, multiple=True,
              help="Repeatable [default: all three]")
@click.option("--split", type=click.Choice(["train", "validation", "test"]), default="test", show_default=True)
@click.option("--noise", type=float, default=NOISE_STD, show_default=True)
@click.option("--noise-scale", type=click.Choice(NOISE_SCALES), default="std", show_default=True)
@click.option("--target-precision", type=float, default=TARGET_PRECISION, show_default=True)
@click.option("--probe/--no-probe", default=True, show_default=True)
@click.option("--delta-max", type=float)
@click.option("--seed", default=settings.DEFAULT_SEED, envvar="RECOURSE_SEED", show_default=True)
@click.option("--jobs", default=settings.DEFAULT_JOBS, envvar="RECOURSE_JOBS", show_default=True)
@click.option("--out", default=settings.DEFAULT_OUT_DIR, envvar="RECOURSE_OUT_DIR", show_default=True)
@handle_errors
def evaluate(checkpoint_path, config_path, csv_path, algorithms, split, noise, noise_scale,
             target_precision, probe, delta_max, seed, jobs, out):
    """Writes metrics.json and metrics.csv for a checkpoint"""
    out_dir = _out_dir(out)
    ckpt, bundle, aset = _load_context(checkpoint_path, config_path, csv_path, delta_max)
    names = [resolve_algorithm(a) for a in (algorithms or ALGORITHMS)]
    if not aset.is_box and GRADIENT_DESCENT in names:
        if algorithms:
            raise ConfigError("gradient-descent recourse needs an action set without affine constraints")
        names.remove(GRADIENT_DESCENT)
        click.echo("Skipping gradient-descent: action set has affine constraints", err=True)

    report = evaluate_model(
        ckpt.params, aset, bundle, names, split=split, jobs=jobs, seed=seed,
        noise=noise, noise_scale=noise_scale, probe=probe, target_precision=target_precision,
    )
    document = report.as_dict()
    document["checkpoint_digest"] = checkpoint_digest(ckpt)
    _write_json(out_dir / "metrics.json", document)
    pd.DataFrame([report.as_row()]).to_csv(out_dir / "metrics.csv", index=False)

    click.echo(f"F1 {report.f1:.3f}  accuracy {report.accuracy:.3f}  threshold {report.threshold:.3f}")
    for name, rates in report.recourse.items():
        click.echo(f"  {name}: recourse_neg {rates.recourse_neg:.3f}  recourse_all {rates.recourse_all:.3f}")
    click.echo(f"Metrics: {out_dir / 'metrics.json'}")


@cli.command(name="sweep")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "csv_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--axis", type=click.Choice(SWEEP_AXES), default="lambda", show_default=True)
@click.option("--values", help="Comma-separated values [default: grid for the axis]")
@click.option("--seeds", "n_seeds", type=int, default=3, show_default=True, help="Number of split seeds")
@click.option("--seed", default=settings.DEFAULT_SEED, envvar="RECOURSE_SEED", show_default=True,
              help="First split seed")
@click.option("--lambda", "lam", type=float, default=0.8, show_default=True)
@click.option("--delta-max", type=float)
@click.option("--epochs", type=int)
@click.option("--batch-size", type=int)
@click.option("--algorithm", "algorithms", type=ALGORITHM_CHOICE, multiple=True, help="Repeatable [default: lp]")
@click.option("--jobs", default=settings.DEFAULT_JOBS, envvar="RECOURSE_JOBS", show_default=True)
@click.option("--out", default=settings.DEFAULT_OUT_DIR, envvar="RECOURSE_OUT_DIR", show_default=True)
@handle_errors
def sweep_command(config_path, csv_path, axis, values, n_seeds, seed, lam, delta_max, epochs, batch_size,
                  algorithms, jobs, out):
    """Varies lambda, the threshold or delta_max; writes sweep.csv + sweep_summary.csv"""
    if n_seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    out_dir = _out_dir(out)
    config = load_config(config_path)
    sweep_settings = SweepSettings(
        config_path=config_path,
        csv_path=csv_path,
        seeds=tuple(range(seed, seed + n_seeds)),
        train=TrainConfig.for_dataset(config, lam=lam, epochs=epochs, batch_size=batch_size),
        delta_max=delta_max,
        algorithms=tuple(resolve_algorithm(a) for a in (algorithms or ("lp",))),
        jobs=jobs,
    )

    def on_row(row):
        click.echo(f"  {axis}={row['value']:g} seed={row['seed']}: f1 {row['f1']:.3f}", err=True)

    table, summary = sweep(axis, _parse_values(values, axis), sweep_settings, on_row=on_row)
    table.to_csv(out_dir / "sweep.csv", index=False)
    summary.to_csv(out_dir / "sweep_summary.csv", index=False)
    click.echo(f"Sweep: {out_dir / 'sweep.csv'} ({len(table)} rows)")
    click.echo(f"Summary: {out_dir / 'sweep_summary.csv'}")


if __name__ == "__main__":
    cli()
