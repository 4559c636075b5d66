"""``crosstune`` command line: simulate, run, eval and sweep."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from types import SimpleNamespace

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .adapter import TrainConfig, TrainingError, load_checkpoint
from .core import NON_POI, HyperParams
from .ingestion import IngestionError, load_dataset
from .metrics import (
    ReportError,
    cmc_curve,
    confusion_matrix,
    identify,
    labeling_metrics,
    noise_report,
    write_cmc_csv,
    write_matrix_csv,
    write_metrics_csv,
    write_noise_csv,
)
from .pipeline import run, write_result
from .simulation import GenerationError, SimConfig, config_errors, export, generate

log = logging.getLogger("crosstune")

SECTIONS = {"hyper": HyperParams, "sim": SimConfig, "train": TrainConfig}
SWEEP_AXES = {
    "faces": "false_alarm_face_rate",
    "devices": "false_alarm_device_rate",
    "nonpoi": "n_nonpoi",
}
MODE_CHOICE = click.Choice(["autotune", "deterministic", "one-off"])


class ConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class Settings:
    hyper: HyperParams
    sim: SimConfig
    train: TrainConfig


def _key_line(text: str, section: str, key: str) -> int | None:
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        head = re.match(r"\s*\[([^\]]+)\]", line)
        if head:
            current = head.group(1).strip()
        elif current == section and re.match(rf"\s*{re.escape(key)}\s*=", line):
            return lineno
    return None


def _where(path, text, section, key) -> str:
    line = _key_line(text, section, key) if text else None
    loc = f"{path}:{line}" if line else str(path or "config")
    return f"{loc}: [{section}] {key}"


def _check_type(value, default, where):
    if isinstance(default, bool) or isinstance(value, bool):
        raise ConfigError(f"{where}: booleans are not accepted")
    if isinstance(default, tuple):
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where}: expected a list of integers, got {value!r}")
        return tuple(value)
    if isinstance(default, int) and not isinstance(default, bool):
        if not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    return value


def _build(cls, section: str, values: dict, path, text):
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        where = _where(path, text, section, key)
        if key not in known:
            raise ConfigError(f"{where}: unknown field")
        kwargs[key] = _check_type(value, getattr(defaults, key), where)
    if cls is SimConfig:
        errors = config_errors(SimpleNamespace(**{**dataclasses.asdict(defaults), **kwargs}))
        if errors:
            key, msg = next(iter(errors.items()))
            raise ConfigError(f"{_where(path, text, section, key)}: {msg}")
    try:
        return cls(**kwargs)
    except ValueError as exc:
        msg = str(exc)
        named = next((k for k in known if re.match(rf"{k}\b", msg)), None)
        if named:
            raise ConfigError(f"{_where(path, text, section, named)}: {msg}") from exc
        raise ConfigError(f"{path or 'config'}: [{section}] {msg}") from exc


def load_settings(path=None, seed: int | None = None) -> Settings:
    """Parse a TOML config with ``[hyper]``, ``[sim]`` and ``[train]`` sections.

    ``seed`` (from ``--seed``) overrides the seed of every section. The
    ``[train]`` section inherits ``lambda_stoc`` and ``seed`` from ``[hyper]``
    unless it sets them itself.
    """
    raw, text = {}, ""
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
            raw = tomllib.loads(text)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {sorted(unknown)}; expected [hyper], [sim], [train]")
    for name, value in raw.items():
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: {name} must be a table")
    sections = {name: dict(raw.get(name, {})) for name in SECTIONS}
    if seed is not None:
        for values in sections.values():
            values["seed"] = seed
    train_values = dict(sections["train"])
    hyper = _build(HyperParams, "hyper", sections["hyper"], path, text)
    train_values.setdefault("lambda_stoc", hyper.lambda_stoc)
    train_values.setdefault("seed", hyper.seed)
    return Settings(
        hyper=hyper,
        sim=_build(SimConfig, "sim", sections["sim"], path, text),
        train=_build(TrainConfig, "train", train_values, path, text),
    )


def _read_jsonl(path) -> list[dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IngestionError(f"{path}: {exc}") from exc


def _read_truth(path) -> dict[int, int]:
    truth = {}
    for row in _read_jsonl(path):
        sid = int(row["sample_id"])
        if sid in truth:
            raise IngestionError(f"{path}: duplicate sample_id {sid}")
        truth[sid] = NON_POI if row["identity"] is None else int(row["identity"])
    return truth


def _read_scores(path, m: int) -> dict[int, np.ndarray]:
    scores = {}
    for row in _read_jsonl(path):
        vec = np.asarray(row["scores"], dtype=float)
        if vec.shape != (m,):
            raise IngestionError(f"{path}: sample {row['sample_id']} has {vec.size} scores, expected {m}")
        scores[int(row["sample_id"])] = vec
    return scores


def _read_clean_attendance(path, h: int, m: int):
    if not Path(path).is_file():
        return None
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    clean = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(len(rows), -1)
    if clean.shape != (h, m):
        raise ReportError(f"{path}: shape {clean.shape} does not match the dataset ({h}, {m})")
    return clean


def evaluate(run_dir, data_dir, out_dir, truth_path=None, scores_path=None, hyper: HyperParams = HyperParams()) -> dict:
    """Score a run directory against ground truth; writes the four metric CSVs."""
    run_dir, data_dir, out = Path(run_dir), Path(data_dir), Path(out_dir)
    truth_path = Path(truth_path) if truth_path else data_dir / "truth.jsonl"
    labels = _read_jsonl(run_dir / "labels.jsonl")
    truth = _read_truth(truth_path)
    label_ids = [int(r["sample_id"]) for r in labels]
    if len(set(label_ids)) != len(label_ids):
        raise ReportError(f"{run_dir / 'labels.jsonl'}: duplicate sample ids")
    if set(label_ids) != set(truth):
        missing = sorted(set(truth) - set(label_ids))[:5]
        extra = sorted(set(label_ids) - set(truth))[:5]
        raise ReportError(f"sample ids differ between labels and truth (missing labels {missing}, unknown ids {extra})")

    ds = load_dataset(data_dir, hyper.slot_hours, hyper.rss_threshold_dbm)
    if set(ds.sample_ids.tolist()) != set(truth):
        raise ReportError("sample ids in the data directory do not match the truth file")
    order = ds.sample_ids.tolist()
    hard = {int(r["sample_id"]): (NON_POI if r["hard"] is None else int(r["hard"])) for r in labels}
    pred = np.array([hard[s] for s in order])
    true = np.array([truth[s] for s in order])

    if scores_path:
        ext = _read_scores(scores_path, ds.m)
        if set(ext) != set(order):
            raise ReportError(f"{scores_path}: sample ids do not match the truth file")
        scores = np.vstack([ext[s] for s in order])
    else:
        model, _ = load_checkpoint(run_dir / "model.json")
        scores = identify(ds.features, model)

    truth_ds = dataclasses.replace(
        ds, samples=tuple(dataclasses.replace(s, truth=truth[s.sample_id]) for s in ds.samples)
    )
    clean = _read_clean_attendance(data_dir / "clean_attendance.csv", ds.h, ds.m)
    metrics = labeling_metrics(pred, true)
    names = [i.display_name for i in ds.identities]

    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", metrics)
    write_matrix_csv(out / "confusion.csv", confusion_matrix(pred, true, ds.m), names)
    write_cmc_csv(out / "cmc.csv", cmc_curve(scores, true))
    write_noise_csv(out / "noise_report.csv", noise_report(truth_ds, clean), truth_ds)
    return metrics


def _sweep_cell(args):
    sim, hyper, train, mode = args
    result = generate(sim)
    res = run(result.dataset, hyper, train, mode)
    f1 = labeling_metrics(res.hard_labels, result.dataset.truth)["f1"]
    return f1, res.n_iter, res.exit_reason


def sweep(settings: Settings, axis: str, values, repeats: int, mode: str, jobs: int = 1) -> list[dict]:
    """Run every (value, repeat) cell and return per-cell rows."""
    field = SWEEP_AXES[axis]
    cells = []
    for value in values:
        v = int(value) if field == "n_nonpoi" else float(value)
        for r in range(repeats):
            sim = dataclasses.replace(settings.sim, **{field: v, "seed": settings.sim.seed + r})
            hyper = dataclasses.replace(settings.hyper, seed=settings.hyper.seed + r)
            train = dataclasses.replace(settings.train, seed=settings.train.seed + r)
            cells.append(((v, sim.seed), (sim, hyper, train, mode)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_sweep_cell, [c[1] for c in cells]))
    else:
        outputs = [_sweep_cell(c[1]) for c in cells]
    return [
        {"value": v, "seed": seed, "f1": f1, "iterations": n_iter, "exit_reason": why}
        for ((v, seed), _), (f1, n_iter, why) in zip(cells, outputs)
    ]


def aggregate(rows: list[dict]) -> list[dict]:
    out = []
    for value in dict.fromkeys(r["value"] for r in rows):
        cell = [r for r in rows if r["value"] == value]
        f1 = np.array([r["f1"] for r in cell])
        out.append(
            {
                "value": value,
                "mean_f1": float(f1.mean()),
                "std_f1": float(f1.std()),
                "mean_iterations": float(np.mean([r["iterations"] for r in cell])),
                "runs": len(cell),
            }
        )
    return out


def _write_rows(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _setup_logging():
    level = os.environ.get("CROSSTUNE_LOG", "WARNING").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


config_option = click.option("--config", "config_path", type=click.Path(dir_okay=False), help="TOML config file.")
seed_option = click.option("--seed", type=int, default=None, help="Override every seed in the config.")
out_option = click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Output directory.")
mode_option = click.option("--mode", type=MODE_CHOICE, default="autotune", show_default=True)
jobs_option = click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)


@click.group()
def cli():
    """Label face samples with identities using device presence logs."""
    _setup_logging()


@cli.command()
@config_option
@out_option
@seed_option
def simulate(config_path, out_dir, seed):
    """Generate a synthetic dataset with ground truth and noise annotations."""
    settings = load_settings(config_path, seed)
    result = generate(settings.sim, settings.hyper.slot_hours)
    paths = export(result, out_dir, settings.hyper.slot_hours)
    log.info("wrote %d samples in %d events to %s", result.dataset.n, result.dataset.h, out_dir)
    return paths


@cli.command("run")
@config_option
@click.option("--data", "data_dir", type=click.Path(file_okay=False), required=True, help="Dataset directory.")
@out_option
@seed_option
@mode_option
@jobs_option
def run_cmd(config_path, data_dir, out_dir, seed, mode, jobs):
    """Label every face sample in a dataset directory."""
    settings = load_settings(config_path, seed)
    ds = load_dataset(data_dir, settings.hyper.slot_hours, settings.hyper.rss_threshold_dbm)
    result = run(ds, settings.hyper, settings.train, mode)
    write_result(result, ds, out_dir, settings.hyper, settings.train)
    log.info("%s: %s after %d iteration(s)", mode, result.exit_reason, result.n_iter)


@cli.command("eval")
@config_option
@click.option("--run", "run_dir", type=click.Path(file_okay=False), required=True, help="Output directory of `run`.")
@click.option("--data", "data_dir", type=click.Path(file_okay=False), required=True, help="Dataset directory.")
@click.option("--truth", "truth_path", type=click.Path(dir_okay=False), help="Truth JSONL (default: DATA/truth.jsonl).")
@click.option("--scores", "scores_path", type=click.Path(dir_okay=False), help="External classifier scores JSONL.")
@out_option
def eval_cmd(config_path, run_dir, data_dir, truth_path, scores_path, out_dir):
    """Write labeling metrics, confusion matrix, CMC curve and noise report."""
    settings = load_settings(config_path)
    metrics = evaluate(run_dir, data_dir, out_dir, truth_path, scores_path, settings.hyper)
    log.info("f1 %.4f", metrics["f1"])


@cli.command("sweep")
@config_option
@click.option("--axis", type=click.Choice(sorted(SWEEP_AXES)), required=True)
@click.option("--values", required=True, help="Comma-separated noise values, e.g. 0.1,0.3,0.5.")
@click.option("--repeats", type=click.IntRange(min=1), default=3, show_default=True)
@out_option
@seed_option
@mode_option
@jobs_option
def sweep_cmd(config_path, axis, values, repeats, out_dir, seed, mode, jobs):
    """Simulate, run and score a grid of noise levels."""
    settings = load_settings(config_path, seed)
    try:
        parsed = [float(v) for v in values.split(",") if v.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"not a number list: {values}", param_hint="--values") from exc
    if not parsed:
        raise click.BadParameter("no values given", param_hint="--values")
    field = SWEEP_AXES[axis]
    for v in parsed:
        if field == "n_nonpoi":
            if v < 0 or not float(v).is_integer():
                raise click.BadParameter(f"non-POI counts must be non-negative integers, got {v}", param_hint="--values")
        elif not 0 <= v <= 1:
            raise click.BadParameter(f"rates must lie in [0, 1], got {v}", param_hint="--values")
    rows = sweep(settings, axis, parsed, repeats, mode, jobs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "cells.csv", rows)
    _write_rows(out / "sweep.csv", aggregate(rows))


ERRORS = (ConfigError, IngestionError, ReportError, TrainingError, GenerationError, ValueError, OSError)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="crosstune", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except ERRORS as exc:
        kind = type(exc).__name__
        module = getattr(type(exc), "__module__", "")
        click.echo(f"error ({module}.{kind}): {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
