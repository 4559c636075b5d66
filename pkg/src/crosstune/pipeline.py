"""Iterative cross-modal labeling loop.

Each iteration transforms the embeddings with the current adapter, sweeps the
cluster count and votes soft labels, retrains the adapter on those labels,
and moves every event's attendance belief a step ``gamma`` towards the
attendance implied by the labels. The loop stops once the RMS change of the
attendance matrix drops to ``xi``.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .adapter import AdapterModel, TrainConfig, save_checkpoint, train_adapter, transform
from .core import Dataset, HyperParams, l2_normalize
from .voting import harden_matrix, soft_label_matrix, sweep_and_vote

log = logging.getLogger(__name__)

MODES = ("autotune", "deterministic", "one_off")


@dataclass
class IterationRecord:
    tau: int
    rms_change: float
    soft_labels: np.ndarray
    attendance: np.ndarray
    training: dict = field(default_factory=dict)
    seconds: float = 0.0

    def summary(self) -> dict:
        return {
            "tau": self.tau,
            "rms_change": self.rms_change,
            "voted_samples": int(np.count_nonzero(self.soft_labels.sum(axis=1) > 0)),
            "training": self.training,
        }


@dataclass
class RunResult:
    mode: str
    sample_ids: np.ndarray
    soft_labels: np.ndarray
    vote_counts: np.ndarray
    hard_labels: np.ndarray
    model: AdapterModel
    attendance: np.ndarray
    history: list[IterationRecord]
    exit_reason: str

    @property
    def n_iter(self) -> int:
        return len(self.history)

    @property
    def non_poi(self) -> np.ndarray:
        return self.vote_counts == 0


def estimate_event_attendance(
    soft, event_index, attendance, norm: str = "presence", fallback: str = "identity"
) -> np.ndarray:
    """Attendance implied by the soft labels of each event's voted samples.

    ``norm`` turns an event's labels into presence values:

    * ``"max"``: average label divided by its largest entry,
    * ``"sum"``: average label (already sums to one),
    * ``"presence"``: per-identity maximum label over the event's samples.

    Events without voted samples keep their current attendance. With
    ``fallback="identity"`` the same holds per entry: an identity that no
    voted sample of the event points to keeps its current value, so missing
    faces never count as evidence of absence.
    """
    soft = np.asarray(soft, dtype=float)
    event_index = np.asarray(event_index, dtype=np.intp)
    u = np.asarray(attendance, dtype=float)
    if fallback not in ("event", "identity"):
        raise ValueError(f"unknown attendance fallback {fallback!r}")
    h, m = u.shape
    voted = soft.sum(axis=1) > 0
    counts = np.bincount(event_index[voted], minlength=h)
    est = np.zeros((h, m))
    if norm == "presence":
        np.maximum.at(est, event_index[voted], soft[voted])
    elif norm in ("max", "sum"):
        np.add.at(est, event_index[voted], soft[voted])
        has = counts > 0
        est[has] /= counts[has, None]
        scale = est.max(axis=1) if norm == "max" else est.sum(axis=1)
        ok = scale > 0
        est[ok] /= scale[ok, None]
    else:
        raise ValueError(f"unknown attendance normalization {norm!r}")
    est = np.clip(est, 0.0, 1.0)
    if fallback == "identity":
        evidence = np.zeros((h, m), dtype=bool)
        np.logical_or.at(evidence, event_index[voted], soft[voted] > 0)
        est[~evidence] = u[~evidence]
    est[counts == 0] = u[counts == 0]
    return est


def update_attendance(u, u_hat, gamma: float) -> np.ndarray:
    """``u - gamma * (u - u_hat)``, clamped to [0, 1]."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    u = np.asarray(u, dtype=float)
    return np.clip(u - gamma * (u - np.asarray(u_hat, dtype=float)), 0.0, 1.0)


def rms_change(u_new, u_old) -> float:
    """``sqrt(mean_k ||u_new_k - u_old_k||^2)`` over events."""
    u_new = np.asarray(u_new, dtype=float)
    u_old = np.asarray(u_old, dtype=float)
    if u_new.shape != u_old.shape:
        raise ValueError(f"shape mismatch: {u_new.shape} vs {u_old.shape}")
    if u_new.shape[0] == 0:
        return 0.0
    diff = (u_new - u_old).reshape(u_new.shape[0], -1)
    return float(np.sqrt((diff * diff).sum(axis=1).mean()))


def _one_hot(probs: np.ndarray) -> np.ndarray:
    hard = harden_matrix(probs)
    out = np.zeros_like(probs)
    ok = hard >= 0
    out[np.flatnonzero(ok), hard[ok]] = 1.0
    return out


def run(
    ds: Dataset,
    hyper: HyperParams = HyperParams(),
    train: TrainConfig | None = None,
    mode: str = "autotune",
) -> RunResult:
    """Label every face sample of ``ds`` with an identity distribution.

    ``mode`` is ``"autotune"`` (soft labels, stochastic center loss),
    ``"deterministic"`` (labels hardened before training and attendance
    estimation) or ``"one_off"`` (a single labeling pass on the frozen
    embeddings).
    """
    mode = mode.replace("-", "_")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if train is None:
        train = TrainConfig(lambda_stoc=hyper.lambda_stoc, seed=hyper.seed)
    X = l2_normalize(ds.features)
    ev = ds.event_index
    u = ds.attendance.copy()
    model = AdapterModel.initial(ds.dim, ds.m, seed=train.seed)

    history: list[IterationRecord] = []
    exit_reason = "max_iterations"
    soft = np.zeros((ds.n, ds.m))
    votes = np.zeros(ds.n, dtype=np.int64)
    for tau in range(1, hyper.max_iterations + 1):
        t0 = time.perf_counter()
        Z = transform(X, model)
        tallies = sweep_and_vote(Z, ev, u, hyper.beta, hyper.g_multipliers, hyper.binarize_threshold)
        votes = tallies.sum(axis=1)
        soft = soft_label_matrix(tallies)
        if mode == "deterministic":
            soft = _one_hot(soft)

        if mode == "one_off":
            history.append(IterationRecord(tau, 0.0, soft, u.copy(), seconds=time.perf_counter() - t0))
            exit_reason = "one_off"
            break

        model, trained = train_adapter(X, soft, train, init=model)
        u_hat = estimate_event_attendance(soft, ev, u, hyper.attendance_norm, hyper.attendance_fallback)
        u_new = update_attendance(u, u_hat, hyper.gamma)
        change = rms_change(u_new, u)
        u = u_new
        history.append(
            IterationRecord(
                tau,
                change,
                soft,
                u.copy(),
                training={
                    "best_epoch": trained.best_epoch,
                    "val_loss": trained.val_loss[trained.best_epoch],
                    "val_accuracy": trained.val_accuracy[trained.best_epoch],
                },
                seconds=time.perf_counter() - t0,
            )
        )
        log.info("iteration %d: rms change %.4f (%.1fs)", tau, change, history[-1].seconds)
        if change <= hyper.xi:
            exit_reason = "converged"
            break

    return RunResult(
        mode=mode,
        sample_ids=ds.sample_ids,
        soft_labels=soft,
        vote_counts=votes,
        hard_labels=harden_matrix(soft),
        model=model,
        attendance=u,
        history=history,
        exit_reason=exit_reason,
    )


class AutoTune(BaseEstimator):
    """Estimator wrapper around :func:`run`.

    ``fit`` takes a :class:`~crosstune.core.Dataset`; fitted attributes are
    ``soft_labels_``, ``labels_`` (``-1`` = no POI), ``attendance_``,
    ``adapter_``, ``history_``, ``n_iter_`` and ``exit_reason_``.
    """

    def __init__(self, mode="autotune", hyper=None, train=None):
        self.mode = mode
        self.hyper = hyper
        self.train = train

    def fit(self, ds: Dataset, y=None):
        result = run(ds, self.hyper or HyperParams(), self.train, self.mode)
        self.result_ = result
        self.soft_labels_ = result.soft_labels
        self.labels_ = result.hard_labels
        self.attendance_ = result.attendance
        self.adapter_ = result.model
        self.history_ = result.history
        self.n_iter_ = result.n_iter
        self.exit_reason_ = result.exit_reason
        return self

    def fit_predict(self, ds: Dataset, y=None):
        return self.fit(ds).labels_


def write_result(result: RunResult, ds: Dataset, out_dir, hyper: HyperParams, train: TrainConfig) -> dict[str, Path]:
    """Write labels, attendance, adapter checkpoint, history and a summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "labels": out / "labels.jsonl",
        "attendance": out / "attendance.csv",
        "model": out / "model.json",
        "history": out / "history.json",
        "summary": out / "summary.json",
    }
    with open(paths["labels"], "w", encoding="utf-8") as fh:
        for sid, probs, hard, v in zip(result.sample_ids, result.soft_labels, result.hard_labels, result.vote_counts):
            row = {
                "sample_id": int(sid),
                "soft": [float(p) for p in probs],
                "hard": None if hard < 0 else int(hard),
                "flag_non_poi": bool(v == 0),
            }
            fh.write(json.dumps(row) + "\n")
    with open(paths["attendance"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["event_id", "day", "slot", "location"] + [i.display_name for i in ds.identities])
        for ev, row in zip(ds.events, result.attendance):
            w.writerow([ev.event_id, ev.day.isoformat(), ev.slot_index, ev.location] + [repr(float(v)) for v in row])
    hyper_dict = {"hyper": asdict(hyper), "train": asdict(train), "mode": result.mode}
    save_checkpoint(paths["model"], result.model, hyper_dict)
    paths["history"].write_text(json.dumps([r.summary() for r in result.history], indent=1) + "\n")
    summary = {
        "mode": result.mode,
        "exit_reason": result.exit_reason,
        "iterations": result.n_iter,
        "n_samples": int(ds.n),
        "n_events": int(ds.h),
        "n_identities": int(ds.m),
        "flagged_non_poi": int(np.count_nonzero(result.non_poi)),
        "final_rms_change": result.history[-1].rms_change if result.history else None,
        **hyper_dict,
    }
    paths["summary"].write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return paths
