"""Scoring of labeling and identification results."""

from __future__ import annotations

import csv

import numpy as np
from sklearn.exceptions import NotFittedError

from .adapter import AdapterModel, LinearAdapter, transform
from .core import NON_POI, Dataset


class ReportError(ValueError):
    pass


def labeling_metrics(pred, truth) -> dict:
    """Micro-averaged sample-level counts, precision, recall, F1 and accuracy.

    ``pred`` uses ``-1`` for "flagged non-POI"; ``truth`` uses ``-1`` for a
    non-POI sample. A wrong identity on a POI counts as a false positive.
    Precision (recall) is 0 when there are no predicted (actual) positives.
    """
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction/truth length mismatch: {pred.shape} vs {truth.shape}")
    poi = truth >= 0
    claimed = pred >= 0
    tp = int(np.count_nonzero(poi & claimed & (pred == truth)))
    fp = int(np.count_nonzero(claimed & (~poi | (pred != truth))))
    fn = int(np.count_nonzero(poi & ~claimed))
    tn = int(np.count_nonzero(~poi & ~claimed))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    n = pred.size
    return {
        "tp": tp,
        "fp": fp,
        "fn": fn,
        "tn": tn,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "accuracy": (tp + tn) / n if n else 0.0,
    }


def confusion_matrix(pred, truth, m: int) -> np.ndarray:
    """Row-normalized m x m matrix (rows: truth, columns: prediction).

    Pairs with a non-POI truth or a non-POI prediction are left out; rows of
    classes that never occur stay zero.
    """
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    ok = (pred >= 0) & (truth >= 0)
    if np.any(pred[ok] >= m) or np.any(truth[ok] >= m):
        raise ValueError(f"labels must lie in [0, {m})")
    counts = np.zeros((m, m))
    np.add.at(counts, (truth[ok], pred[ok]), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


def match_ranks(scores, truth) -> np.ndarray:
    """0-based rank of the true identity in each score row.

    Ties are ordered by identity index, so an equal score on a lower index
    ranks ahead of the truth.
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=int)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    true_score = scores[np.arange(truth.size), truth][:, None]
    idx = np.arange(scores.shape[1])[None, :]
    ahead = (scores > true_score) | ((scores == true_score) & (idx < truth[:, None]))
    return ahead.sum(axis=1)


def cmc_curve(scores, truth, max_rank: int | None = None) -> np.ndarray:
    """Rank-k identification accuracy for k = 1..max_rank.

    Only samples with a POI truth are scored.
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=int)
    m = scores.shape[1]
    max_rank = m if max_rank is None else max_rank
    poi = truth >= 0
    if np.any(truth[poi] >= m):
        raise ValueError("truth index out of range")
    if not poi.any():
        return np.zeros(max_rank)
    ranks = match_ranks(scores[poi], truth[poi])
    return np.array([np.mean(ranks < k) for k in range(1, max_rank + 1)])


def noise_report(ds: Dataset, clean_attendance=None) -> np.ndarray:
    """Per-event counts of false-alarm faces, false-alarm devices and non-POI samples.

    A false-alarm face is an identity whose faces appear in the event without
    its device being detected; a false-alarm device is a detected identity
    without faces. With ``clean_attendance`` given, false-alarm faces are
    additionally restricted to true attendees. Returns an ``h x 3`` int array.
    """
    truth = ds.truth
    if truth is None:
        raise ReportError("noise report needs ground-truth identities for every sample")
    h, m = ds.h, ds.m
    faces = np.zeros((h, m), dtype=bool)
    poi = truth >= 0
    faces[ds.event_index[poi], truth[poi]] = True
    detected = ds.attendance > 0
    fa_faces = faces & ~detected
    if clean_attendance is not None:
        clean = np.asarray(clean_attendance) > 0
        if clean.shape != (h, m):
            raise ReportError(f"clean attendance has shape {clean.shape}, expected {(h, m)}")
        fa_faces &= clean
    fa_devices = detected & ~faces
    nonpoi = np.bincount(ds.event_index[truth == NON_POI], minlength=h)
    return np.column_stack([fa_faces.sum(axis=1), fa_devices.sum(axis=1), nonpoi]).astype(int)


def identify(features, model) -> np.ndarray:
    """Head logits ``W transform(x) + b`` per identity."""
    if model is None:
        raise NotFittedError("identification needs a trained adapter")
    if isinstance(model, LinearAdapter):
        return model.decision_function(features)
    if not isinstance(model, AdapterModel):
        raise TypeError(f"expected an AdapterModel or LinearAdapter, got {type(model).__name__}")
    return transform(features, model) @ model.W.T + model.b


def write_metrics_csv(path, metrics: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in metrics.items():
            w.writerow([k, v])


def write_matrix_csv(path, matrix, labels) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["truth"] + list(labels))
        for label, row in zip(labels, matrix):
            w.writerow([label] + [repr(float(v)) for v in row])


def write_cmc_csv(path, curve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "accuracy"])
        for k, acc in enumerate(curve, start=1):
            w.writerow([k, repr(float(acc))])


def write_noise_csv(path, report, ds: Dataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["event_id", "day", "slot", "location", "false_alarm_faces", "false_alarm_devices", "non_poi_samples"])
        for ev, row in zip(ds.events, report):
            w.writerow([ev.event_id, ev.day.isoformat(), ev.slot_index, ev.location, *map(int, row)])


__all__ = [
    "ReportError",
    "cmc_curve",
    "confusion_matrix",
    "identify",
    "labeling_metrics",
    "match_ranks",
    "noise_report",
    "write_cmc_csv",
    "write_matrix_csv",
    "write_metrics_csv",
    "write_noise_csv",
]
