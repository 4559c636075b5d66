"""Domain types shared by every stage, plus attendance-vector algebra."""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

NON_POI = -1


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Identity:
    index: int
    display_name: str
    mac: str


@dataclass(frozen=True)
class FaceSample:
    sample_id: int
    event_id: int
    feature: np.ndarray
    truth: int | None = None

    def __eq__(self, other):
        if not isinstance(other, FaceSample):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.event_id == other.event_id
            and self.truth == other.truth
            and np.array_equal(self.feature, other.feature)
        )

    __hash__ = None


@dataclass(frozen=True)
class Event:
    event_id: int
    slot_index: int
    day: dt.date
    location: str
    sample_ids: tuple[int, ...]
    attendance: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Event):
            return NotImplemented
        return (
            self.event_id == other.event_id
            and self.slot_index == other.slot_index
            and self.day == other.day
            and self.location == other.location
            and tuple(self.sample_ids) == tuple(other.sample_ids)
            and np.array_equal(self.attendance, other.attendance)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Identities, events and face samples of one labeling problem.

    Events are addressed by position: ``events[k].event_id == k``.
    Array views (``features``, ``event_index``, ``attendance``) are built
    lazily and shared; treat them as read-only.
    """

    identities: tuple[Identity, ...]
    events: tuple[Event, ...]
    samples: tuple[FaceSample, ...]
    dim: int

    @property
    def m(self) -> int:
        return len(self.identities)

    @property
    def h(self) -> int:
        return len(self.events)

    @property
    def n(self) -> int:
        return len(self.samples)

    @cached_property
    def features(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, self.dim))
        out = np.vstack([s.feature for s in self.samples]).astype(float)
        out.setflags(write=False)
        return out

    @cached_property
    def event_index(self) -> np.ndarray:
        out = np.array([s.event_id for s in self.samples], dtype=np.intp)
        out.setflags(write=False)
        return out

    @cached_property
    def attendance(self) -> np.ndarray:
        if not self.events:
            return np.zeros((0, self.m))
        out = np.vstack([e.attendance for e in self.events]).astype(float)
        out.setflags(write=False)
        return out

    @cached_property
    def truth(self) -> np.ndarray | None:
        if any(s.truth is None for s in self.samples):
            return None
        return np.array([s.truth for s in self.samples], dtype=int)

    @property
    def sample_ids(self) -> np.ndarray:
        return np.array([s.sample_id for s in self.samples], dtype=np.int64)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.dim == other.dim
            and tuple(self.identities) == tuple(other.identities)
            and tuple(self.events) == tuple(other.events)
            and tuple(self.samples) == tuple(other.samples)
        )

    __hash__ = None


@dataclass(frozen=True)
class HyperParams:
    beta: float = 0.02
    gamma: float = 0.05
    xi: float = 0.01
    lambda_stoc: float = 0.01
    g_multipliers: tuple[int, ...] = (2, 3, 4, 5)
    rss_threshold_dbm: float = -55.0
    slot_hours: int = 2
    binarize_threshold: float = 0.5
    max_iterations: int = 20
    attendance_norm: str = "presence"
    attendance_fallback: str = "identity"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "g_multipliers", tuple(int(k) for k in self.g_multipliers))
        problems = []
        if not self.beta >= 0:
            problems.append("beta must be >= 0")
        if not 0 < self.gamma < 1:
            problems.append("gamma must lie in (0, 1)")
        if not self.xi > 0:
            problems.append("xi must be > 0")
        if not self.lambda_stoc >= 0:
            problems.append("lambda_stoc must be >= 0")
        if not self.g_multipliers or min(self.g_multipliers) < 1:
            problems.append("g_multipliers must be a non-empty list of positive integers")
        if not math.isfinite(self.rss_threshold_dbm):
            problems.append("rss_threshold_dbm must be finite")
        if self.slot_hours < 1 or 24 % self.slot_hours:
            problems.append("slot_hours must divide 24")
        if not 0 < self.binarize_threshold <= 1:
            problems.append("binarize_threshold must lie in (0, 1]")
        if self.max_iterations < 1:
            problems.append("max_iterations must be >= 1")
        if self.attendance_norm not in ("max", "sum", "presence"):
            problems.append("attendance_norm must be one of max, sum, presence")
        if self.attendance_fallback not in ("event", "identity"):
            problems.append("attendance_fallback must be one of event, identity")
        if problems:
            raise ValueError("; ".join(problems))


def fuzzy_overlap(a, b) -> tuple[float, float]:
    """Return (sum of elementwise min, sum of elementwise max).

    On binary vectors this is the size of the logical AND and OR.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"attendance vectors differ in length: {a.shape} vs {b.shape}")
    return float(np.minimum(a, b).sum()), float(np.maximum(a, b).sum())


def l2_normalize(X: np.ndarray, axis: int = -1) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=axis, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot L2-normalize a zero vector")
    return X / norms


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    def __bool__(self):
        return not self.violations

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def validate_dataset(ds: Dataset) -> ValidationReport:
    """List every broken invariant of ``ds``; an empty report means well-formed."""
    report = ValidationReport()
    add = report.violations.append

    m = len(ds.identities)
    if m < 2:
        add(f"need at least 2 identities, got {m}")
    if sorted(i.index for i in ds.identities) != list(range(m)):
        add("identity indices are not dense and unique")
    macs = [i.mac for i in ds.identities]
    if len(set(macs)) != len(macs):
        add("identity MAC addresses are not unique")

    if not ds.events:
        add("dataset has no events")
    event_ids = set()
    for pos, ev in enumerate(ds.events):
        if ev.event_id != pos:
            add(f"event at position {pos} has event_id {ev.event_id}")
        event_ids.add(ev.event_id)
        u = np.asarray(ev.attendance, dtype=float)
        if u.shape != (m,):
            add(f"event {ev.event_id}: attendance has shape {u.shape}, expected ({m},)")
            continue
        if not np.all(np.isfinite(u)) or np.any(u < 0) or np.any(u > 1):
            add(f"event {ev.event_id}: attendance entries outside [0, 1]")
        if not ev.sample_ids and not np.any(u > 0):
            add(f"event {ev.event_id}: no face samples and no attendance")

    seen_ids = set()
    members = {ev.event_id: set(ev.sample_ids) for ev in ds.events}
    for s in ds.samples:
        if s.sample_id in seen_ids:
            add(f"duplicate sample_id {s.sample_id}")
        seen_ids.add(s.sample_id)
        if s.event_id not in event_ids:
            add(f"sample {s.sample_id}: event_id {s.event_id} does not resolve")
        elif s.sample_id not in members[s.event_id]:
            add(f"sample {s.sample_id}: not listed by event {s.event_id}")
        f = np.asarray(s.feature, dtype=float)
        if f.shape != (ds.dim,):
            add(f"sample {s.sample_id}: feature has shape {f.shape}, expected ({ds.dim},)")
        elif not np.all(np.isfinite(f)):
            add(f"sample {s.sample_id}: feature has non-finite entries")
        if s.truth is not None and not (s.truth == NON_POI or 0 <= s.truth < m):
            add(f"sample {s.sample_id}: truth {s.truth} out of range")
    for ev in ds.events:
        for sid in ev.sample_ids:
            if sid not in seen_ids:
                add(f"event {ev.event_id}: lists unknown sample {sid}")
    return report


def assemble_dataset(identities, buckets, samples, dim: int) -> Dataset:
    """Build a canonical :class:`Dataset` from keyed buckets.

    ``buckets`` maps a sortable key ``(day, slot_index, location)`` to an
    attendance vector; ``samples`` is an iterable of
    ``(sample_id, key, feature, truth)``. Buckets with neither samples nor
    attendance are dropped; events are numbered in key order and samples
    ordered by ``(event_id, sample_id)``.
    """
    identities = tuple(sorted(identities, key=lambda i: i.index))
    m = len(identities)
    by_key: dict = {}
    for sample_id, key, feature, truth in samples:
        by_key.setdefault(key, []).append((int(sample_id), np.asarray(feature, dtype=float), truth))
    keys = set(by_key)
    for key, u in buckets.items():
        if np.any(np.asarray(u) > 0):
            keys.add(key)
    events, out_samples = [], []
    for event_id, key in enumerate(sorted(keys)):
        day, slot, location = key
        u = np.asarray(buckets.get(key, np.zeros(m)), dtype=float).copy()
        u.setflags(write=False)
        members = sorted(by_key.get(key, []), key=lambda r: r[0])
        for sample_id, feature, truth in members:
            feature = feature.copy()
            feature.setflags(write=False)
            out_samples.append(FaceSample(sample_id, event_id, feature, truth))
        events.append(Event(event_id, int(slot), day, location, tuple(r[0] for r in members), u))
    return Dataset(identities, tuple(events), tuple(out_samples), int(dim))
