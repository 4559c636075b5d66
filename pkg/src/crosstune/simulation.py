"""Synthetic face-embedding / device-presence datasets with controlled noise.

Identities get well-separated unit-norm mean embeddings; each event draws its
attendees, and every attendee contributes a few noisy samples around their
mean. Three corruptions can then be layered on top:

* false-alarm faces: an attendee's device detection is removed,
* false-alarm devices: an attendee's face samples are removed,
* non-POI disturbance: unregistered people add samples to events.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .core import NON_POI, Dataset, Event, Identity, assemble_dataset
from .ingestion import (
    NON_POI_TRUTH,
    EmbeddingRecord,
    SniffRecord,
    write_embeddings,
    write_identities,
    write_sniff_log,
)

EPOCH = dt.datetime(2024, 1, 1, tzinfo=dt.timezone.utc)
LOCATION = "lab"
MAX_MEAN_RETRIES = 2000

# stream ids for SeedSequence-derived generators
_MEANS, _EVENTS, _FACE_NOISE, _DEVICE_NOISE, _NONPOI = range(5)


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    m_poi: int = 30
    n_nonpoi: int = 10
    dim: int = 32
    events: int = 100
    attend_prob: float = 0.3
    images_per_attendance: tuple[int, int] = (3, 8)
    cluster_spread: float = 0.1
    separation: float = 60.0
    nonpoi_presence_prob: float = 0.1
    false_alarm_face_rate: float = 0.0
    false_alarm_device_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "images_per_attendance", tuple(int(v) for v in self.images_per_attendance))
        errors = config_errors(self)
        if errors:
            raise ValueError("; ".join(f"{k}: {v}" for k, v in errors.items()))


def config_errors(cfg) -> dict[str, str]:
    """Field name -> problem, for every invalid :class:`SimConfig` field."""
    errors = {}
    for name in ("attend_prob", "nonpoi_presence_prob", "false_alarm_face_rate", "false_alarm_device_rate"):
        v = getattr(cfg, name)
        if not 0 <= v <= 1:
            errors[name] = f"must lie in [0, 1], got {v}"
    if cfg.m_poi < 2:
        errors["m_poi"] = f"must be >= 2, got {cfg.m_poi}"
    if cfg.n_nonpoi < 0:
        errors["n_nonpoi"] = f"must be >= 0, got {cfg.n_nonpoi}"
    if cfg.dim < 2:
        errors["dim"] = f"must be >= 2, got {cfg.dim}"
    if cfg.events < 1:
        errors["events"] = f"must be >= 1, got {cfg.events}"
    lo_hi = cfg.images_per_attendance
    if len(lo_hi) != 2 or not 1 <= lo_hi[0] <= lo_hi[1]:
        errors["images_per_attendance"] = f"must be [lo, hi] with 1 <= lo <= hi, got {list(lo_hi)}"
    if not cfg.cluster_spread >= 0:
        errors["cluster_spread"] = f"must be >= 0, got {cfg.cluster_spread}"
    if not 0 <= cfg.separation < 180:
        errors["separation"] = f"must be an angle in degrees in [0, 180), got {cfg.separation}"
    return errors


@dataclass
class NoiseLog:
    """Which entries each injection corrupted, keyed by event slot."""

    deleted_devices: list[dict] = field(default_factory=list)
    deleted_faces: list[dict] = field(default_factory=list)
    nonpoi_samples: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SimResult:
    dataset: Dataset
    clean_attendance: np.ndarray
    means: np.ndarray
    noise: NoiseLog


def _rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, *extra]))


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def draw_means(count: int, dim: int, separation_deg: float, rng, existing=None) -> np.ndarray:
    """Unit vectors whose pairwise angles (also against ``existing``) are all >= separation."""
    max_cos = math.cos(math.radians(separation_deg))
    means = [] if existing is None else [np.asarray(e) for e in existing]
    fresh = []
    for _ in range(count):
        for _attempt in range(MAX_MEAN_RETRIES):
            cand = _unit(rng.standard_normal(dim))
            if all(cand @ other <= max_cos for other in means):
                break
        else:
            raise GenerationError(
                f"could not place {count} means {separation_deg} degrees apart in {dim} dimensions"
            )
        means.append(cand)
        fresh.append(cand)
    return np.array(fresh).reshape(count, dim)


def _samples_for(mean, count, spread, rng):
    noise = rng.standard_normal((count, mean.size)) * spread
    pts = mean + noise
    norms = np.linalg.norm(pts, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return pts / norms


def event_key(k: int, slot_hours: int = 2):
    """(day, slot, location) of the k-th simulated event."""
    per_day = 24 // slot_hours
    return ((EPOCH + dt.timedelta(days=k // per_day)).date(), k % per_day, LOCATION)


def poi_identities(m: int) -> list[Identity]:
    return [Identity(j, f"poi{j:03d}", f"02:00:00:00:{j >> 8:02x}:{j & 0xFF:02x}") for j in range(m)]


def synth_dataset(cfg: SimConfig, slot_hours: int = 2) -> SimResult:
    """Noise-free POI dataset; attendance equals the ground truth."""
    m, d = cfg.m_poi, cfg.dim
    means = draw_means(m, d, cfg.separation, _rng(cfg.seed, _MEANS))
    lo, hi = cfg.images_per_attendance
    buckets, samples = {}, []
    next_id = 0
    for k in range(cfg.events):
        rng = _rng(cfg.seed, _EVENTS, k)
        attendees = np.flatnonzero(rng.random(m) < cfg.attend_prob)
        if attendees.size == 0:
            continue
        key = event_key(k, slot_hours)
        u = np.zeros(m)
        u[attendees] = 1.0
        buckets[key] = u
        for j in attendees:
            count = int(rng.integers(lo, hi + 1))
            for feat in _samples_for(means[j], count, cfg.cluster_spread, rng):
                samples.append((next_id, key, feat, int(j)))
                next_id += 1
    ds = assemble_dataset(poi_identities(m), buckets, samples, d)
    return SimResult(ds, ds.attendance.copy(), means, NoiseLog())


def _rebuild(ds: Dataset, attendance: np.ndarray, keep_samples, extra_samples=()) -> Dataset:
    """Reassemble after edits; drops events left with neither faces nor devices."""
    buckets = {(e.day, e.slot_index, e.location): attendance[e.event_id] for e in ds.events}
    keys = [(e.day, e.slot_index, e.location) for e in ds.events]
    samples = [(s.sample_id, keys[s.event_id], s.feature, s.truth) for s in ds.samples if keep_samples(s)]
    samples.extend(extra_samples)
    return assemble_dataset(ds.identities, buckets, samples, ds.dim)


def _key_dict(ev: Event) -> dict:
    return {"day": ev.day.isoformat(), "slot": ev.slot_index, "location": ev.location}


def inject_false_alarm_faces(ds: Dataset, rate: float, seed: int = 0, log: NoiseLog | None = None) -> Dataset:
    """Delete each present device detection with probability ``rate``; faces stay."""
    if not 0 <= rate <= 1:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    if rate == 0:
        return ds
    u = ds.attendance.copy()
    for ev in ds.events:
        rng = _rng(seed, _FACE_NOISE, ev.event_id)
        present = np.flatnonzero(u[ev.event_id] > 0)
        drop = present[rng.random(present.size) < rate]
        u[ev.event_id, drop] = 0.0
        if log is not None:
            log.deleted_devices.extend({**_key_dict(ev), "identity": int(j)} for j in drop)
    return _rebuild(ds, u, lambda s: True)


def inject_false_alarm_devices(ds: Dataset, rate: float, seed: int = 0, log: NoiseLog | None = None) -> Dataset:
    """Delete each attendee's face samples with probability ``rate``; devices stay."""
    if not 0 <= rate <= 1:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    if rate == 0:
        return ds
    if ds.truth is None:
        raise ValueError("face deletion needs ground-truth sample identities")
    truth, ev_idx, sids = ds.truth, ds.event_index, ds.sample_ids
    dropped = set()
    for ev in ds.events:
        rng = _rng(seed, _DEVICE_NOISE, ev.event_id)
        in_event = ev_idx == ev.event_id
        people = np.unique(truth[in_event & (truth != NON_POI)])
        drop = people[rng.random(people.size) < rate]
        for j in drop:
            ids = sids[in_event & (truth == j)].tolist()
            dropped.update(ids)
            if log is not None:
                log.deleted_faces.append({**_key_dict(ev), "identity": int(j), "samples": len(ids)})
    return _rebuild(ds, ds.attendance, lambda s: s.sample_id not in dropped)


def inject_nonpoi(
    ds: Dataset,
    count: int,
    presence_prob: float = 0.1,
    seed: int = 0,
    cfg: SimConfig | None = None,
    means: np.ndarray | None = None,
    log: NoiseLog | None = None,
) -> Dataset:
    """Add ``count`` unregistered people who show up in events with ``presence_prob``.

    Their samples carry truth ``NON_POI``; attendance vectors are untouched.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return ds
    cfg = cfg or SimConfig(m_poi=max(ds.m, 2), n_nonpoi=count, dim=ds.dim, seed=seed)
    rng = _rng(seed, _NONPOI)
    new_means = draw_means(count, ds.dim, cfg.separation, rng, existing=means)
    lo, hi = cfg.images_per_attendance
    next_id = max((s.sample_id for s in ds.samples), default=-1) + 1
    extra = []
    for ev in ds.events:
        erng = _rng(seed, _NONPOI, 1 + ev.event_id)
        here = np.flatnonzero(erng.random(count) < presence_prob)
        key = (ev.day, ev.slot_index, ev.location)
        for q in here:
            n_img = int(erng.integers(lo, hi + 1))
            for feat in _samples_for(new_means[q], n_img, cfg.cluster_spread, erng):
                extra.append((next_id, key, feat, NON_POI))
                if log is not None:
                    log.nonpoi_samples.append(next_id)
                next_id += 1
    return _rebuild(ds, ds.attendance, lambda s: True, extra)


def generate(cfg: SimConfig, slot_hours: int = 2) -> SimResult:
    """Clean synthesis followed by the noise injections configured in ``cfg``."""
    base = synth_dataset(cfg, slot_hours)
    log = NoiseLog()
    ds = inject_nonpoi(
        base.dataset, cfg.n_nonpoi, cfg.nonpoi_presence_prob, cfg.seed, cfg=cfg, means=base.means, log=log
    )
    ds = inject_false_alarm_faces(ds, cfg.false_alarm_face_rate, cfg.seed, log)
    ds = inject_false_alarm_devices(ds, cfg.false_alarm_device_rate, cfg.seed, log)
    clean = clean_attendance_for(ds, base)
    return SimResult(ds, clean, base.means, log)


def clean_attendance_for(ds: Dataset, base: SimResult) -> np.ndarray:
    """Ground-truth attendance rows aligned with the (possibly re-indexed) events of ``ds``."""
    truth_rows = {(e.day, e.slot_index, e.location): base.clean_attendance[e.event_id] for e in base.dataset.events}
    return np.vstack([truth_rows[(e.day, e.slot_index, e.location)] for e in ds.events])


def _timestamp(key, slot_hours: int, offset: int) -> int:
    day, slot, _ = key
    start = dt.datetime(day.year, day.month, day.day, tzinfo=dt.timezone.utc) + dt.timedelta(hours=slot * slot_hours)
    span = slot_hours * 3600
    return int(start.timestamp()) + offset % span


def export(result: SimResult, out_dir, slot_hours: int = 2) -> dict[str, Path]:
    """Write the dataset in the ingestion formats plus truth and noise files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = result.dataset
    names = {i.index: i.display_name for i in ds.identities}
    keys = [(e.day, e.slot_index, e.location) for e in ds.events]

    sniffs = []
    for ev in ds.events:
        for j in np.flatnonzero(ev.attendance > 0):
            ts = _timestamp(keys[ev.event_id], slot_hours, 60 + 17 * int(j))
            sniffs.append(SniffRecord(ts, ds.identities[j].mac, -40, ev.location))

    embeddings, truth_rows = [], []
    for pos, s in enumerate(ds.samples):
        ts = _timestamp(keys[s.event_id], slot_hours, 30 + 7 * pos)
        label = None if s.truth is None else (NON_POI_TRUTH if s.truth == NON_POI else names[s.truth])
        embeddings.append(EmbeddingRecord(s.sample_id, ts, ds.events[s.event_id].location, s.feature, label))
        truth_rows.append({"sample_id": s.sample_id, "identity": None if s.truth in (None, NON_POI) else int(s.truth)})

    paths = {
        "identities": out / "identities.csv",
        "sniffs": out / "sniffs.csv",
        "embeddings": out / "embeddings.jsonl",
        "truth": out / "truth.jsonl",
        "clean_attendance": out / "clean_attendance.csv",
        "noise": out / "noise.json",
    }
    write_identities(paths["identities"], ds.identities)
    write_sniff_log(paths["sniffs"], sniffs)
    write_embeddings(paths["embeddings"], embeddings)
    with open(paths["truth"], "w", encoding="utf-8") as fh:
        for row in truth_rows:
            fh.write(json.dumps(row) + "\n")
    with open(paths["clean_attendance"], "w", encoding="utf-8") as fh:
        fh.write("event_id," + ",".join(names[j] for j in range(ds.m)) + "\n")
        for k, row in enumerate(result.clean_attendance):
            fh.write(f"{k}," + ",".join(str(int(v)) for v in row) + "\n")
    paths["noise"].write_text(json.dumps(result.noise.as_dict(), indent=1, sort_keys=True) + "\n")
    return paths


def dataset_digest(ds: Dataset) -> str:
    """Stable hash of every field of a dataset."""
    h = hashlib.sha256()
    for ident in ds.identities:
        h.update(repr((ident.index, ident.display_name, ident.mac)).encode())
    for ev in ds.events:
        h.update(repr((ev.event_id, ev.slot_index, ev.day.isoformat(), ev.location, tuple(ev.sample_ids))).encode())
        h.update(np.ascontiguousarray(ev.attendance, dtype=float).tobytes())
    for s in ds.samples:
        h.update(repr((s.sample_id, s.event_id, s.truth)).encode())
        h.update(np.ascontiguousarray(s.feature, dtype=float).tobytes())
    return h.hexdigest()


def with_overrides(cfg: SimConfig, **kwargs) -> SimConfig:
    known = {f.name for f in fields(SimConfig)}
    unknown = set(kwargs) - known
    if unknown:
        raise TypeError(f"unknown SimConfig fields: {sorted(unknown)}")
    return replace(cfg, **kwargs)
