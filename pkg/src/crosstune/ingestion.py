"""Readers and writers for sniff logs, embedding files and identity tables,
and segmentation of both streams into fixed time-slot events."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np

from .core import NON_POI, Dataset, Identity, assemble_dataset

log = logging.getLogger(__name__)

SNIFF_HEADER = ["timestamp", "mac", "rss_dbm", "location"]
IDENTITY_HEADER = ["index", "name", "mac"]
NON_POI_TRUTH = "NON_POI"
MAX_MALFORMED_FRACTION = 0.10

_MAC_RE = re.compile(r"^[0-9a-f]{2}([:\-]?[0-9a-f]{2}){5}$")


class IngestionError(Exception):
    """Input data could not be read or does not match the expected layout."""


class EmptyDatasetError(IngestionError):
    pass


@dataclass(frozen=True)
class SniffRecord:
    timestamp: float
    mac: str
    rss_dbm: float
    location: str


@dataclass(frozen=True)
class EmbeddingRecord:
    sample_id: int
    timestamp: float
    location: str
    feature: np.ndarray
    truth: str | None = None


def canonical_mac(text: str) -> str:
    """Lower-case colon-separated form of a 48-bit MAC address."""
    raw = text.strip().lower()
    if not _MAC_RE.match(raw):
        raise ValueError(f"not a MAC address: {text!r}")
    hexdigits = re.sub(r"[:\-]", "", raw)
    return ":".join(hexdigits[i : i + 2] for i in range(0, 12, 2))


def _open(path):
    try:
        return open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc


def parse_sniff_log(path, stats: dict | None = None) -> list[SniffRecord]:
    """Parse a ``timestamp,mac,rss_dbm,location`` CSV.

    Malformed rows are skipped; if ``stats`` is given it receives ``rows``
    and ``malformed`` counts. More than 10% malformed rows is a format error.
    """
    records, bad, total = [], 0, 0
    with _open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError(f"{path}: empty file, expected header {','.join(SNIFF_HEADER)}")
        if [h.strip() for h in header] != SNIFF_HEADER:
            raise IngestionError(f"{path}: header {header} != {SNIFF_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            total += 1
            try:
                ts, mac, rss, location = row
                rec = SniffRecord(float(ts), canonical_mac(mac), float(rss), location.strip())
                if not (math.isfinite(rec.timestamp) and math.isfinite(rec.rss_dbm)) or rec.rss_dbm > 0:
                    raise ValueError("out of range")
            except ValueError:
                bad += 1
                log.debug("%s:%d: skipping malformed sniff row %r", path, lineno, row)
                continue
            records.append(rec)
    if bad:
        log.info("%s: skipped %d of %d malformed rows", path, bad, total)
    if total and bad / total > MAX_MALFORMED_FRACTION:
        raise IngestionError(f"{path}: {bad} of {total} rows malformed (limit 10%)")
    if stats is not None:
        stats.update(rows=total, malformed=bad)
    return records


def filter_by_rss(records, threshold_dbm: float = -55.0) -> list[SniffRecord]:
    """Keep detections at or above ``threshold_dbm``."""
    if not math.isfinite(threshold_dbm):
        raise ValueError("RSS threshold must be finite")
    return [r for r in records if r.rss_dbm >= threshold_dbm]


def parse_embeddings(path) -> list[EmbeddingRecord]:
    records = []
    dim = None
    with _open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                feature = np.array(obj["feature"], dtype=float)
                rec = EmbeddingRecord(
                    sample_id=int(obj["sample_id"]),
                    timestamp=float(obj["timestamp"]),
                    location=str(obj["location"]),
                    feature=feature,
                    truth=obj.get("truth"),
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise IngestionError(f"{path}:{lineno}: bad embedding record: {exc}") from exc
            if feature.ndim != 1 or not np.all(np.isfinite(feature)):
                raise IngestionError(f"{path}:{lineno}: feature must be a finite 1-D list")
            if dim is None:
                dim = feature.size
            elif feature.size != dim:
                raise IngestionError(f"{path}:{lineno}: feature length {feature.size} != {dim}")
            records.append(rec)
    return records


def parse_identities(path) -> list[Identity]:
    out = []
    with _open(path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != IDENTITY_HEADER:
            raise IngestionError(f"{path}: header must be {','.join(IDENTITY_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(Identity(int(row["index"]), row["name"], canonical_mac(row["mac"])))
            except (ValueError, TypeError) as exc:
                raise IngestionError(f"{path}:{lineno}: bad identity row: {exc}") from exc
    out.sort(key=lambda i: i.index)
    if [i.index for i in out] != list(range(len(out))):
        raise IngestionError(f"{path}: identity indices must be 0..m-1 without gaps")
    if len({i.mac for i in out}) != len(out):
        raise IngestionError(f"{path}: duplicate MAC addresses")
    return out


def _bucket(timestamp: float, location: str, slot_hours: int, tz: ZoneInfo):
    local = dt.datetime.fromtimestamp(timestamp, tz)
    slot = local.hour // slot_hours
    return (local.date(), slot, location)


def segment_events(
    embeddings,
    sniffs,
    identities,
    slot_hours: int = 2,
    locations=None,
    tz: str = "UTC",
) -> Dataset:
    """Group face samples and POI detections into (day, slot, location) events.

    Attendance of identity ``j`` in an event is 1 iff its MAC was seen in that
    bucket. Unknown MACs are ignored; buckets without faces and without POI
    detections do not become events.
    """
    if slot_hours < 1 or 24 % slot_hours:
        raise ValueError(f"slot_hours must divide 24, got {slot_hours}")
    zone = ZoneInfo(tz)
    identities = sorted(identities, key=lambda i: i.index)
    by_mac = {i.mac: i.index for i in identities}
    by_name = {i.display_name: i.index for i in identities}
    allowed = None if locations is None else set(locations)
    m = len(identities)

    buckets: dict = {}
    for rec in sniffs:
        j = by_mac.get(rec.mac)
        if j is None or (allowed is not None and rec.location not in allowed):
            continue
        key = _bucket(rec.timestamp, rec.location, slot_hours, zone)
        buckets.setdefault(key, np.zeros(m))[j] = 1.0

    dims = {len(e.feature) for e in embeddings}
    if len(dims) > 1:
        raise IngestionError(f"embedding dimensions disagree: {sorted(dims)}")
    dim = dims.pop() if dims else 0
    samples = []
    for rec in embeddings:
        if allowed is not None and rec.location not in allowed:
            continue
        if rec.truth is None:
            truth = None
        elif rec.truth in by_name:
            truth = by_name[rec.truth]
        else:
            truth = NON_POI
        key = _bucket(rec.timestamp, rec.location, slot_hours, zone)
        samples.append((rec.sample_id, key, rec.feature, truth))

    ds = assemble_dataset(identities, buckets, samples, dim)
    if ds.h == 0:
        raise EmptyDatasetError("no events: neither face samples nor POI detections were found")
    return ds


def load_dataset(
    data_dir,
    slot_hours: int = 2,
    rss_threshold_dbm: float = -55.0,
    tz: str = "UTC",
) -> Dataset:
    """Read ``identities.csv``, ``sniffs.csv`` and ``embeddings.jsonl`` from a directory."""
    data_dir = Path(data_dir)
    paths = {name: data_dir / name for name in ("identities.csv", "sniffs.csv", "embeddings.jsonl")}
    for p in paths.values():
        if not p.is_file():
            raise IngestionError(f"missing input file: {p}")
    identities = parse_identities(paths["identities.csv"])
    sniffs = filter_by_rss(parse_sniff_log(paths["sniffs.csv"]), rss_threshold_dbm)
    embeddings = parse_embeddings(paths["embeddings.jsonl"])
    return segment_events(embeddings, sniffs, identities, slot_hours=slot_hours, tz=tz)


def write_identities(path, identities) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IDENTITY_HEADER)
        for ident in sorted(identities, key=lambda i: i.index):
            w.writerow([ident.index, ident.display_name, ident.mac])


def write_sniff_log(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SNIFF_HEADER)
        for r in records:
            ts = int(r.timestamp) if float(r.timestamp).is_integer() else repr(float(r.timestamp))
            rss = int(r.rss_dbm) if float(r.rss_dbm).is_integer() else repr(float(r.rss_dbm))
            w.writerow([ts, r.mac, rss, r.location])


def write_embeddings(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            ts = int(r.timestamp) if float(r.timestamp).is_integer() else float(r.timestamp)
            obj = {
                "sample_id": int(r.sample_id),
                "timestamp": ts,
                "location": r.location,
                "feature": [float(v) for v in r.feature],
                "truth": r.truth,
            }
            fh.write(json.dumps(obj) + "\n")
