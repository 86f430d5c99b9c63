"""Packet-trace data model and the line-based on-disk dataset format.

A trace is an ordered sequence of (timestamp, direction) events for one
page load, direction +1 for client->server and -1 for server->client.
Datasets live in a directory with one file per trace:

  * one event per line, ``timestamp<TAB>direction``
  * monitored traces are named ``<label>-<instance>``
  * unmonitored traces (open-world only) are named ``<instance>`` and are
    assigned the sentinel class ``C - 1``

This matches the distribution format of the common WF corpora, so external
datasets drop in unchanged.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple, Sequence

import numpy as np

_LOGGER = logging.getLogger(__name__)


class TraceParseError(ValueError):
    """A dataset file contains a line that is not `timestamp<TAB>direction`."""

    def __init__(self, path: str, line_no: int, reason: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {reason}")


class PacketEvent(NamedTuple):
    timestamp: float
    direction: int


@dataclass(frozen=True)
class Trace:
    """An immutable packet trace: parallel timestamp/direction arrays.

    Invariants (checked on construction): timestamps are non-negative and
    non-decreasing, directions are exactly +1 or -1.
    """

    timestamps: np.ndarray
    directions: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        ds = np.asarray(self.directions, dtype=np.int8)
        if ts.ndim != 1 or ds.ndim != 1 or len(ts) != len(ds):
            raise ValueError("timestamps and directions must be 1-D and equal length")
        if len(ts) and ts[0] < 0:
            raise ValueError("timestamps must be non-negative")
        if len(ts) > 1 and np.any(np.diff(ts) < 0):
            raise ValueError("timestamps must be non-decreasing")
        if np.any(np.abs(ds) != 1):
            raise ValueError("directions must be +1 or -1")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "directions", ds)

    def __len__(self) -> int:
        return len(self.timestamps)

    def events(self) -> Iterator[PacketEvent]:
        for t, d in zip(self.timestamps, self.directions):
            yield PacketEvent(float(t), int(d))

    @classmethod
    def from_events(cls, events: Sequence[tuple[float, int]]) -> "Trace":
        if len(events) == 0:
            return cls(np.empty(0, dtype=np.float64), np.empty(0, dtype=np.int8))
        ts, ds = zip(*events)
        return cls(np.asarray(ts, dtype=np.float64), np.asarray(ds, dtype=np.int8))

    def duration(self) -> float:
        return float(self.timestamps[-1]) if len(self) else 0.0


@dataclass(frozen=True)
class DatasetEntry:
    trace: Trace
    label: int
    name: str
    poisoned: bool = False


@dataclass
class LabeledDataset:
    """Traces with class labels plus poisoning bookkeeping.

    ``class_count`` includes the unmonitored sentinel class when the dataset
    was loaded in open-world mode (sentinel label = class_count - 1).
    """

    entries: list[DatasetEntry]
    class_count: int
    open_world: bool = False
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[DatasetEntry]:
        return iter(self.entries)

    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries], dtype=np.int64)

    def poisoned_flags(self) -> np.ndarray:
        return np.array([e.poisoned for e in self.entries], dtype=bool)

    def with_entries(self, entries: list[DatasetEntry]) -> "LabeledDataset":
        return replace(self, entries=entries, warnings=list(self.warnings))


def direction_sequence(trace: Trace) -> np.ndarray:
    """Project a trace onto its +/-1 direction sequence (all distances use this)."""
    return trace.directions.copy()


def pad_or_truncate(seq: Sequence[int] | np.ndarray, target_len: int) -> np.ndarray:
    """Cut or right-pad a direction sequence to a fixed length.

    The pad value 0 means "no packet" and is distinct from both real
    directions, so downstream code can never confuse padding with traffic.
    """
    if target_len < 1:
        raise ValueError("target_len must be >= 1")
    seq = np.asarray(seq, dtype=np.int8)
    if len(seq) >= target_len:
        return seq[:target_len].copy()
    out = np.zeros(target_len, dtype=np.int8)
    out[: len(seq)] = seq
    return out


def _parse_trace_file(path: str) -> Trace:
    timestamps: list[float] = []
    directions: list[int] = []
    with open(path, "r", encoding="ascii") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise TraceParseError(path, line_no, "expected `timestamp<TAB>direction`")
            try:
                ts = float(parts[0])
            except ValueError:
                raise TraceParseError(path, line_no, f"bad timestamp {parts[0]!r}") from None
            try:
                d = float(parts[1])
            except ValueError:
                raise TraceParseError(path, line_no, f"bad direction {parts[1]!r}") from None
            if d not in (1.0, -1.0):
                raise TraceParseError(path, line_no, f"direction must be +1 or -1, got {parts[1]!r}")
            if ts < 0:
                raise TraceParseError(path, line_no, f"negative timestamp {parts[0]!r}")
            timestamps.append(ts)
            directions.append(int(d))
    if timestamps and np.any(np.diff(timestamps) < 0):
        raise TraceParseError(path, 0, "timestamps are not non-decreasing")
    return Trace(np.asarray(timestamps, dtype=np.float64), np.asarray(directions, dtype=np.int8))


def _split_name(name: str) -> tuple[int | None, str]:
    """Return (label, name); label is None for unmonitored `<instance>` files."""
    head, sep, tail = name.partition("-")
    if sep and head.isdigit() and tail != "":
        return int(head), name
    return None, name


def load_dataset(
    root: str,
    per_class_cap: int | None = None,
    open_world: bool = False,
) -> LabeledDataset:
    """Load every parseable trace under ``root``.

    Entries are ordered lexicographically by filename so two loads of the
    same directory are identical. ``per_class_cap`` keeps only the first N
    files (by that order) of each class, for deterministic subsampling.
    Empty files are skipped with a warning record; malformed lines raise
    :class:`TraceParseError`.
    """
    names = sorted(
        n for n in os.listdir(root) if os.path.isfile(os.path.join(root, n))
    )
    if not names:
        raise ValueError(f"no trace files found in {root!r}")

    warnings: list[str] = []
    parsed: list[tuple[int | None, str, Trace]] = []
    taken_per_class: dict[int | None, int] = {}
    for name in names:
        label, _ = _split_name(name)
        if label is None and not open_world:
            warnings.append(f"skipped unmonitored file {name!r} (closed-world load)")
            _LOGGER.warning("skipped unmonitored file %r (closed-world load)", name)
            continue
        if per_class_cap is not None and taken_per_class.get(label, 0) >= per_class_cap:
            continue
        trace = _parse_trace_file(os.path.join(root, name))
        if len(trace) == 0:
            warnings.append(f"skipped empty file {name!r}")
            _LOGGER.warning("skipped empty trace file %r", name)
            continue
        taken_per_class[label] = taken_per_class.get(label, 0) + 1
        parsed.append((label, name, trace))

    if not parsed:
        raise ValueError(f"no usable traces in {root!r}")

    monitored_labels = [lab for lab, _, _ in parsed if lab is not None]
    mon_count = (max(monitored_labels) + 1) if monitored_labels else 0
    class_count = mon_count + 1 if open_world else mon_count
    if class_count == 0:
        raise ValueError(f"no labeled traces in {root!r}")

    entries = [
        DatasetEntry(trace=tr, label=(lab if lab is not None else class_count - 1), name=name)
        for lab, name, tr in parsed
    ]
    return LabeledDataset(entries=entries, class_count=class_count, open_world=open_world, warnings=warnings)


def format_trace(trace: Trace) -> str:
    """Canonical text form of a trace (shortest round-tripping float repr)."""
    lines = [f"{repr(float(t))}\t{int(d)}" for t, d in zip(trace.timestamps, trace.directions)]
    return "\n".join(lines) + "\n"


def save_dataset(dataset: LabeledDataset, out_dir: str) -> None:
    """Persist a dataset in the input directory format (one file per entry)."""
    os.makedirs(out_dir, exist_ok=True)
    for entry in dataset.entries:
        with open(os.path.join(out_dir, entry.name), "w", encoding="ascii") as fh:
            fh.write(format_trace(entry.trace))
