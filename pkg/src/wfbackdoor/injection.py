"""Trigger injection: bursts of incoming dummy packets at chosen indices.

A plan is a list of insertion indices ``k`` (strictly increasing, each in
[0, L]) and burst lengths ``deltas``. Applying a plan inserts ``deltas[m]``
dummy events with direction -1 immediately before the original event at
index ``k[m]``, each dummy carrying that event's timestamp (the final
timestamp when ``k[m] == L``). Real packets are never delayed, so the
defense has exactly zero time overhead by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .traces import Trace


@dataclass(frozen=True)
class TriggerPlan:
    locations: np.ndarray  # int64, strictly increasing
    bursts: np.ndarray  # int64, non-negative

    def __post_init__(self):
        locs = np.asarray(self.locations, dtype=np.int64)
        bursts = np.asarray(self.bursts, dtype=np.int64)
        if locs.ndim != 1 or bursts.ndim != 1 or len(locs) != len(bursts):
            raise ValueError("locations and bursts must be 1-D and equal length")
        if len(locs):
            if np.any(locs < 0):
                raise ValueError("insertion indices must be >= 0")
            if np.any(np.diff(locs) <= 0):
                raise ValueError("insertion indices must be strictly increasing")
        if np.any(bursts < 0):
            raise ValueError("burst lengths must be >= 0")
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "bursts", bursts)

    @property
    def total(self) -> int:
        return int(self.bursts.sum())

    def __len__(self) -> int:
        return len(self.locations)


def equal_split(total: int, m: int) -> np.ndarray:
    """Split a packet budget into m bursts of floor(total/m), the remainder
    going one extra packet to the earliest bursts; the sum is exact."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if total < 0:
        raise ValueError("total must be >= 0")
    base, rem = divmod(total, m)
    out = np.full(m, base, dtype=np.int64)
    out[:rem] += 1
    return out


def inject(trace: Trace, plan: TriggerPlan) -> Trace:
    """Apply a trigger plan, returning the poisoned trace.

    Original events keep their timestamps and relative order; the result has
    exactly ``len(trace) + plan.total`` events. Indices beyond the trace
    length are clamped to the end (plans may be computed before the full
    trace length is known).
    """
    n = len(trace)
    if n == 0:
        raise ValueError("cannot inject into empty trace")
    if len(plan) == 0 or plan.total == 0:
        return Trace(trace.timestamps.copy(), trace.directions.copy())

    locs = np.minimum(plan.locations, n)
    # timestamp of the event originally at the insertion index (last event
    # when inserting at the end)
    ts_at = trace.timestamps[np.minimum(locs, n - 1)]
    ins_idx = np.repeat(locs, plan.bursts)
    ins_ts = np.repeat(ts_at, plan.bursts)
    new_ts = np.insert(trace.timestamps, ins_idx, ins_ts)
    new_dirs = np.insert(trace.directions, ins_idx, np.int8(-1))
    return Trace(new_ts, new_dirs)


def strip_injected(original: Trace, poisoned: Trace) -> Trace:
    """Remove injected events again, greedily matching the original as a
    subsequence of the poisoned trace. Inverse of :func:`inject`."""
    keep = np.zeros(len(poisoned), dtype=bool)
    i = 0
    ts, ds = original.timestamps, original.directions
    pts, pds = poisoned.timestamps, poisoned.directions
    for j in range(len(poisoned)):
        if i < len(original) and pts[j] == ts[i] and pds[j] == ds[i]:
            keep[j] = True
            i += 1
    if i != len(original):
        raise ValueError("original trace is not a subsequence of the poisoned trace")
    return Trace(pts[keep], pds[keep])


def format_plan(plan: TriggerPlan) -> str:
    return " ".join(f"{int(k)}:{int(d)}" for k, d in zip(plan.locations, plan.bursts))


def parse_plan(text: str) -> TriggerPlan:
    text = text.strip()
    if not text:
        return TriggerPlan(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    locs, bursts = [], []
    for token in text.split():
        k, _, d = token.partition(":")
        locs.append(int(k))
        bursts.append(int(d))
    return TriggerPlan(np.asarray(locs, dtype=np.int64), np.asarray(bursts, dtype=np.int64))


def save_plan(plan: TriggerPlan, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(format_plan(plan) + "\n")


def load_plan(path: str) -> TriggerPlan:
    with open(path, "r", encoding="ascii") as fh:
        return parse_plan(fh.read())
