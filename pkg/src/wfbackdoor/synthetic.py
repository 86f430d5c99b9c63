"""Synthetic page-load corpora with class-distinct traffic shapes.

All classes share one base loading skeleton: an opening request storm (the
client fires off its resource requests before the first response bytes
arrive) followed by a tapering tail of download phases. Pages differ in
their request patterns: each class modulates the per-phase outgoing volume,
while response traffic follows generic per-phase volumes with per-trace
noise. Traces sample Poisson counts around the profile, so classes are
separable through many small per-slot differences, the way real pages
differ, with no single slot carrying the identity.

Everything derives from numpy SeedSequences, so corpora are reproducible
from one seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .traces import DatasetEntry, LabeledDataset, Trace


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 10
    per_class: int = 100
    unmonitored: int = 0
    seed: int = 0
    mean_events: int = 3400
    duration: float = 16.0  # typical page-load seconds
    front_frac: float = 0.5  # share of events in the opening request storm
    front_secs: float = 2.5  # duration of that storm
    front_jitter: float = 0.05  # per-trace volume noise of the storm
    class_spread: float = 0.5  # per-phase request-volume modulation between classes
    tail_jitter: float = 0.15  # per-trace, per-phase volume noise after the storm
    jitter: float = 0.06  # per-trace global volume jitter

    def __post_init__(self):
        if self.classes < 1 or self.per_class < 1:
            raise ValueError("need at least one class and one trace per class")
        if self.mean_events < 8 or self.duration <= 0:
            raise ValueError("mean_events must be >= 8 and duration > 0")
        if not (0.0 < self.front_frac < 1.0) or not (0.0 < self.front_secs < self.duration):
            raise ValueError("request storm must fit inside the page load")


@dataclass(frozen=True)
class _Profile:
    bounds: np.ndarray  # phase boundaries in seconds, len P+1
    out_events: np.ndarray  # expected outgoing count per phase
    in_events: np.ndarray  # expected incoming count per phase


def _base_profile(cfg: SynthConfig) -> _Profile:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 9]))
    tail_phases = int(rng.integers(4, 7))
    cuts = np.sort(rng.uniform(0.1, 0.9, size=tail_phases - 1))
    tail_bounds = cfg.front_secs + cuts * (cfg.duration - cfg.front_secs)
    bounds = np.concatenate([[0.0, cfg.front_secs], tail_bounds, [cfg.duration]])
    tail_weights = rng.uniform(0.4, 1.0, size=tail_phases)
    tail_weights *= (1.0 - cfg.front_frac) / tail_weights.sum()
    tail_events = tail_weights * cfg.mean_events
    # the storm is pure requests; afterwards requests trickle alongside the
    # dominant response stream
    tail_out = tail_events * rng.uniform(0.25, 0.4, size=tail_phases)
    return _Profile(
        bounds=bounds,
        out_events=np.concatenate([[cfg.front_frac * cfg.mean_events], tail_out]),
        in_events=np.concatenate([[0.0], tail_events - tail_out]),
    )


def _class_profile(cfg: SynthConfig, base: _Profile, key: tuple[int, ...]) -> _Profile:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, *key]))
    out_mod = 1.0 + cfg.class_spread * rng.uniform(-1.0, 1.0, size=len(base.out_events))
    # the storm volume is boilerplate, and response volumes are generic: page
    # identity lives in what the client requests as the load progresses
    out_mod[0] = 1.0
    return _Profile(
        bounds=base.bounds,
        out_events=base.out_events * out_mod,
        in_events=base.in_events.copy(),
    )


def _fresh_profile(cfg: SynthConfig, key: tuple[int, ...]) -> _Profile:
    # unmonitored pages: same skeleton, independent modulation per trace
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, *key]))
    base = _base_profile(cfg)
    out_mod = 1.0 + 2.0 * cfg.class_spread * rng.uniform(-1.0, 1.0, size=len(base.out_events))
    out_mod[0] = 1.0
    in_mod = 1.0 + cfg.class_spread * rng.uniform(-1.0, 1.0, size=len(base.in_events))
    return _Profile(
        bounds=base.bounds,
        out_events=base.out_events * out_mod,
        in_events=base.in_events * in_mod,
    )


def _sample_trace(profile: _Profile, cfg: SynthConfig, rng: np.random.Generator) -> Trace:
    scale = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter)
    front_scale = rng.uniform(1.0 - cfg.front_jitter, 1.0 + cfg.front_jitter)
    times = []
    dirs = []
    for p in range(len(profile.out_events)):
        lo, hi = profile.bounds[p], profile.bounds[p + 1]
        if p == 0:
            n_out = int(rng.poisson(max(profile.out_events[0] * front_scale, 1.0)))
            n_in = 0
        else:
            phase_scale = scale * rng.uniform(1.0 - cfg.tail_jitter, 1.0 + cfg.tail_jitter)
            n_out = int(rng.poisson(max(profile.out_events[p] * phase_scale, 0.5)))
            n_in = int(rng.poisson(max(profile.in_events[p] * phase_scale, 0.5)))
        n = n_out + n_in
        if n == 0:
            continue
        ts = rng.uniform(lo, hi, size=n)
        ds = np.concatenate([np.ones(n_out, dtype=np.int8), -np.ones(n_in, dtype=np.int8)])
        times.append(ts)
        dirs.append(ds)
    if not times:
        times = [np.array([0.0])]
        dirs = [np.array([-1], dtype=np.int8)]
    ts = np.concatenate(times)
    ds = np.concatenate(dirs)
    order = np.argsort(ts, kind="stable")
    return Trace(np.round(ts[order], 6), ds[order])


def make_synthetic_dataset(cfg: SynthConfig) -> LabeledDataset:
    """Closed-world corpus of ``classes`` x ``per_class`` labeled traces,
    plus ``unmonitored`` sentinel-class traces when requested."""
    base = _base_profile(cfg)
    entries: list[DatasetEntry] = []
    for c in range(cfg.classes):
        profile = _class_profile(cfg, base, (10, c))
        for i in range(cfg.per_class):
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11, c, i]))
            entries.append(
                DatasetEntry(trace=_sample_trace(profile, cfg, rng), label=c, name=f"{c}-{i:04d}")
            )
    open_world = cfg.unmonitored > 0
    class_count = cfg.classes + 1 if open_world else cfg.classes
    for i in range(cfg.unmonitored):
        profile = _fresh_profile(cfg, (12, i))
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 13, i]))
        entries.append(
            DatasetEntry(trace=_sample_trace(profile, cfg, rng), label=class_count - 1, name=f"{i:06d}")
        )
    entries.sort(key=lambda e: e.name)
    return LabeledDataset(entries=entries, class_count=class_count, open_world=open_world)


def mean_trace_length(dataset: LabeledDataset) -> float:
    return float(np.mean([len(e.trace) for e in dataset.entries]))
