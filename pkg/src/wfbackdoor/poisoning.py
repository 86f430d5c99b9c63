"""Label-consistent poisoning and inference-time trigger application.

``poison_trainset`` triggers a sampled fraction of the target class without
touching any label (the only poisoning a traffic defender can realize).
``apply_red_pill`` triggers every non-target trace of an evaluation set so a
backdoored model misreads them as the target page; ``apply_blue_pill``
leaves traffic untouched. ``random_removal`` models the adaptive attacker
that strips random incoming packets hoping to destroy the trigger.

Per-trace randomness is derived from (rng_seed, stage tag, entry index) so
results are reproducible and independent of any parallel schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distances import DistanceConfig
from .injection import TriggerPlan, equal_split, inject
from .predictor import PredictorModel, infer_plan
from .static_opt import StaticOptConfig, optimize_static
from .traces import DatasetEntry, LabeledDataset, Trace

_SEL_TAG, _TRAIN_TAG, _REDPILL_TAG, _REMOVAL_TAG = 0, 1, 2, 3


@dataclass(frozen=True)
class PoisonConfig:
    target_label: int
    total: int
    poison_rate: float = 0.01
    trigger_mode: str = "dynamic"
    m: int = 7
    rng_seed: int = 0
    pool_size: int = 20  # static mode candidate pool
    region: tuple[int, int] = (50, 1500)  # dynamic mode insertion index range

    def __post_init__(self):
        if not (0.0 < self.poison_rate <= 1.0):
            raise ValueError("poison_rate must be in (0, 1]")
        if self.trigger_mode not in ("static", "dynamic"):
            raise ValueError("trigger_mode must be 'static' or 'dynamic'")
        if self.target_label < 0 or self.total < 0 or self.m < 1:
            raise ValueError("target_label/total must be >= 0 and m >= 1")


def _entry_seed(cfg: PoisonConfig, tag: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.rng_seed, tag, index])


def _clamped_region(cfg: PoisonConfig, length: int) -> tuple[int, int]:
    lo = max(1, cfg.region[0])
    hi = min(cfg.region[1], length + 1)
    if hi <= lo:
        lo, hi = 1, length + 1
    return lo, hi


def _plan_for_entry(
    trace: Trace,
    index: int,
    cfg: PoisonConfig,
    dist: DistanceConfig,
    predictor: PredictorModel | None,
    tag: int,
) -> TriggerPlan:
    seed_seq = _entry_seed(cfg, tag, index)
    if cfg.trigger_mode == "static":
        seed = int(seed_seq.generate_state(1)[0])
        opt = StaticOptConfig(
            total=cfg.total,
            pool_size=max(cfg.pool_size, cfg.m),
            m=min(cfg.m, len(trace)),
            rng_seed=seed,
        )
        return optimize_static(trace, opt, dist)
    if predictor is None:
        raise ValueError("dynamic trigger mode needs a trained predictor")
    rng = np.random.default_rng(seed_seq)
    return infer_plan(predictor, trace, cfg.m, _clamped_region(cfg, len(trace)), rng)


def poison_trainset_with_plans(
    dataset: LabeledDataset,
    cfg: PoisonConfig,
    dist: DistanceConfig | None = None,
    predictor: PredictorModel | None = None,
) -> tuple[LabeledDataset, dict[str, TriggerPlan]]:
    """Trigger ceil(poison_rate * N_target) target-class traces.

    Labels are untouched everywhere; modified entries get the poisoned flag.
    Also returns the applied plan per modified entry name.
    """
    dist = dist or DistanceConfig()
    target_idx = [i for i, e in enumerate(dataset.entries) if e.label == cfg.target_label]
    if not target_idx:
        raise ValueError(f"target class {cfg.target_label} has no traces")
    count = math.ceil(cfg.poison_rate * len(target_idx))
    rng = np.random.default_rng(_entry_seed(cfg, _SEL_TAG, 0))
    chosen = set(rng.choice(target_idx, size=count, replace=False).tolist())

    plans: dict[str, TriggerPlan] = {}
    entries: list[DatasetEntry] = []
    for i, entry in enumerate(dataset.entries):
        if i in chosen:
            plan = _plan_for_entry(entry.trace, i, cfg, dist, predictor, _TRAIN_TAG)
            plans[entry.name] = plan
            entries.append(
                DatasetEntry(trace=inject(entry.trace, plan), label=entry.label, name=entry.name, poisoned=True)
            )
        else:
            entries.append(entry)
    return dataset.with_entries(entries), plans


def poison_trainset(
    dataset: LabeledDataset,
    cfg: PoisonConfig,
    dist: DistanceConfig | None = None,
    predictor: PredictorModel | None = None,
) -> LabeledDataset:
    return poison_trainset_with_plans(dataset, cfg, dist, predictor)[0]


def apply_red_pill_with_plans(
    dataset: LabeledDataset,
    cfg: PoisonConfig,
    dist: DistanceConfig | None = None,
    predictor: PredictorModel | None = None,
) -> tuple[LabeledDataset, dict[str, TriggerPlan]]:
    """Trigger every trace whose label differs from the target (defense on)."""
    dist = dist or DistanceConfig()
    plans: dict[str, TriggerPlan] = {}
    entries: list[DatasetEntry] = []
    for i, entry in enumerate(dataset.entries):
        if entry.label == cfg.target_label:
            entries.append(entry)
            continue
        plan = _plan_for_entry(entry.trace, i, cfg, dist, predictor, _REDPILL_TAG)
        plans[entry.name] = plan
        entries.append(
            DatasetEntry(trace=inject(entry.trace, plan), label=entry.label, name=entry.name, poisoned=True)
        )
    return dataset.with_entries(entries), plans


def apply_red_pill(
    dataset: LabeledDataset,
    cfg: PoisonConfig,
    dist: DistanceConfig | None = None,
    predictor: PredictorModel | None = None,
) -> LabeledDataset:
    return apply_red_pill_with_plans(dataset, cfg, dist, predictor)[0]


def apply_blue_pill(dataset: LabeledDataset) -> LabeledDataset:
    """Defense off: traffic passes through untouched."""
    return dataset


def _remove_incoming(trace: Trace, total: int, m: int, rng: np.random.Generator) -> Trace:
    n = len(trace)
    incoming = np.where(trace.directions < 0)[0]
    if total == 0 or len(incoming) == 0:
        return trace
    count = min(m, n)
    positions = np.sort(rng.choice(n, size=count, replace=False))
    quotas = equal_split(total, m)[:count]
    removed = np.zeros(len(incoming), dtype=bool)
    for pos, quota in zip(positions, quotas):
        start = int(np.searchsorted(incoming, pos))
        left = int(quota)
        for j in list(range(start, len(incoming))) + list(range(0, start)):
            if left == 0:
                break
            if not removed[j]:
                removed[j] = True
                left -= 1
    keep = np.ones(n, dtype=bool)
    keep[incoming[removed]] = False
    return Trace(trace.timestamps[keep], trace.directions[keep])


def random_removal(dataset: LabeledDataset, total: int, m: int, rng_seed: int = 0) -> LabeledDataset:
    """Adaptive attack: drop incoming packets near m random positions per trace.

    Each position scans forward (wrapping at the end) and removes its share
    of ``equal_split(total, m)`` incoming events; outgoing packets are never
    touched, and a trace with fewer than ``total`` incoming events loses all
    of them.
    """
    if total < 0 or m < 1:
        raise ValueError("total must be >= 0 and m >= 1")
    entries = []
    for i, entry in enumerate(dataset.entries):
        rng = np.random.default_rng(np.random.SeedSequence([rng_seed, _REMOVAL_TAG, i]))
        entries.append(
            DatasetEntry(
                trace=_remove_incoming(entry.trace, total, m, rng),
                label=entry.label,
                name=entry.name,
                poisoned=entry.poisoned,
            )
        )
    return dataset.with_entries(entries)


def write_poison_manifest(dataset: LabeledDataset, path: str) -> None:
    """Record which persisted trace files carry a trigger."""
    names = [e.name for e in dataset.entries if e.poisoned]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(names) + ("\n" if names else ""))
