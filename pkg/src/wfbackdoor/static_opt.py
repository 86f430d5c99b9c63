"""Greedy static trigger search under full-trace access.

The optimizer samples a pool of candidate insertion indices, then grows the
location set one index at a time, each step keeping the already-chosen
locations fixed, splitting the packet budget equally across the current
locations, and scoring candidates by the banded edit distance between the
injected and the original trace. The best-scoring plan seen at any stage of
any pass is returned; the full budget is always spent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .distances import DistanceConfig, fast_lev
from .injection import TriggerPlan, equal_split, inject
from .traces import Trace, direction_sequence

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class StaticOptConfig:
    total: int
    pool_size: int = 20
    m: int = 7
    num_iterations: int = 3
    rng_seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.pool_size < self.m:
            raise ValueError("pool_size must be >= m")
        if self.total < 0:
            raise ValueError("total budget must be >= 0")
        if self.num_iterations < 1:
            raise ValueError("num_iterations must be >= 1")


@dataclass(frozen=True)
class GreedySearchResult:
    plan: TriggerPlan
    score: float
    stage_scores: tuple[float, ...]  # best score recorded after each added location


def _plan_for(locations: list[int], total: int) -> TriggerPlan:
    locs = np.asarray(sorted(locations), dtype=np.int64)
    return TriggerPlan(locs, equal_split(total, len(locs)))


def _score(trace: Trace, plan: TriggerPlan, dist: DistanceConfig) -> float:
    return fast_lev(direction_sequence(inject(trace, plan)), direction_sequence(trace), dist)


def greedy_static_search(
    trace: Trace, cfg: StaticOptConfig, dist: DistanceConfig | None = None
) -> GreedySearchResult:
    """One full greedy run; see :func:`optimize_static` for the public API."""
    dist = dist or DistanceConfig()
    n = len(trace)
    if n < 1:
        raise ValueError("cannot optimize a trigger for an empty trace")

    rng = np.random.default_rng(cfg.rng_seed)
    pool = np.sort(rng.choice(n, size=min(cfg.pool_size, n), replace=False))
    m = cfg.m
    if len(pool) < m:
        _LOGGER.warning(
            "candidate pool has %d indices < m=%d; reducing burst count", len(pool), m
        )
        m = len(pool)

    base = direction_sequence(trace)
    best_plan = TriggerPlan(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    best_score = fast_lev(base, base, dist)  # 0 by definition
    stage_scores: list[float] = []

    for _ in range(cfg.num_iterations):
        chosen: list[int] = []
        running: list[float] = []
        for _step in range(m):
            step_best_score = -np.inf
            step_best_loc = None
            for loc in pool:  # ascending, so ties resolve to the lowest index
                if loc in chosen:
                    continue
                score = _score(trace, _plan_for(chosen + [int(loc)], cfg.total), dist)
                if score > step_best_score:
                    step_best_score = score
                    step_best_loc = int(loc)
            chosen.append(step_best_loc)
            running.append(step_best_score)
            if step_best_score >= best_score:
                best_score = step_best_score
                best_plan = _plan_for(chosen, cfg.total)
        if not stage_scores:
            stage_scores = running

    return GreedySearchResult(plan=best_plan, score=best_score, stage_scores=tuple(stage_scores))


def optimize_static(
    trace: Trace, cfg: StaticOptConfig, dist: DistanceConfig | None = None
) -> TriggerPlan:
    """Optimize insertion locations for a fixed equal-burst budget.

    Deterministic for a given seed and inputs; the returned plan always
    spends the budget exactly.
    """
    return greedy_static_search(trace, cfg, dist).plan
