"""Edit distances over direction sequences.

``fast_lev`` is the trigger-optimization objective: a weighted Levenshtein
distance computed on a diagonal band, giving O(len * band) time. The band
half-width is ``band_width + abs(len(a) - len(b))`` so the corner cell is
always reachable and the banded value equals the exact distance whenever
``band_width`` is at least the exact distance. ``levenshtein_full`` is the
quadratic reference implementation kept deliberately independent as a test
oracle.

Distances look only at packet directions: the injection never delays real
packets, so timestamps carry no perturbation signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DistanceConfig:
    band_width: int = 512
    insert_cost: float = 1.0
    delete_cost: float = 1.0
    substitute_cost: float = 1.0
    max_len: int = 10000

    def __post_init__(self):
        if self.band_width < 0:
            raise ValueError("band_width must be >= 0")
        if min(self.insert_cost, self.delete_cost, self.substitute_cost) <= 0:
            raise ValueError("edit costs must be > 0")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


def levenshtein_full(a, b, cfg: DistanceConfig | None = None) -> float:
    """Exact weighted edit distance by full O(|a|*|b|) dynamic programming.

    Reference oracle for ``fast_lev``; plain nested loops on purpose.
    """
    cfg = cfg or DistanceConfig()
    a = list(np.asarray(a)[: cfg.max_len])
    b = list(np.asarray(b)[: cfg.max_len])
    ci, cd, cs = cfg.insert_cost, cfg.delete_cost, cfg.substitute_cost

    prev = [j * ci for j in range(len(b) + 1)]
    for i in range(1, len(a) + 1):
        ai = a[i - 1]
        cur = [i * cd]
        for j in range(1, len(b) + 1):
            sub = prev[j - 1] + (0.0 if ai == b[j - 1] else cs)
            best = prev[j] + cd
            if cur[j - 1] + ci < best:
                best = cur[j - 1] + ci
            if sub < best:
                best = sub
            cur.append(best)
        prev = cur
    return float(prev[-1])


def fast_lev(a, b, cfg: DistanceConfig | None = None) -> float:
    """Banded weighted edit distance restricted to |i - j| <= band_width + ||a|-|b||.

    Restricting the alignment to a band can only remove paths, so the result
    is >= the exact distance, with equality when band_width covers it.
    """
    cfg = cfg or DistanceConfig()
    a = np.asarray(a)[: cfg.max_len]
    b = np.asarray(b)[: cfg.max_len]
    n, m = len(a), len(b)
    ci, cd, cs = cfg.insert_cost, cfg.delete_cost, cfg.substitute_cost
    if n == 0:
        return float(m * ci)
    if m == 0:
        return float(n * cd)

    band = cfg.band_width + abs(n - m)
    inf = np.inf
    prev = np.full(m + 1, inf)
    hi0 = min(m, band)
    prev[: hi0 + 1] = np.arange(hi0 + 1) * ci

    for i in range(1, n + 1):
        lo = max(0, i - band)
        hi = min(m, i + band)
        # candidates from the previous row: deletion, then substitution where j >= 1
        cand = prev[lo : hi + 1] + cd
        j0 = max(lo, 1)
        if j0 <= hi:
            mism = np.where(b[j0 - 1 : hi] == a[i - 1], 0.0, cs)
            diag = prev[j0 - 1 : hi] + mism
            np.minimum(cand[j0 - lo :], diag, out=cand[j0 - lo :])
        # insertions run left-to-right inside the row; with a uniform insert
        # cost the row optimum is a running minimum of cand[k] - k*ci
        shift = np.arange(lo, hi + 1, dtype=np.float64) * ci
        cand -= shift
        np.minimum.accumulate(cand, out=cand)
        cand += shift
        cur = np.full(m + 1, inf)
        cur[lo : hi + 1] = cand
        prev = cur
    return float(prev[m])
