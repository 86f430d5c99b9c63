import numpy as np
import pytest

from wfbackdoor.distances import DistanceConfig, fast_lev, levenshtein_full


def random_pair(rng, max_len=64):
    la, lb = rng.integers(0, max_len + 1, size=2)
    return rng.choice([-1, 1], size=la), rng.choice([-1, 1], size=lb)


def test_identity_is_zero():
    a = np.array([1, -1, 1], dtype=np.int8)
    assert levenshtein_full(a, a) == 0.0
    assert fast_lev(a, a) == 0.0


def test_hand_checked_insertion():
    # full DP table by hand: one -1 inserted
    a = [1, -1, 1]
    b = [1, -1, -1, 1]
    assert levenshtein_full(a, b) == 1.0
    assert fast_lev(a, b) == 1.0


def test_boundary_rows():
    assert levenshtein_full([], [-1, -1]) == 2.0
    assert fast_lev([], [-1, -1]) == 2.0
    assert fast_lev([1, 1, 1], []) == 3.0


def test_band_zero_diagonal_substitutions():
    cfg = DistanceConfig(band_width=0)
    assert fast_lev([1, 1], [-1, -1], cfg) == 2.0


def test_fast_matches_full_when_band_covers():
    rng = np.random.default_rng(7)
    cfg = DistanceConfig(band_width=64)
    for _ in range(200):
        a, b = random_pair(rng)
        assert fast_lev(a, b, cfg) == levenshtein_full(a, b, cfg)


def test_band_dominance():
    rng = np.random.default_rng(8)
    for _ in range(200):
        a, b = random_pair(rng)
        bw = int(rng.choice([0, 2, 8]))
        assert fast_lev(a, b, DistanceConfig(band_width=bw)) >= levenshtein_full(a, b) - 1e-12


def test_band_equality_when_width_at_least_distance():
    rng = np.random.default_rng(9)
    for _ in range(100):
        a, b = random_pair(rng, max_len=32)
        exact = levenshtein_full(a, b)
        cfg = DistanceConfig(band_width=int(exact))
        assert fast_lev(a, b, cfg) == exact


def test_symmetry_unit_costs():
    rng = np.random.default_rng(10)
    for _ in range(100):
        a, b = random_pair(rng, max_len=48)
        assert fast_lev(a, b) == fast_lev(b, a)


def test_weighted_costs_match_oracle():
    rng = np.random.default_rng(11)
    cfg = DistanceConfig(band_width=48, insert_cost=0.7, delete_cost=1.3, substitute_cost=0.9)
    for _ in range(100):
        a, b = random_pair(rng, max_len=40)
        assert fast_lev(a, b, cfg) == pytest.approx(levenshtein_full(a, b, cfg), abs=1e-9)


def test_insertion_monotonicity():
    # appending k incoming symbols costs exactly k with an adequate band
    rng = np.random.default_rng(12)
    a = rng.choice([-1, 1], size=50)
    previous = 0.0
    for k in (1, 5, 20, 60):
        b = np.concatenate([a, -np.ones(k, dtype=a.dtype)])
        d = fast_lev(a, b)
        assert d == float(k)
        assert d > previous
        previous = d


def test_truncation_knob():
    cfg = DistanceConfig(max_len=10)
    a = np.ones(50, dtype=np.int8)
    b = -np.ones(50, dtype=np.int8)
    # both truncated to 10 before comparison
    assert fast_lev(a, b, cfg) == 10.0


def test_config_validation():
    with pytest.raises(ValueError):
        DistanceConfig(band_width=-1)
    with pytest.raises(ValueError):
        DistanceConfig(insert_cost=0.0)
    with pytest.raises(ValueError):
        DistanceConfig(max_len=0)
