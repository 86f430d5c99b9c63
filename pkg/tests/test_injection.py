import numpy as np
import pytest

from wfbackdoor.injection import (
    TriggerPlan,
    equal_split,
    format_plan,
    inject,
    load_plan,
    parse_plan,
    save_plan,
    strip_injected,
)
from wfbackdoor.traces import Trace


def make_trace(rng, n):
    ts = np.sort(rng.random(n) * 10)
    ds = rng.choice([-1, 1], size=n).astype(np.int8)
    return Trace(ts, ds)


def random_plan(rng, n, max_m=5, max_burst=50):
    m = int(rng.integers(0, max_m + 1))
    if m == 0:
        return TriggerPlan(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    locs = np.sort(rng.choice(n + 1, size=min(m, n + 1), replace=False))
    bursts = rng.integers(0, max_burst, size=len(locs))
    return TriggerPlan(locs.astype(np.int64), bursts.astype(np.int64))


def test_plan_invariants():
    with pytest.raises(ValueError):
        TriggerPlan(np.array([3, 1]), np.array([1, 1]))
    with pytest.raises(ValueError):
        TriggerPlan(np.array([1, 1]), np.array([1, 1]))
    with pytest.raises(ValueError):
        TriggerPlan(np.array([1]), np.array([-2]))
    with pytest.raises(ValueError):
        TriggerPlan(np.array([1, 2]), np.array([1]))


def test_equal_split_paper_case():
    # the adaptive-attack setting quotes 2857 per burst for 20000 over 7;
    # the leftover packet goes to the first burst
    out = equal_split(20000, 7)
    assert out.tolist() == [2858, 2857, 2857, 2857, 2857, 2857, 2857]
    assert out.sum() == 20000


def test_equal_split_exact_cases():
    assert equal_split(6, 3).tolist() == [2, 2, 2]
    assert equal_split(0, 5).tolist() == [0, 0, 0, 0, 0]
    with pytest.raises(ValueError):
        equal_split(5, 0)
    with pytest.raises(ValueError):
        equal_split(-1, 3)


def test_inject_identity_on_empty_plan():
    t = Trace.from_events([(0.0, 1), (0.2, -1)])
    plan = TriggerPlan(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    out = inject(t, plan)
    assert np.array_equal(out.timestamps, t.timestamps)
    assert np.array_equal(out.directions, t.directions)


def test_inject_hand_case():
    t = Trace.from_events([(0.0, 1), (0.2, -1), (0.5, 1)])
    out = inject(t, TriggerPlan(np.array([1]), np.array([2])))
    assert list(out.timestamps) == [0.0, 0.2, 0.2, 0.2, 0.5]
    assert list(out.directions) == [1, -1, -1, -1, 1]


def test_inject_count_accounting():
    rng = np.random.default_rng(0)
    t = make_trace(rng, 100)
    out = inject(t, TriggerPlan(np.array([10, 50]), np.array([3, 4])))
    assert len(out) == 107
    added = len(out) - 100
    assert added == 7
    # all inserted events have direction -1
    kept = strip_injected(t, out)
    assert np.array_equal(kept.timestamps, t.timestamps)
    assert np.array_equal(kept.directions, t.directions)


def test_inject_empty_trace_rejected():
    empty = Trace(np.empty(0), np.empty(0, dtype=np.int8))
    with pytest.raises(ValueError, match="empty trace"):
        inject(empty, TriggerPlan(np.array([0]), np.array([1])))


def test_inject_at_end_uses_last_timestamp():
    t = Trace.from_events([(0.0, 1), (0.5, -1)])
    out = inject(t, TriggerPlan(np.array([2]), np.array([3])))
    assert list(out.timestamps) == [0.0, 0.5, 0.5, 0.5, 0.5]
    assert list(out.directions[2:]) == [-1, -1, -1]


def test_inject_clamps_out_of_range_indices():
    t = Trace.from_events([(0.0, 1), (0.5, -1)])
    out = inject(t, TriggerPlan(np.array([10]), np.array([2])))
    assert len(out) == 4
    assert out.timestamps[-1] == 0.5


def test_injection_invariants_random_sweep():
    rng = np.random.default_rng(42)
    for _ in range(300):
        n = int(rng.integers(1, 200))
        t = make_trace(rng, n)
        plan = random_plan(rng, n)
        out = inject(t, plan)
        # length accounting
        assert len(out) == n + plan.total
        # zero time overhead: original timestamps unchanged, in order
        kept = strip_injected(t, out)
        assert np.array_equal(kept.timestamps, t.timestamps)
        assert np.array_equal(kept.directions, t.directions)
        # inserted events are incoming and reuse existing timestamps
        inserted = len(out) - n
        if inserted:
            assert out.directions.sum() == t.directions.sum() - inserted
            assert set(np.unique(out.timestamps)) <= set(np.unique(t.timestamps))
        assert out.timestamps[-1] == t.timestamps[-1]


def test_plan_serialization_round_trip(tmp_path):
    plan = TriggerPlan(np.array([3, 17, 99]), np.array([5, 0, 12]))
    text = format_plan(plan)
    assert text == "3:5 17:0 99:12"
    back = parse_plan(text)
    assert np.array_equal(back.locations, plan.locations)
    assert np.array_equal(back.bursts, plan.bursts)
    path = str(tmp_path / "plan.txt")
    save_plan(plan, path)
    loaded = load_plan(path)
    assert np.array_equal(loaded.locations, plan.locations)
    assert np.array_equal(loaded.bursts, plan.bursts)
    assert parse_plan("").total == 0
