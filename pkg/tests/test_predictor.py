import numpy as np
import pytest

from wfbackdoor.distances import DistanceConfig, fast_lev
from wfbackdoor.injection import TriggerPlan, inject
from wfbackdoor.predictor import (
    PARAM_NAMES,
    DynTrainConfig,
    PredictorModel,
    constraint_and_grads,
    constraint_loss,
    infer_plan,
    load_predictor,
    log_prob_and_grads,
    predict_burst,
    save_predictor,
    sequence_loss,
    train_dynamic,
)
from wfbackdoor.synthetic import SynthConfig, make_synthetic_dataset
from wfbackdoor.traces import Trace, direction_sequence


def random_prefix(rng, max_len=25):
    return rng.choice([-1.0, 1.0], size=int(rng.integers(3, max_len)))


def finite_diff(fn, model, index, eps):
    vec = model.param_vector()
    up, down = vec.copy(), vec.copy()
    up[index] += eps
    down[index] -= eps
    model.set_param_vector(up)
    f_up = fn()
    model.set_param_vector(down)
    f_down = fn()
    model.set_param_vector(vec)
    return (f_up - f_down) / (2 * eps)


def test_zero_init_forward_is_analytic():
    model = PredictorModel.zero_init(hidden=16, delta_max=100)
    # all-zero parameters keep the hidden state at zero, so the mean is
    # softplus(0) and the mode rounds to 1
    expected = int(np.rint(np.clip(np.logaddexp(0.0, 0.0), 0, 100)))
    assert predict_burst(model, [1.0, -1.0, 1.0]) == expected == 1


def test_predict_burst_inference_deterministic():
    model = PredictorModel.random_init(hidden=12, delta_max=50, rng=np.random.default_rng(3))
    prefix = np.array([1.0, -1.0, -1.0, 1.0])
    assert predict_burst(model, prefix) == predict_burst(model, prefix)


def test_predict_burst_empty_prefix_rejected():
    model = PredictorModel.zero_init(hidden=4, delta_max=10)
    with pytest.raises(ValueError):
        predict_burst(model, [])


def test_sampled_bursts_respect_bounds():
    model = PredictorModel.random_init(hidden=8, delta_max=25, rng=np.random.default_rng(4))
    rng = np.random.default_rng(5)
    for _ in range(1000):
        burst = predict_burst(model, random_prefix(rng), rng=rng)
        assert 0 <= burst <= 25


def test_sequence_loss_values():
    rng = np.random.default_rng(6)
    ts = np.sort(rng.random(60))
    t = Trace(ts, rng.choice([-1, 1], size=60).astype(np.int8))
    empty = TriggerPlan(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    assert sequence_loss(t, inject(t, empty)) == 0.0
    one_burst = TriggerPlan(np.array([10]), np.array([5]))
    assert sequence_loss(t, inject(t, one_burst)) == -5.0
    # loss is non-increasing in the total inserted
    losses = [
        sequence_loss(t, inject(t, TriggerPlan(np.array([10]), np.array([k]))))
        for k in range(0, 50, 5)
    ]
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_constraint_loss_direct():
    assert constraint_loss([3, 4], 7) == 0.0
    assert constraint_loss([10, 7], 7) == 100.0
    assert constraint_loss([], 7) == 49.0


def test_log_prob_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    worst = 0.0
    for point in range(25):
        model = PredictorModel.random_init(
            hidden=6, delta_max=40, scale=0.3, rng=np.random.default_rng(100 + point)
        )
        model.b = rng.normal(0, 0.3, size=model.b.shape)
        model.head_b = rng.normal(0, 0.3, size=2)
        prefix = random_prefix(rng)
        value = float(rng.normal(4.0, 3.0))
        _, grads = log_prob_and_grads(model, prefix, value)
        flat = np.concatenate([grads[n].ravel() for n in PARAM_NAMES])
        for _ in range(4):
            i = int(rng.integers(len(flat)))
            fd = finite_diff(lambda: log_prob_and_grads(model, prefix, value)[0], model, i, 1e-5)
            rel = abs(fd - flat[i]) / max(abs(fd), abs(flat[i]), 1e-8)
            worst = max(worst, rel)
    assert worst <= 1e-4


def test_constraint_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    worst = 0.0
    for point in range(15):
        model = PredictorModel.random_init(
            hidden=5, delta_max=40, scale=0.3, rng=np.random.default_rng(200 + point)
        )
        prefixes = [random_prefix(rng) for _ in range(3)]
        _, grads = constraint_and_grads(model, prefixes, 30)
        flat = np.concatenate([grads[n].ravel() for n in PARAM_NAMES])
        for _ in range(4):
            i = int(rng.integers(len(flat)))
            fd = finite_diff(
                lambda: constraint_and_grads(model, prefixes, 30)[0], model, i, 1e-4
            )
            rel = abs(fd - flat[i]) / max(abs(fd), abs(flat[i]), 1e-8)
            worst = max(worst, rel)
    assert worst <= 1e-4


def small_corpus(seed=42, per_class=30):
    return make_synthetic_dataset(
        SynthConfig(
            classes=3,
            per_class=per_class,
            seed=seed,
            mean_events=180,
            duration=8.0,
            front_frac=0.4,
            front_secs=1.6,
        )
    )


def test_zero_learning_rate_is_identity():
    corpus = small_corpus(per_class=4)
    cfg = DynTrainConfig(lam=10.0, delta_max=20, m=3, learning_rate=0.0, batch_size=4, rng_seed=1, hidden=8)
    model = PredictorModel.random_init(hidden=8, delta_max=20, rng=np.random.default_rng(2))
    before = model.param_vector().copy()
    trained, _ = train_dynamic(corpus, cfg, model=model)
    assert np.array_equal(trained.param_vector(), before)


def test_training_steers_budget_and_reward_trend():
    corpus = small_corpus()
    cfg = DynTrainConfig(
        lam=1e3, delta_max=60, m=5, learning_rate=1e-5, batch_size=8, epochs=1,
        rng_seed=3, clip_norm=1e7, hidden=16,
    )
    model, log = train_dynamic(corpus, cfg)
    assert model.all_finite()
    totals = [
        infer_plan(model, e.trace, 5, (1, len(e.trace) + 1), np.random.default_rng([9, i])).total
        for i, e in enumerate(corpus.entries)
    ]
    mean_total = float(np.mean(totals))
    assert 0.9 * 60 <= mean_total <= 1.1 * 60
    assert np.mean(log.mean_reward[-5:]) >= np.mean(log.mean_reward[:5])
    # lam=0 leaves the budget unenforced near its initial value
    cfg0 = DynTrainConfig(
        lam=0.0, delta_max=60, m=5, learning_rate=1e-5, batch_size=8, epochs=1,
        rng_seed=3, clip_norm=1e7, hidden=16,
    )
    model0, _ = train_dynamic(corpus, cfg0)
    totals0 = [
        infer_plan(model0, e.trace, 5, (1, len(e.trace) + 1), np.random.default_rng([9, i])).total
        for i, e in enumerate(corpus.entries)
    ]
    assert abs(np.mean(totals0) - 60) > abs(mean_total - 60)


def test_trained_plans_match_random_splits_of_same_total():
    # with unit costs the divergence equals the inserted total, so plans with
    # the same indices and a random split of the same total tie exactly
    corpus = small_corpus(per_class=10)
    cfg = DynTrainConfig(
        lam=1e3, delta_max=40, m=4, learning_rate=1e-5, batch_size=8, epochs=1,
        rng_seed=5, clip_norm=1e7, hidden=8,
    )
    model, _ = train_dynamic(corpus, cfg)
    rng = np.random.default_rng(11)
    trained_scores, random_scores = [], []
    for i, entry in enumerate(corpus.entries[:20]):
        dirs = direction_sequence(entry.trace)
        plan = infer_plan(model, entry.trace, 4, (1, len(entry.trace) + 1), np.random.default_rng([3, i]))
        trained_scores.append(fast_lev(dirs, direction_sequence(inject(entry.trace, plan))))
        split = rng.multinomial(plan.total, np.ones(len(plan)) / len(plan))
        alt = TriggerPlan(plan.locations, split.astype(np.int64))
        random_scores.append(fast_lev(dirs, direction_sequence(inject(entry.trace, alt))))
    assert np.mean(trained_scores) >= np.mean(random_scores) - 1e-9


def test_infer_plan_contract():
    model = PredictorModel.random_init(hidden=8, delta_max=30, rng=np.random.default_rng(1))
    dirs = np.array([1.0, -1.0] * 200)
    empty = infer_plan(model, dirs, 0, (10, 100), np.random.default_rng(0))
    assert len(empty) == 0
    p1 = infer_plan(model, dirs, 5, (10, 100), np.random.default_rng(4))
    p2 = infer_plan(model, dirs, 5, (10, 100), np.random.default_rng(4))
    assert np.array_equal(p1.locations, p2.locations)
    assert np.array_equal(p1.bursts, p2.bursts)
    rng = np.random.default_rng(5)
    for _ in range(200):
        plan = infer_plan(model, dirs, 6, (10, 60), rng)
        assert np.all(np.diff(plan.locations) > 0)
        assert plan.locations.min() >= 10
        assert plan.locations.max() < 60
    # region smaller than m uses every index in the region
    tight = infer_plan(model, dirs, 10, (5, 9), np.random.default_rng(6))
    assert len(tight) == 4


def test_infer_plan_accepts_prefix_provider():
    model = PredictorModel.random_init(hidden=8, delta_max=30, rng=np.random.default_rng(1))
    dirs = np.array([1.0, -1.0] * 100)
    calls = []

    def provider(k):
        calls.append(k)
        return dirs[:k]

    plan_a = infer_plan(model, provider, 3, (5, 50), np.random.default_rng(7))
    plan_b = infer_plan(model, dirs, 3, (5, 50), np.random.default_rng(7))
    assert np.array_equal(plan_a.bursts, plan_b.bursts)
    assert calls == list(plan_a.locations)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = PredictorModel.random_init(hidden=10, delta_max=77, sigma_floor=1.5, rng=np.random.default_rng(12))
    path = str(tmp_path / "pred.model")
    save_predictor(model, path, cfg_text="hidden=10\n")
    loaded = load_predictor(path)
    assert loaded.hidden == 10
    assert loaded.delta_max == 77
    assert loaded.sigma_floor == 1.5
    assert np.array_equal(loaded.param_vector(), model.param_vector())
    with open(path + ".cfg.txt") as fh:
        assert fh.read() == "hidden=10\n"
    with pytest.raises(ValueError):
        with open(str(tmp_path / "junk"), "wb") as fh:
            fh.write(b"not a checkpoint")
        load_predictor(str(tmp_path / "junk"))
