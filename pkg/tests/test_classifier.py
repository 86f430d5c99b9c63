import numpy as np
import pytest

from wfbackdoor.classifier import (
    ClassifierConfig,
    TamConfig,
    ce_loss_and_grad,
    export_features_csv,
    extract_tam,
    feature_matrix,
    feature_shift,
    gradient_similarity,
    load_classifier,
    predict,
    predict_proba,
    save_classifier,
    tam_vector,
    train_classifier,
)
from wfbackdoor.injection import TriggerPlan, inject
from wfbackdoor.synthetic import SynthConfig, make_synthetic_dataset
from wfbackdoor.traces import Trace


def test_extract_tam_binning():
    t = Trace.from_events([(0.0, 1), (0.0, -1)])
    tam = extract_tam(t, TamConfig(slots=2, t_max=1.0))
    assert tam[0].tolist() == [1, 0]
    assert tam[1].tolist() == [1, 0]


def test_extract_tam_outgoing_only():
    t = Trace.from_events([(0.1, 1), (0.2, 1), (0.9, 1)])
    tam = extract_tam(t, TamConfig(slots=4, t_max=1.0))
    assert np.all(tam[1] == 0)
    assert tam.sum() == 3


def test_extract_tam_clamps_beyond_tmax():
    t = Trace.from_events([(5.0, -1), (99.0, -1)])
    tam = extract_tam(t, TamConfig(slots=4, t_max=8.0))
    assert tam[1, 2] == 1  # 5.0s -> slot 2
    assert tam[1, 3] == 1  # beyond t_max clamps into the last slot


def test_injection_raises_incoming_row_by_total():
    rng = np.random.default_rng(0)
    ts = np.sort(rng.random(80) * 10)
    t = Trace(ts, rng.choice([-1, 1], size=80).astype(np.int8))
    cfg = TamConfig(slots=16, t_max=12.0)
    before = extract_tam(t, cfg)
    injected = inject(t, TriggerPlan(np.array([5, 40]), np.array([11, 9])))
    after = extract_tam(injected, cfg)
    assert after[1].sum() - before[1].sum() == 20
    assert np.array_equal(after[0], before[0])


def separable_set(rng, n=60):
    x0 = rng.normal([-2.0, 0.0], 0.3, size=(n, 2))
    x1 = rng.normal([2.0, 0.0], 0.3, size=(n, 2))
    feats = np.vstack([x0, x1])
    labels = np.array([0] * n + [1] * n)
    return feats, labels


def test_train_on_separable_classes():
    rng = np.random.default_rng(1)
    feats, labels = separable_set(rng)
    model = train_classifier(feats, labels, ClassifierConfig(learning_rate=0.5, epochs=500, l2=1e-4))
    preds, _ = predict(model, feats)
    assert np.mean(preds == labels) == 1.0


def test_zero_learning_rate_keeps_zero_weights():
    rng = np.random.default_rng(2)
    feats, labels = separable_set(rng, n=20)
    model = train_classifier(feats, labels, ClassifierConfig(learning_rate=0.0, epochs=50, l2=0.0))
    assert np.all(model.weights == 0)
    assert model.final_loss == pytest.approx(np.log(2))


def test_single_class_rejected():
    feats = np.ones((5, 3))
    with pytest.raises(ValueError):
        train_classifier(feats, np.zeros(5, dtype=int), ClassifierConfig())


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        n, d, c = 12, 5, 4
        x = rng.normal(size=(n, d))
        y = rng.integers(0, c, size=n)
        w = rng.normal(scale=0.5, size=(c, d))
        b = rng.normal(scale=0.5, size=c)
        _, gw, gb = ce_loss_and_grad(w, b, x, y, 1e-3)
        flat = np.concatenate([gw.ravel(), gb])
        theta = np.concatenate([w.ravel(), b])
        for _ in range(3):
            i = int(rng.integers(len(theta)))
            eps = 1e-6
            up, down = theta.copy(), theta.copy()
            up[i] += eps
            down[i] -= eps
            lu = ce_loss_and_grad(up[: c * d].reshape(c, d), up[c * d :], x, y, 1e-3)[0]
            ld = ce_loss_and_grad(down[: c * d].reshape(c, d), down[c * d :], x, y, 1e-3)[0]
            fd = (lu - ld) / (2 * eps)
            rel = abs(fd - flat[i]) / max(abs(fd), abs(flat[i]), 1e-10)
            worst = max(worst, rel)
    assert worst <= 1e-5


def test_predict_normalization_and_ties():
    rng = np.random.default_rng(4)
    feats, labels = separable_set(rng, n=10)
    model = train_classifier(feats, labels, ClassifierConfig(learning_rate=0.0, epochs=1))
    label, probs = predict(model, feats[0])
    assert label == 0  # uniform probabilities tie to the lowest class
    assert probs.sum() == pytest.approx(1.0, abs=1e-9)
    _, matrix = predict(model, feats)
    assert np.allclose(matrix.sum(axis=1), 1.0, atol=1e-9)


def test_predict_monotone_in_logit():
    rng = np.random.default_rng(5)
    feats, labels = separable_set(rng, n=10)
    model = train_classifier(feats, labels, ClassifierConfig(epochs=50))
    probs = predict_proba(model, feats[0])
    model.biases[1] += 1.0
    boosted = predict_proba(model, feats[0])
    assert boosted[1] > probs[1]


def test_dimension_mismatch_rejected():
    rng = np.random.default_rng(6)
    feats, labels = separable_set(rng, n=10)
    model = train_classifier(feats, labels, ClassifierConfig(epochs=10))
    with pytest.raises(ValueError):
        predict(model, np.ones(9))


def test_feature_shift_zero_and_monotone():
    rng = np.random.default_rng(7)
    ts = np.sort(rng.random(300) * 10)
    t = Trace(ts, rng.choice([-1, 1], size=300).astype(np.int8))
    cfg = TamConfig(slots=32, t_max=12.0)
    assert feature_shift(cfg, t, t) == 0.0
    shifts = []
    for total in (0, 10, 100, 1000):
        plan = TriggerPlan(np.array([50]), np.array([total]))
        shifts.append(feature_shift(cfg, t, inject(t, plan)))
    assert shifts[0] == 0.0
    assert all(b >= a for a, b in zip(shifts, shifts[1:]))
    one = feature_shift(cfg, t, inject(t, TriggerPlan(np.array([50]), np.array([1]))))
    assert one <= 1.0


def test_gradient_similarity_diagnostic():
    ds = make_synthetic_dataset(
        SynthConfig(classes=3, per_class=20, seed=4, mean_events=400, duration=8.0, front_secs=1.5)
    )
    cfg = TamConfig(slots=32, t_max=12.0)
    feats, labels = feature_matrix(ds, cfg)
    model = train_classifier(feats, labels, ClassifierConfig(epochs=60))

    t0 = ds.entries[0].trace
    sim, degenerate = gradient_similarity(model, t0, t0, ds.entries[0].label, cfg)
    assert sim == pytest.approx(1.0, abs=1e-12)
    assert not degenerate

    # a tiny trigger barely bends the gradient; a huge one bends it a lot
    pairs = []
    for entry in ds.entries[:50]:
        sims = {}
        for total in (1, 5000):
            plan = TriggerPlan(np.array([100]), np.array([total]))
            sims[total], _ = gradient_similarity(model, entry.trace, inject(entry.trace, plan), entry.label, cfg)
        assert -1.0 <= sims[5000] <= 1.0
        pairs.append((sims[1], sims[5000]))
    small, big = np.array(pairs).T
    assert small.mean() > big.mean()
    assert np.mean(small > big) >= 0.9


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    feats, labels = separable_set(rng, n=15)
    model = train_classifier(feats, labels, ClassifierConfig(epochs=40))
    path = str(tmp_path / "cls.model")
    save_classifier(model, path, TamConfig(slots=1, t_max=5.0))
    loaded, tam = load_classifier(path)
    assert tam.slots == 1 and tam.t_max == 5.0
    assert np.array_equal(loaded.weights, model.weights)
    assert np.array_equal(loaded.feat_mean, model.feat_mean)
    assert loaded.final_loss == model.final_loss


def test_feature_csv_export(tmp_path):
    ds = make_synthetic_dataset(
        SynthConfig(classes=2, per_class=3, seed=0, mean_events=60, duration=4.0, front_secs=1.0)
    )
    path = str(tmp_path / "features.csv")
    export_features_csv(ds, TamConfig(slots=4, t_max=5.0), path)
    with open(path) as fh:
        rows = [line.strip().split(",") for line in fh]
    assert len(rows) == 6
    feats, labels = feature_matrix(ds, TamConfig(slots=4, t_max=5.0))
    for row, label, feat in zip(rows, labels, feats):
        assert int(row[0]) == label
        assert len(row) == 1 + 8
        assert float(row[1]) == feat[0]
