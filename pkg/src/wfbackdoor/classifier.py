"""Reference traffic classifier: time-slot count features + linear softmax.

Features are a per-direction packet-count matrix over uniform time slots
(row 0 outgoing, row 1 incoming), flattened to a vector. The classifier is
multinomial logistic regression trained from scratch with full-batch
gradient descent, which keeps every gradient analytically checkable while
still exhibiting the trigger-association effect under poisoning. Inputs are
standardized per dimension with train-set statistics stored on the model.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .traces import LabeledDataset, Trace

_MAGIC = b"WFBDCLS1"


@dataclass(frozen=True)
class TamConfig:
    slots: int = 64
    t_max: float = 80.0

    def __post_init__(self):
        if self.slots < 1:
            raise ValueError("slots must be >= 1")
        if self.t_max <= 0:
            raise ValueError("t_max must be > 0")


def extract_tam(trace: Trace, cfg: TamConfig) -> np.ndarray:
    """Count packets per direction in uniform time slots; shape (2, slots).

    An event at time t lands in slot floor(t * slots / t_max); events at or
    beyond t_max clamp into the last slot.
    """
    idx = np.floor(trace.timestamps * (cfg.slots / cfg.t_max)).astype(np.int64)
    np.clip(idx, 0, cfg.slots - 1, out=idx)
    out = np.zeros((2, cfg.slots), dtype=np.float64)
    outgoing = trace.directions > 0
    out[0] = np.bincount(idx[outgoing], minlength=cfg.slots)
    out[1] = np.bincount(idx[~outgoing], minlength=cfg.slots)
    return out


def tam_vector(trace: Trace, cfg: TamConfig) -> np.ndarray:
    return extract_tam(trace, cfg).ravel()


def feature_matrix(dataset: LabeledDataset, cfg: TamConfig) -> tuple[np.ndarray, np.ndarray]:
    """Raw feature matrix (N, 2*slots) and label vector for a dataset."""
    feats = np.stack([tam_vector(e.trace, cfg) for e in dataset.entries])
    return feats, dataset.labels()


def export_features_csv(dataset: LabeledDataset, cfg: TamConfig, path: str) -> None:
    """One row per trace, label in column 0 — for external visualization."""
    feats, labels = feature_matrix(dataset, cfg)
    with open(path, "w", encoding="ascii") as fh:
        for label, row in zip(labels, feats):
            fh.write(str(int(label)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


@dataclass(frozen=True)
class ClassifierConfig:
    learning_rate: float = 1.0
    epochs: int = 500
    l2: float = 1e-4

    def __post_init__(self):
        if self.learning_rate < 0 or self.l2 < 0 or self.epochs < 0:
            raise ValueError("hyperparameters must be non-negative")


@dataclass
class SoftmaxModel:
    weights: np.ndarray  # (C, D)
    biases: np.ndarray  # (C,)
    feat_mean: np.ndarray  # (D,)
    feat_std: np.ndarray  # (D,)
    final_loss: float = 0.0

    @property
    def class_count(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.feat_mean) / self.feat_std


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def ce_loss_and_grad(
    weights: np.ndarray, biases: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float
):
    """Mean cross-entropy + L2 penalty on weights, with analytic gradients.

    Kept as a pure function of (weights, biases) so finite-difference tests
    can probe it directly.
    """
    n = x.shape[0]
    probs = _softmax(x @ weights.T + biases)
    nll = -np.log(np.maximum(probs[np.arange(n), y], 1e-300))
    loss = float(nll.mean() + l2 * np.sum(weights * weights))
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    grad_w = delta.T @ x / n + 2.0 * l2 * weights
    grad_b = delta.mean(axis=0)
    return loss, grad_w, grad_b


def train_classifier(
    features: np.ndarray, labels: np.ndarray, cfg: ClassifierConfig, class_count: int | None = None
) -> SoftmaxModel:
    """Full-batch gradient descent from zero-initialized weights.

    Deterministic: no randomness anywhere in the optimization.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or len(features) != len(labels):
        raise ValueError("features must be (N, D) with one label per row")
    classes = int(labels.max()) + 1 if class_count is None else class_count
    if len(np.unique(labels)) < 2:
        raise ValueError("training needs at least 2 classes present")

    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std < 1e-8, 1.0, std)
    x = (features - mean) / std

    w = np.zeros((classes, x.shape[1]))
    b = np.zeros(classes)
    loss = float(np.log(classes))
    for _ in range(cfg.epochs):
        loss, grad_w, grad_b = ce_loss_and_grad(w, b, x, labels, cfg.l2)
        w -= cfg.learning_rate * grad_w
        b -= cfg.learning_rate * grad_b
    return SoftmaxModel(weights=w, biases=b, feat_mean=mean, feat_std=std, final_loss=loss)


def predict_proba(model: SoftmaxModel, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != model.feature_dim:
        raise ValueError(
            f"feature dim {features.shape[-1]} does not match model dim {model.feature_dim}"
        )
    x = model.standardize(features)
    return _softmax(x @ model.weights.T + model.biases)


def predict(model: SoftmaxModel, features: np.ndarray):
    """Argmax prediction; ties resolve to the lowest class id.

    A single feature vector yields (label, probability vector); a matrix
    yields (labels, probability matrix).
    """
    probs = predict_proba(model, features)
    if probs.ndim == 1:
        return int(np.argmax(probs)), probs
    return np.argmax(probs, axis=1), probs


def feature_shift(cfg: TamConfig, x: Trace, x_hat: Trace) -> float:
    """Euclidean norm of the raw feature change caused by a perturbation.

    Instantiates the small-perturbation diagnostic: zero for identical
    traces and growing with the injected volume.
    """
    return float(np.linalg.norm(tam_vector(x_hat, cfg) - tam_vector(x, cfg)))


def gradient_similarity(
    model: SoftmaxModel, x: Trace, x_hat: Trace, label: int, cfg: TamConfig
) -> tuple[float, bool]:
    """Cosine similarity of per-sample loss gradients for (x_hat, y) vs (x, y).

    Near 1 means the poisoned sample contributes almost the same update as
    the clean one (a weak trigger); returns (1.0, True) in the degenerate
    zero-gradient case.
    """
    grads = []
    for trace in (x, x_hat):
        feats = model.standardize(tam_vector(trace, cfg))
        probs = _softmax(model.weights @ feats + model.biases)
        delta = probs.copy()
        delta[label] -= 1.0
        grads.append(np.concatenate([np.outer(delta, feats).ravel(), delta]))
    n0, n1 = np.linalg.norm(grads[0]), np.linalg.norm(grads[1])
    if n0 == 0.0 or n1 == 0.0:
        return 1.0, True
    sim = float(np.dot(grads[0], grads[1]) / (n0 * n1))
    return float(np.clip(sim, -1.0, 1.0)), False


def save_classifier(model: SoftmaxModel, path: str, tam: TamConfig | None = None) -> None:
    """Flat binary checkpoint: magic, dims, TAM shape, weights, biases, stats."""
    tam = tam or TamConfig()
    c, d = model.weights.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIIdd", 1, c, d, tam.slots, tam.t_max, model.final_loss))
        for arr in (model.weights, model.biases, model.feat_mean, model.feat_std):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_classifier(path: str) -> tuple[SoftmaxModel, TamConfig]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path!r} is not a classifier checkpoint")
        version, c, d, slots, t_max, final_loss = struct.unpack(
            "<IIIIdd", fh.read(struct.calcsize("<IIIIdd"))
        )
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")

        def read_arr(shape):
            size = int(np.prod(shape))
            return np.frombuffer(fh.read(size * 8), dtype="<f8").reshape(shape).copy()

        model = SoftmaxModel(
            weights=read_arr((c, d)),
            biases=read_arr((c,)),
            feat_mean=read_arr((d,)),
            feat_std=read_arr((d,)),
            final_loss=final_loss,
        )
    return model, TamConfig(slots=slots, t_max=t_max)
