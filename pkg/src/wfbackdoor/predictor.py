"""Recurrent burst-length predictor for dynamic triggers.

A single LSTM-style gated cell reads the direction stream of a trace prefix;
an output head maps the final hidden state to the (mean, spread) of a
burst-length distribution (softplus mean, spread with a fixed floor).
Sampling draws a Gaussian value, clamps it to [0, delta_max] and rounds;
inference takes the distribution mode instead.

The edit-distance objective is not differentiable in the burst lengths, so
training uses a likelihood-ratio estimator: per trace we sample insertion
locations, sample a burst at each prefix, build the injected trace, and
score the reward

    R = D_F(x, x_hat) - lam * (sum(bursts) - delta_max)**2

The parameter update combines the analytic gradient of the log-probability
of the sampled bursts scaled by (R - baseline), where the baseline is an
exponential moving average of rewards, with the exact gradient of the
constraint term routed through the distribution mean. Gradients are clipped
by global norm before the step.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .distances import DistanceConfig, fast_lev
from .injection import TriggerPlan, inject
from .traces import LabeledDataset, Trace, direction_sequence

_LOGGER = logging.getLogger(__name__)

_MAGIC = b"WFBDPRD1"
_LOG_2PI = float(np.log(2.0 * np.pi))

PARAM_NAMES = ("wx", "wh", "b", "head_w", "head_b")


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def _softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class PredictorModel:
    """Gated recurrent burst predictor with its sampling head.

    Parameter layout: gate order is (input, forget, output, candidate), so
    ``wx`` and ``b`` have 4*hidden entries and ``wh`` is (4*hidden, hidden).
    The head maps the final hidden state to [mean_raw, spread_raw].
    """

    hidden: int
    delta_max: int
    sigma_floor: float = 2.0
    prefix_cap: int = 2000
    wx: np.ndarray = field(repr=False, default=None)
    wh: np.ndarray = field(repr=False, default=None)
    b: np.ndarray = field(repr=False, default=None)
    head_w: np.ndarray = field(repr=False, default=None)
    head_b: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        h = self.hidden
        if h < 1:
            raise ValueError("hidden width must be >= 1")
        if self.delta_max < 0:
            raise ValueError("delta_max must be >= 0")
        if self.wx is None:
            self.wx = np.zeros(4 * h)
        if self.wh is None:
            self.wh = np.zeros((4 * h, h))
        if self.head_w is None:
            self.head_w = np.zeros((2, h))
        if self.b is None:
            self.b = np.zeros(4 * h)
        if self.head_b is None:
            self.head_b = np.zeros(2)

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def param_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).ravel() for n in PARAM_NAMES])

    def set_param_vector(self, vec: np.ndarray) -> None:
        offset = 0
        for name in PARAM_NAMES:
            arr = getattr(self, name)
            size = arr.size
            arr[...] = vec[offset : offset + size].reshape(arr.shape)
            offset += size

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, n))) for n in PARAM_NAMES)

    @classmethod
    def zero_init(
        cls, hidden: int = 64, delta_max: int = 1000, sigma_floor: float = 2.0, prefix_cap: int = 2000
    ) -> "PredictorModel":
        return cls(hidden=hidden, delta_max=delta_max, sigma_floor=sigma_floor, prefix_cap=prefix_cap)

    @classmethod
    def random_init(
        cls,
        hidden: int = 64,
        delta_max: int = 1000,
        sigma_floor: float = 2.0,
        prefix_cap: int = 2000,
        scale: float = 0.1,
        rng: np.random.Generator | None = None,
    ) -> "PredictorModel":
        rng = rng or np.random.default_rng(0)
        model = cls.zero_init(hidden, delta_max, sigma_floor, prefix_cap)
        model.wx = rng.normal(0.0, scale, size=4 * hidden)
        model.wh = rng.normal(0.0, scale / np.sqrt(hidden), size=(4 * hidden, hidden))
        # a near-neutral head keeps early burst means tight so the budget
        # feedback stays smooth; the recurrent weights carry the variation
        model.head_w = rng.normal(0.0, 0.1 * scale, size=(2, hidden))
        return model


@dataclass(frozen=True)
class DynTrainConfig:
    lam: float
    delta_max: int
    m: int = 7
    learning_rate: float = 4e-6
    batch_size: int = 1024
    epochs: int = 1
    rng_seed: int = 0
    baseline_decay: float = 0.9
    clip_norm: float = 1000.0
    advantage_clip: float = 1e4  # caps reward-minus-baseline in the score term
    hidden: int = 64
    sigma_floor: float = 2.0
    prefix_cap: int = 2000
    region: tuple[int, int] | None = None  # index range for sampled locations

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.delta_max < 0:
            raise ValueError("delta_max must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.m < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("m, batch_size and epochs must be >= 1")


def _as_input(seq) -> np.ndarray:
    return np.asarray(seq, dtype=np.float64)


def _forward_states(model: PredictorModel, xs: np.ndarray):
    """Run the cell over an input sequence, returning per-step state caches."""
    h_dim = model.hidden
    T = len(xs)
    gi = np.empty((T, h_dim))
    gf = np.empty((T, h_dim))
    go = np.empty((T, h_dim))
    gc = np.empty((T, h_dim))
    cs = np.empty((T, h_dim))
    tc = np.empty((T, h_dim))
    hs = np.empty((T + 1, h_dim))
    hs[0] = 0.0
    c = np.zeros(h_dim)
    wx, wh, b = model.wx, model.wh, model.b
    for t in range(T):
        z = wx * xs[t] + wh @ hs[t] + b
        i = _sigmoid(z[:h_dim])
        f = _sigmoid(z[h_dim : 2 * h_dim])
        o = _sigmoid(z[2 * h_dim : 3 * h_dim])
        g = np.tanh(z[3 * h_dim :])
        c = f * c + i * g
        th = np.tanh(c)
        gi[t], gf[t], go[t], gc[t], cs[t], tc[t] = i, f, o, g, c, th
        hs[t + 1] = o * th
    return {"x": xs, "i": gi, "f": gf, "o": go, "g": gc, "c": cs, "tanh_c": tc, "h": hs}


def _head(model: PredictorModel, h: np.ndarray):
    raw = model.head_w @ h + model.head_b
    mu = _softplus(raw[0])
    sigma = model.sigma_floor + _softplus(raw[1])
    return mu, sigma, raw


def _zero_grads(model: PredictorModel) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(getattr(model, name)) for name in PARAM_NAMES}


def _backward(model: PredictorModel, cache, dh_by_pos: dict[int, np.ndarray], grads) -> None:
    """Backpropagate through the cell, injecting dL/dh at given state indices.

    ``dh_by_pos`` maps state index p (hidden state after consuming p inputs,
    p >= 1) to the gradient arriving at that hidden state. Per-step work is
    kept to small vector ops; the weight gradients are accumulated with two
    matrix products at the end.
    """
    h_dim = model.hidden
    xs, hs = cache["x"], cache["h"]
    T = max(dh_by_pos)
    dh = np.zeros(h_dim)
    dc = np.zeros(h_dim)
    dz_rows = np.empty((T, 4 * h_dim))
    wh_t = model.wh.T
    zeros = np.zeros(h_dim)
    for t in range(T - 1, -1, -1):
        extra = dh_by_pos.get(t + 1)
        if extra is not None:
            dh = dh + extra
        i, f, o, g = cache["i"][t], cache["f"][t], cache["o"][t], cache["g"][t]
        th = cache["tanh_c"][t]
        c_prev = cache["c"][t - 1] if t > 0 else zeros
        do = dh * th
        dc = dc + dh * o * (1.0 - th * th)
        dz = dz_rows[t]
        dz[:h_dim] = dc * g * i * (1.0 - i)
        dz[h_dim : 2 * h_dim] = dc * c_prev * f * (1.0 - f)
        dz[2 * h_dim : 3 * h_dim] = do * o * (1.0 - o)
        dz[3 * h_dim :] = dc * i * (1.0 - g * g)
        dc = dc * f
        dh = wh_t @ dz
    grads["wx"] += dz_rows.T @ xs[:T]
    grads["wh"] += dz_rows.T @ hs[:T]
    grads["b"] += dz_rows.sum(axis=0)


def _prefix(source, k: int) -> np.ndarray:
    """Direction prefix x[:k] from a trace, an array, or a provider callable."""
    if callable(source):
        return _as_input(source(k))
    if isinstance(source, Trace):
        return _as_input(direction_sequence(source)[:k])
    return _as_input(np.asarray(source)[:k])


def burst_from_gaussian(value: float, delta_max: int) -> int:
    return int(np.rint(np.clip(value, 0.0, float(delta_max))))


def predict_burst(model: PredictorModel, prefix, rng: np.random.Generator | None = None) -> int:
    """Burst length for an insertion point given the preceding directions.

    With ``rng`` the burst is sampled from the predicted distribution
    (training mode); without it the distribution mode is used, which makes
    repeated calls identical. Prefixes longer than the model's cap are
    tail-truncated.
    """
    xs = _as_input(prefix)
    if len(xs) == 0:
        raise ValueError("prefix must be non-empty")
    xs = xs[-model.prefix_cap :]
    cache = _forward_states(model, xs)
    mu, sigma, _ = _head(model, cache["h"][len(xs)])
    value = rng.normal(mu, sigma) if rng is not None else mu
    return burst_from_gaussian(value, model.delta_max)


def sequence_loss(x: Trace, x_hat: Trace, dist: DistanceConfig | None = None) -> float:
    """Divergence reward as a loss: the negated banded edit distance."""
    return -fast_lev(direction_sequence(x), direction_sequence(x_hat), dist or DistanceConfig())


def constraint_loss(bursts, delta_max: int) -> float:
    """Squared violation of the insertion budget."""
    total = float(np.sum(np.asarray(bursts, dtype=np.float64)))
    return (total - float(delta_max)) ** 2


def log_prob_and_grads(model: PredictorModel, prefix, value: float):
    """Log-density of a sampled (pre-round) burst value and its parameter
    gradients; the analytic side of the likelihood-ratio estimator."""
    xs = _as_input(prefix)
    if len(xs) == 0:
        raise ValueError("prefix must be non-empty")
    xs = xs[-model.prefix_cap :]
    cache = _forward_states(model, xs)
    p = len(xs)
    h_final = cache["h"][p]
    mu, sigma, raw = _head(model, h_final)
    z = (value - mu) / sigma
    logp = -0.5 * z * z - np.log(sigma) - 0.5 * _LOG_2PI

    dmu = z / sigma
    dsigma = (z * z - 1.0) / sigma
    draw = np.array([dmu * _sigmoid(raw[:1])[0], dsigma * _sigmoid(raw[1:])[0]])
    grads = _zero_grads(model)
    grads["head_w"] += np.outer(draw, h_final)
    grads["head_b"] += draw
    _backward(model, cache, {p: model.head_w.T @ draw}, grads)
    return float(logp), grads


def mean_and_grads(model: PredictorModel, prefix):
    """Distribution mean for a prefix and its parameter gradients."""
    xs = _as_input(prefix)
    if len(xs) == 0:
        raise ValueError("prefix must be non-empty")
    xs = xs[-model.prefix_cap :]
    cache = _forward_states(model, xs)
    p = len(xs)
    h_final = cache["h"][p]
    mu, _, raw = _head(model, h_final)
    dmu_draw = np.array([_sigmoid(raw[:1])[0], 0.0])
    grads = _zero_grads(model)
    grads["head_w"] += np.outer(dmu_draw, h_final)
    grads["head_b"] += dmu_draw
    _backward(model, cache, {p: model.head_w.T @ dmu_draw}, grads)
    return float(mu), grads


def constraint_and_grads(model: PredictorModel, prefixes, delta_max: int):
    """(sum of distribution means - delta_max)^2 and its exact gradients."""
    mus = []
    grad_sum = _zero_grads(model)
    for prefix in prefixes:
        mu, grads = mean_and_grads(model, prefix)
        mus.append(mu)
        for name in PARAM_NAMES:
            grad_sum[name] += grads[name]
    gap = float(np.sum(mus)) - float(delta_max)
    for name in PARAM_NAMES:
        grad_sum[name] *= 2.0 * gap
    return gap * gap, grad_sum


def infer_plan(
    model: PredictorModel,
    prefix_source,
    m: int,
    region: tuple[int, int],
    rng: np.random.Generator,
    sample: bool = False,
) -> TriggerPlan:
    """Draw insertion points in ``region`` and predict a burst at each.

    ``prefix_source`` may be a Trace, a direction array, or a callable
    ``k -> directions[:k]`` for streaming deployments where only the prefix
    is known. Regions smaller than ``m`` use every index in the region.
    """
    lo, hi = region
    lo = max(1, int(lo))  # a prediction needs at least one observed event
    hi = int(hi)
    if hi <= lo:
        raise ValueError("empty insertion region")
    if m == 0:
        return TriggerPlan(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    count = min(m, hi - lo)
    locs = np.sort(rng.choice(np.arange(lo, hi), size=count, replace=False)).astype(np.int64)
    burst_rng = rng if sample else None

    if not callable(prefix_source):
        dirs = _as_input(
            direction_sequence(prefix_source) if isinstance(prefix_source, Trace) else prefix_source
        )
        if locs.max() <= min(len(dirs), model.prefix_cap):
            # one forward pass serves every prefix
            cache = _forward_states(model, dirs[: int(locs.max())])
            bursts = []
            for k in locs:
                mu, sigma, _ = _head(model, cache["h"][int(k)])
                value = burst_rng.normal(mu, sigma) if burst_rng is not None else mu
                bursts.append(burst_from_gaussian(value, model.delta_max))
            return TriggerPlan(locs, np.asarray(bursts, dtype=np.int64))

    bursts = np.array(
        [predict_burst(model, _prefix(prefix_source, int(k)), rng=burst_rng) for k in locs],
        dtype=np.int64,
    )
    return TriggerPlan(locs, bursts)


@dataclass
class TrainLog:
    mean_reward: list[float] = field(default_factory=list)
    mean_total_insertion: list[float] = field(default_factory=list)


def _trace_grads_and_reward(
    model: PredictorModel,
    dirs: np.ndarray,
    trace: Trace,
    cfg: DynTrainConfig,
    dist: DistanceConfig,
    rng: np.random.Generator,
    baseline: float | None,
):
    """Sample locations and bursts for one trace; return the ascent gradient
    contribution, the reward, and the total insertion."""
    n = len(dirs)
    lo, hi = cfg.region if cfg.region is not None else (1, n + 1)
    lo = max(1, lo)
    hi = min(hi, n + 1)
    if hi <= lo:
        lo, hi = 1, n + 1
    count = min(cfg.m, hi - lo)
    locs = np.sort(rng.choice(np.arange(lo, hi), size=count, replace=False))
    window = int(min(n, cfg.prefix_cap, locs.max()))

    if locs.max() <= cfg.prefix_cap:
        # one shared forward pass serves every prefix
        cache = _forward_states(model, dirs[:window])
        finals = {int(k): cache["h"][int(k)] for k in locs}
        shared = True
    else:
        shared = False

    mus, sigmas, raws, values, bursts = [], [], [], [], []
    caches = []
    for k in locs:
        if shared:
            h_final = finals[int(k)]
        else:
            sub = _forward_states(model, dirs[max(0, k - cfg.prefix_cap) : k])
            caches.append(sub)
            h_final = sub["h"][len(sub["x"])]
        mu, sigma, raw = _head(model, h_final)
        value = rng.normal(mu, sigma)
        mus.append(mu)
        sigmas.append(sigma)
        raws.append(raw)
        values.append(value)
        bursts.append(burst_from_gaussian(value, cfg.delta_max))

    plan = TriggerPlan(np.asarray(locs, dtype=np.int64), np.asarray(bursts, dtype=np.int64))
    injected = inject(trace, plan)
    divergence = fast_lev(dirs, direction_sequence(injected), dist)
    total = float(plan.total)
    reward = divergence - cfg.lam * (total - cfg.delta_max) ** 2
    # the constraint makes rewards move over orders of magnitude while the
    # EMA baseline lags; an unbounded advantage would blow up the estimator
    advantage = reward - (baseline if baseline is not None else reward)
    advantage = float(np.clip(advantage, -cfg.advantage_clip, cfg.advantage_clip))
    budget_pull = -2.0 * cfg.lam * (total - cfg.delta_max)

    grads = _zero_grads(model)
    dh_by_pos: dict[int, np.ndarray] = {}
    for idx, k in enumerate(locs):
        mu, sigma, raw, value = mus[idx], sigmas[idx], raws[idx], values[idx]
        z = (value - mu) / sigma
        # likelihood-ratio term on both head outputs, exact constraint term
        # through the mean only
        dmu = advantage * (z / sigma) + budget_pull
        dsigma = advantage * (z * z - 1.0) / sigma
        draw = np.array([dmu * _sigmoid(raw[:1])[0], dsigma * _sigmoid(raw[1:])[0]])
        h_final = finals[int(k)] if shared else caches[idx]["h"][len(caches[idx]["x"])]
        grads["head_w"] += np.outer(draw, h_final)
        grads["head_b"] += draw
        dh = model.head_w.T @ draw
        if shared:
            key = int(k)
            dh_by_pos[key] = dh_by_pos.get(key, 0.0) + dh
        else:
            _backward(model, caches[idx], {len(caches[idx]["x"]): dh}, grads)
    if shared and dh_by_pos:
        _backward(model, cache, dh_by_pos, grads)
    return grads, reward, total


def _clip_global(grads: dict[str, np.ndarray], clip_norm: float) -> None:
    sq = sum(float(np.sum(g * g)) for g in grads.values())
    norm = np.sqrt(sq)
    if norm > clip_norm and norm > 0:
        scale = clip_norm / norm
        for g in grads.values():
            g *= scale


def train_dynamic(
    dataset: LabeledDataset,
    cfg: DynTrainConfig,
    dist: DistanceConfig | None = None,
    model: PredictorModel | None = None,
) -> tuple[PredictorModel, TrainLog]:
    """Train the burst predictor on a trace corpus (labels are ignored).

    Batches are processed in dataset order for reproducibility; one
    parameter step per batch using the mean per-trace gradient.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    if cfg.delta_max == 0 and cfg.lam > 0:
        _LOGGER.warning("delta_max=0 with lam>0: training degenerates to all-zero bursts")
    dist = dist or DistanceConfig()
    if model is None:
        model = PredictorModel.random_init(
            hidden=cfg.hidden,
            delta_max=cfg.delta_max,
            sigma_floor=cfg.sigma_floor,
            prefix_cap=cfg.prefix_cap,
            rng=np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, 1])),
        )
    else:
        model.delta_max = cfg.delta_max

    log = TrainLog()
    baseline: float | None = None
    traces = [entry.trace for entry in dataset.entries]
    dir_seqs = [direction_sequence(t) for t in traces]

    step = 0
    for epoch in range(cfg.epochs):
        for start in range(0, len(traces), cfg.batch_size):
            batch = range(start, min(start + cfg.batch_size, len(traces)))
            acc = _zero_grads(model)
            rewards = []
            totals = []
            for i in batch:
                rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, 2, epoch, i]))
                grads, reward, total = _trace_grads_and_reward(
                    model, dir_seqs[i], traces[i], cfg, dist, rng, baseline
                )
                if baseline is None:
                    baseline = reward
                else:
                    baseline = cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * reward
                rewards.append(reward)
                totals.append(total)
                for name in PARAM_NAMES:
                    acc[name] += grads[name]
            inv = 1.0 / len(rewards)
            for name in PARAM_NAMES:
                acc[name] *= inv
            _clip_global(acc, cfg.clip_norm)
            for name in PARAM_NAMES:
                getattr(model, name)[...] += cfg.learning_rate * acc[name]
            if not model.all_finite():
                raise FloatingPointError(f"non-finite parameters after step {step}")
            log.mean_reward.append(float(np.mean(rewards)))
            log.mean_total_insertion.append(float(np.mean(totals)))
            step += 1
    return model, log


def save_predictor(model: PredictorModel, path: str, cfg_text: str | None = None) -> None:
    """Write the flat binary checkpoint (and an optional config sidecar)."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(
            struct.pack(
                "<IIdII",
                1,
                model.hidden,
                model.sigma_floor,
                model.delta_max,
                model.prefix_cap,
            )
        )
        for name in PARAM_NAMES:
            fh.write(np.ascontiguousarray(getattr(model, name), dtype="<f8").tobytes())
    if cfg_text is not None:
        with open(path + ".cfg.txt", "w", encoding="ascii") as fh:
            fh.write(cfg_text)


def load_predictor(path: str) -> PredictorModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path!r} is not a predictor checkpoint")
        version, hidden, sigma_floor, delta_max, prefix_cap = struct.unpack(
            "<IIdII", fh.read(struct.calcsize("<IIdII"))
        )
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")
        model = PredictorModel.zero_init(hidden, delta_max, sigma_floor, prefix_cap)
        for name in PARAM_NAMES:
            arr = getattr(model, name)
            raw = fh.read(arr.size * 8)
            arr[...] = np.frombuffer(raw, dtype="<f8").reshape(arr.shape)
    return model
