"""End-to-end experiment pipeline and its on-disk artifacts.

A single INI-style config drives ingest -> trigger optimization/training ->
label-consistent poisoning -> attacker training -> evaluation. Every
artifact is written atomically (temp file + rename), nothing embeds wall
clock or machine state, and all randomness flows from the config seed, so a
config re-run is byte-identical. Outputs land under ``<out>/<config-hash>/``
with a manifest sufficient to reproduce the run.
"""

from __future__ import annotations

import configparser
import hashlib
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import classifier as cls
from . import metrics, poisoning, traces
from .distances import DistanceConfig
from .injection import format_plan
from .predictor import DynTrainConfig, PredictorModel, load_predictor, save_predictor, train_dynamic
from .static_opt import StaticOptConfig, optimize_static

WEIGHT_PRESETS = {"light": 4000, "heavy": 20000}
OUT_ROOT_ENV = "WFBACKDOOR_OUT"


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


@contextmanager
def pipeline_stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = ""
    out: str = "runs"
    mode: str = "closed"  # closed | open
    trigger: str = "dynamic"  # static | dynamic
    weight: str = "heavy"  # light | heavy | integer packet budget
    bursts: int = 7
    poison_rate: float = 0.01
    target_label: str = "0"  # class id or random:<n>
    lam: float = 1000.0
    band: int = 512
    seed: int = 0
    pills: str = "red,blue"
    jobs: int = 1
    monitored: str = ""  # open mode: comma list, empty = all but sentinel
    per_class_cap: int = 0  # 0 = no cap
    # classifier
    slots: int = 64
    t_max: float = 80.0
    cls_learning_rate: float = 1.0
    cls_epochs: int = 500
    cls_l2: float = 1e-4
    # predictor
    hidden: int = 64
    pred_learning_rate: float = 4e-6
    pred_batch_size: int = 1024
    pred_epochs: int = 1
    sigma_floor: float = 2.0
    region_lo: int = 50
    region_hi: int = 1500
    clip_norm: float = 1000.0

    def budget(self) -> int:
        if self.weight in WEIGHT_PRESETS:
            return WEIGHT_PRESETS[self.weight]
        return int(self.weight)

    def distance(self) -> DistanceConfig:
        return DistanceConfig(band_width=self.band)

    def tam(self) -> cls.TamConfig:
        return cls.TamConfig(slots=self.slots, t_max=self.t_max)

    def classifier_cfg(self) -> cls.ClassifierConfig:
        return cls.ClassifierConfig(
            learning_rate=self.cls_learning_rate, epochs=self.cls_epochs, l2=self.cls_l2
        )

    def predictor_cfg(self) -> DynTrainConfig:
        return DynTrainConfig(
            lam=self.lam,
            delta_max=self.budget(),
            m=self.bursts,
            learning_rate=self.pred_learning_rate,
            batch_size=self.pred_batch_size,
            epochs=self.pred_epochs,
            rng_seed=self.seed,
            hidden=self.hidden,
            sigma_floor=self.sigma_floor,
            clip_norm=self.clip_norm,
            region=(self.region_lo, self.region_hi),
        )

    def poison_cfg(self, target: int) -> poisoning.PoisonConfig:
        return poisoning.PoisonConfig(
            target_label=target,
            total=self.budget(),
            poison_rate=self.poison_rate,
            trigger_mode=self.trigger,
            m=self.bursts,
            rng_seed=self.seed,
            region=(self.region_lo, self.region_hi),
        )


_SECTION_KEYS = {
    "classifier": {
        "slots": "slots",
        "t_max": "t_max",
        "learning_rate": "cls_learning_rate",
        "epochs": "cls_epochs",
        "l2": "cls_l2",
    },
    "predictor": {
        "hidden": "hidden",
        "learning_rate": "pred_learning_rate",
        "batch_size": "pred_batch_size",
        "epochs": "pred_epochs",
        "sigma_floor": "sigma_floor",
        "region_lo": "region_lo",
        "region_hi": "region_hi",
        "clip_norm": "clip_norm",
    },
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def load_config(path: str | None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Defaults, overridden by the config file, overridden by CLI values."""
    values: dict[str, object] = {}
    if path:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(path)
        for key, raw in parser.items("experiment") if parser.has_section("experiment") else []:
            if key not in _FIELD_TYPES:
                raise KeyError(f"unknown config key {key!r} in [experiment]")
            values[key] = _coerce(key, raw)
        for section, mapping in _SECTION_KEYS.items():
            if not parser.has_section(section):
                continue
            for key, raw in parser.items(section):
                if key not in mapping:
                    raise KeyError(f"unknown config key {key!r} in [{section}]")
                values[mapping[key]] = _coerce(mapping[key], raw)
    for key, raw in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise KeyError(f"unknown config key {key!r}")
        values[key] = _coerce(key, str(raw))
    return ExperimentConfig(**values)


def load_sweep(path: str) -> list[dict[str, str]]:
    """Expand a [sweep] section (comma-separated value lists) into a grid."""
    parser = configparser.ConfigParser()
    parser.read(path)
    if not parser.has_section("sweep"):
        return []
    grid: list[dict[str, str]] = [{}]
    for key, raw in parser.items("sweep"):
        if key not in _FIELD_TYPES:
            raise KeyError(f"unknown sweep key {key!r}")
        options = [v.strip() for v in raw.split(",") if v.strip()]
        grid = [dict(point, **{key: opt}) for point in grid for opt in options]
    return grid


def canonical_config_text(cfg: ExperimentConfig) -> str:
    items = asdict(cfg)
    return "\n".join(f"{k}={items[k]!r}" for k in sorted(items)) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_config_text(cfg).encode()).hexdigest()[:12]


def atomic_write(path: str, data: str | bytes) -> None:
    mode = "wb" if isinstance(data, bytes) else "w"
    tmp = path + ".tmp"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _atomic_save(path: str, saver) -> None:
    tmp = path + ".tmp"
    saver(tmp)
    os.replace(tmp, path)


def parallel_map(fn, items, jobs: int = 1) -> list:
    """Order-preserving map, threaded when jobs > 1."""
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def split_of(name: str) -> str:
    """Deterministic 8:1:1 split by filename hash, stable under growth."""
    bucket = int(hashlib.sha1(name.encode("ascii")).hexdigest(), 16) % 10
    if bucket < 8:
        return "train"
    return "val" if bucket == 8 else "test"


def split_dataset(ds: traces.LabeledDataset):
    parts = {"train": [], "val": [], "test": []}
    for entry in ds.entries:
        parts[split_of(entry.name)].append(entry)
    return {key: ds.with_entries(entries) for key, entries in parts.items()}


def resolve_targets(cfg: ExperimentConfig, dataset: traces.LabeledDataset) -> list[int]:
    monitored_count = dataset.class_count - (1 if dataset.open_world else 0)
    spec = cfg.target_label
    if spec.startswith("random:"):
        n = int(spec.split(":", 1)[1])
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 20]))
        n = min(n, monitored_count)
        return sorted(int(v) for v in rng.choice(monitored_count, size=n, replace=False))
    target = int(spec)
    if target >= monitored_count:
        raise ValueError(f"target label {target} outside monitored classes 0..{monitored_count - 1}")
    return [target]


def _monitored_classes(cfg: ExperimentConfig, dataset: traces.LabeledDataset) -> list[int]:
    if cfg.monitored.strip():
        return sorted(int(v) for v in cfg.monitored.split(","))
    top = dataset.class_count - (1 if dataset.open_world else 0)
    return list(range(top))


def _save_dataset_dir(dataset: traces.LabeledDataset, out_dir: str) -> None:
    tmp = out_dir + ".tmp"
    if os.path.isdir(tmp):
        shutil.rmtree(tmp)
    traces.save_dataset(dataset, tmp)
    if os.path.isdir(out_dir):
        shutil.rmtree(out_dir)
    os.replace(tmp, out_dir)


def _plans_text(plans: dict[str, object]) -> str:
    lines = [f"{name} {format_plan(plan)}" for name, plan in sorted(plans.items())]
    return "\n".join(lines) + ("\n" if lines else "")


def train_trigger_stage(
    cfg: ExperimentConfig, train_ds: traces.LabeledDataset, run_dir: str
) -> PredictorModel:
    model, log = train_dynamic(train_ds, cfg.predictor_cfg(), cfg.distance())
    path = os.path.join(run_dir, "predictor.model")
    _atomic_save(path, lambda p: save_predictor(model, p))
    atomic_write(path + ".cfg.txt", canonical_config_text(cfg))
    curve = "".join(
        f"{i},{repr(r)},{repr(t)}\n"
        for i, (r, t) in enumerate(zip(log.mean_reward, log.mean_total_insertion))
    )
    atomic_write(os.path.join(run_dir, "predictor_training_log.csv"),
                 "batch,mean_reward,mean_total_insertion\n" + curve)
    return model


def _train_attacker(cfg: ExperimentConfig, dataset: traces.LabeledDataset) -> cls.SoftmaxModel:
    tam = cfg.tam()
    feats = np.stack(parallel_map(lambda e: cls.tam_vector(e.trace, tam), dataset.entries, cfg.jobs))
    return cls.train_classifier(feats, dataset.labels(), cfg.classifier_cfg(), dataset.class_count)


def run_single_target(
    cfg: ExperimentConfig,
    splits: dict[str, traces.LabeledDataset],
    target: int,
    run_dir: str,
) -> dict[str, float]:
    os.makedirs(run_dir, exist_ok=True)
    dist = cfg.distance()
    tam = cfg.tam()
    train_ds, test_ds = splits["train"], splits["test"]
    pills = {p.strip() for p in cfg.pills.split(",") if p.strip()}

    predictor = None
    if cfg.trigger == "dynamic":
        with pipeline_stage("train-trigger"):
            predictor = train_trigger_stage(cfg, train_ds, run_dir)

    pcfg = cfg.poison_cfg(target)
    with pipeline_stage("poison"):
        poisoned_train, train_plans = poisoning.poison_trainset_with_plans(
            train_ds, pcfg, dist, predictor
        )
        _save_dataset_dir(poisoned_train, os.path.join(run_dir, "poisoned_train"))
        _atomic_save(
            os.path.join(run_dir, "poisoned_manifest.txt"),
            lambda p: poisoning.write_poison_manifest(poisoned_train, p),
        )
        atomic_write(os.path.join(run_dir, "train_plans.txt"), _plans_text(train_plans))

    with pipeline_stage("train-attacker"):
        poisoned_model = _train_attacker(cfg, poisoned_train)
        control_model = _train_attacker(cfg, train_ds)
        _atomic_save(os.path.join(run_dir, "attacker.model"), lambda p: cls.save_classifier(poisoned_model, p, tam))
        _atomic_save(os.path.join(run_dir, "control.model"), lambda p: cls.save_classifier(control_model, p, tam))

    report = metrics.EvalReport()
    with pipeline_stage("eval"):
        report.extra["target_label"] = float(target)
        report.extra["budget"] = float(cfg.budget())
        report.clean_accuracy = metrics.closed_world_accuracy(poisoned_model, test_ds, tam)
        report.extra["control_clean_accuracy"] = metrics.closed_world_accuracy(control_model, test_ds, tam)

        feats_clean, _ = cls.feature_matrix(test_ds, tam)
        clean_preds = np.argmax(cls.predict_proba(poisoned_model, feats_clean), axis=1)

        if "blue" in pills:
            blue_ds = poisoning.apply_blue_pill(test_ds)
            feats_blue, _ = cls.feature_matrix(blue_ds, tam)
            blue_preds = np.argmax(cls.predict_proba(poisoned_model, feats_blue), axis=1)
            report.extra["blue_pill_matches_clean"] = float(np.array_equal(blue_preds, clean_preds))

        if "red" in pills:
            red_ds, red_plans = poisoning.apply_red_pill_with_plans(test_ds, pcfg, dist, predictor)
            atomic_write(os.path.join(run_dir, "redpill_plans.txt"), _plans_text(red_plans))
            report.data_overhead = metrics.data_overhead(test_ds, red_ds)
            report.data_overhead_per_trace = metrics.data_overhead_per_trace(test_ds, red_ds)
            report.time_overhead = metrics.time_overhead(test_ds, red_ds)

            non_target = [i for i, e in enumerate(red_ds.entries) if e.label != target]
            feats_red, _ = cls.feature_matrix(red_ds, tam)
            red_preds = np.argmax(cls.predict_proba(poisoned_model, feats_red), axis=1)
            control_red_preds = np.argmax(cls.predict_proba(control_model, feats_red), axis=1)
            report.red_pill_target_rate = 100.0 * float(np.mean(red_preds[non_target] == target))
            report.extra["control_red_pill_target_rate"] = 100.0 * float(
                np.mean(control_red_preds[non_target] == target)
            )

            if cfg.mode == "open":
                monitored = _monitored_classes(cfg, test_ds)
                points_clean, ap_clean = metrics.pr_sweep(poisoned_model, test_ds, monitored, tam)
                points_red, ap_red = metrics.pr_sweep(poisoned_model, red_ds, monitored, tam)
                report.pr_points = points_red
                report.map_score = ap_red
                report.extra["ap_clean"] = ap_clean
                clean_report = metrics.EvalReport(pr_points=points_clean)
                atomic_write(os.path.join(run_dir, "pr_points_clean.csv"), clean_report.pr_csv())
                atomic_write(os.path.join(run_dir, "pr_points_red.csv"), report.pr_csv())

        atomic_write(os.path.join(run_dir, "report.txt"), report.to_text())
    return _report_values(report)


def _report_values(report: metrics.EvalReport) -> dict[str, float]:
    out: dict[str, float] = {}
    for key in (
        "data_overhead",
        "data_overhead_per_trace",
        "time_overhead",
        "clean_accuracy",
        "red_pill_target_rate",
        "map_score",
    ):
        value = getattr(report, key)
        if value is not None:
            out[key] = float(value)
    out.update(report.extra)
    return out


def run_experiment(cfg: ExperimentConfig) -> str:
    """Execute the full pipeline; returns the run directory."""
    out_root = os.environ.get(OUT_ROOT_ENV, cfg.out)
    run_dir = os.path.join(out_root, config_hash(cfg))
    os.makedirs(run_dir, exist_ok=True)

    with pipeline_stage("ingest"):
        dataset = traces.load_dataset(
            cfg.dataset,
            per_class_cap=cfg.per_class_cap or None,
            open_world=(cfg.mode == "open"),
        )
        splits = split_dataset(dataset)
        targets = resolve_targets(cfg, dataset)

    results = []
    for target in targets:
        sub_dir = os.path.join(run_dir, f"target_{target}")
        results.append(run_single_target(cfg, splits, target, sub_dir))

    with pipeline_stage("report"):
        aggregate: dict[str, float] = {}
        keys = sorted({k for r in results for k in r})
        for key in keys:
            vals = np.array([r[key] for r in results if key in r], dtype=np.float64)
            aggregate[f"{key}_mean"] = float(vals.mean())
            aggregate[f"{key}_std"] = float(vals.std())
        agg_lines = "".join(f"{k}={repr(aggregate[k])}\n" for k in sorted(aggregate))
        atomic_write(os.path.join(run_dir, "report.txt"), agg_lines)

        if "map_score" in keys:
            aps = [r["map_score"] for r in results if "map_score" in r]
            atomic_write(
                os.path.join(run_dir, "map.txt"),
                f"map={repr(metrics.mean_average_precision(aps))}\n",
            )

    manifest = [
        f"config_hash={config_hash(cfg)}",
        f"targets={','.join(str(t) for t in targets)}",
        "## resolved config",
        canonical_config_text(cfg).rstrip("\n"),
        "## artifacts",
    ]
    for root, _dirs, files in os.walk(run_dir):
        for name in sorted(files):
            if name == "manifest.txt" or name.endswith(".tmp"):
                continue
            manifest.append(os.path.relpath(os.path.join(root, name), run_dir))
    atomic_write(os.path.join(run_dir, "manifest.txt"), "\n".join(manifest) + "\n")
    return run_dir


def run_static_opt(
    cfg: ExperimentConfig, trace: traces.Trace, seed: int | None = None
):
    opt = StaticOptConfig(
        total=cfg.budget(),
        pool_size=max(20, cfg.bursts),
        m=min(cfg.bursts, len(trace)),
        rng_seed=cfg.seed if seed is None else seed,
    )
    return optimize_static(trace, opt, cfg.distance())


def load_predictor_checkpoint(path: str) -> PredictorModel:
    return load_predictor(path)


def with_overrides(cfg: ExperimentConfig, **kwargs) -> ExperimentConfig:
    return replace(cfg, **kwargs)
