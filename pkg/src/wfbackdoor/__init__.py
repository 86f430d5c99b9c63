"""Backdoor-style website-fingerprinting defense laboratory.

Injects optimized bursts of incoming dummy packets into packet traces,
poisons a classifier's training set without touching labels, and verifies
that triggered traffic is steered to a target label while clean traffic is
classified normally.
"""

from .classifier import (
    ClassifierConfig,
    SoftmaxModel,
    TamConfig,
    extract_tam,
    feature_shift,
    gradient_similarity,
    predict,
    predict_proba,
    train_classifier,
)
from .distances import DistanceConfig, fast_lev, levenshtein_full
from .injection import TriggerPlan, equal_split, inject, strip_injected
from .metrics import (
    EvalReport,
    average_precision,
    closed_world_accuracy,
    data_overhead,
    mean_average_precision,
    pr_sweep,
    time_overhead,
)
from .poisoning import (
    PoisonConfig,
    apply_blue_pill,
    apply_red_pill,
    poison_trainset,
    random_removal,
)
from .predictor import (
    DynTrainConfig,
    PredictorModel,
    constraint_loss,
    infer_plan,
    predict_burst,
    sequence_loss,
    train_dynamic,
)
from .static_opt import StaticOptConfig, optimize_static
from .synthetic import SynthConfig, make_synthetic_dataset
from .traces import (
    LabeledDataset,
    PacketEvent,
    Trace,
    TraceParseError,
    direction_sequence,
    load_dataset,
    pad_or_truncate,
    save_dataset,
)

__version__ = "0.1.0"
