"""Command-line front end.

``wfbd run --config experiment.ini`` drives the whole pipeline; the other
subcommands expose each stage independently with the same flag names as the
config keys (flag > config file > default).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields

import numpy as np

from . import classifier as cls
from . import experiment, metrics, poisoning, traces
from .injection import format_plan, save_plan
from .predictor import load_predictor
from .synthetic import SynthConfig, make_synthetic_dataset


def _config_parser() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("config keys")
    for field in fields(experiment.ExperimentConfig):
        group.add_argument(
            "--" + field.name.replace("_", "-"),
            dest=field.name,
            default=argparse.SUPPRESS,
            metavar=field.type.upper(),
        )
    return parent


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    names = {f.name for f in fields(experiment.ExperimentConfig)}
    return {k: str(v) for k, v in vars(args).items() if k in names}


def _build_config(args: argparse.Namespace) -> experiment.ExperimentConfig:
    return experiment.load_config(getattr(args, "config", None), _overrides(args))


def cmd_run(args) -> int:
    sweep = experiment.load_sweep(args.config) if args.config else []
    base_overrides = _overrides(args)
    if sweep:
        lines = []
        for point in sweep:
            cfg = experiment.load_config(args.config, {**point, **base_overrides})
            run_dir = experiment.run_experiment(cfg)
            desc = ",".join(f"{k}={v}" for k, v in sorted(point.items()))
            lines.append(f"{desc} -> {run_dir}")
            print(lines[-1])
        base_cfg = experiment.load_config(args.config, base_overrides)
        summary = experiment.os.path.join(
            experiment.os.environ.get(experiment.OUT_ROOT_ENV, base_cfg.out),
            f"sweep_{experiment.config_hash(base_cfg)}.txt",
        )
        experiment.atomic_write(summary, "\n".join(lines) + "\n")
        print(f"sweep summary: {summary}")
        return 0
    cfg = _build_config(args)
    run_dir = experiment.run_experiment(cfg)
    print(run_dir)
    return 0


def cmd_ingest(args) -> int:
    cfg = _build_config(args)
    ds = traces.load_dataset(
        cfg.dataset, per_class_cap=cfg.per_class_cap or None, open_world=(cfg.mode == "open")
    )
    counts: dict[int, int] = {}
    for entry in ds.entries:
        counts[entry.label] = counts.get(entry.label, 0) + 1
    lines = [f"traces={len(ds)}", f"classes={ds.class_count}", f"open_world={int(ds.open_world)}"]
    lines += [f"class_{label}={counts[label]}" for label in sorted(counts)]
    lines += [f"warning={w}" for w in ds.warnings]
    text = "\n".join(lines) + "\n"
    if args.summary:
        experiment.atomic_write(args.summary, text)
    print(text, end="")
    return 0


def cmd_static_opt(args) -> int:
    cfg = _build_config(args)
    ds = traces.load_dataset(cfg.dataset, open_world=(cfg.mode == "open"))
    by_name = {e.name: e for e in ds.entries}
    if args.trace not in by_name:
        raise KeyError(f"trace {args.trace!r} not in dataset")
    plan = experiment.run_static_opt(cfg, by_name[args.trace].trace)
    if args.plan_out:
        save_plan(plan, args.plan_out)
    print(format_plan(plan))
    return 0


def cmd_train_trigger(args) -> int:
    cfg = _build_config(args)
    ds = traces.load_dataset(cfg.dataset, open_world=(cfg.mode == "open"))
    splits = experiment.split_dataset(ds)
    experiment.os.makedirs(args.out, exist_ok=True)
    experiment.train_trigger_stage(cfg, splits["train"], args.out)
    print(experiment.os.path.join(args.out, "predictor.model"))
    return 0


def cmd_poison(args) -> int:
    cfg = _build_config(args)
    ds = traces.load_dataset(cfg.dataset, open_world=(cfg.mode == "open"))
    predictor = load_predictor(args.predictor) if args.predictor else None
    pcfg = cfg.poison_cfg(int(cfg.target_label))
    poisoned, plans = poisoning.poison_trainset_with_plans(ds, pcfg, cfg.distance(), predictor)
    traces.save_dataset(poisoned, args.out)
    poisoning.write_poison_manifest(poisoned, experiment.os.path.join(args.out, "poisoned_manifest.txt"))
    print(f"{args.out}: poisoned {len(plans)} of {len(ds)} traces")
    return 0


def cmd_train_attacker(args) -> int:
    cfg = _build_config(args)
    ds = traces.load_dataset(cfg.dataset, open_world=(cfg.mode == "open"))
    feats, labels = cls.feature_matrix(ds, cfg.tam())
    model = cls.train_classifier(feats, labels, cfg.classifier_cfg(), ds.class_count)
    cls.save_classifier(model, args.out, cfg.tam())
    print(f"{args.out}: final_loss={model.final_loss!r}")
    return 0


def cmd_eval(args) -> int:
    cfg = _build_config(args)
    model, tam = cls.load_classifier(args.model)
    ds = traces.load_dataset(cfg.dataset, open_world=(cfg.mode == "open"))
    report = metrics.EvalReport()
    report.clean_accuracy = metrics.closed_world_accuracy(model, ds, tam)
    if args.red_pill:
        predictor = load_predictor(args.predictor) if args.predictor else None
        pcfg = cfg.poison_cfg(int(cfg.target_label))
        red = poisoning.apply_red_pill(ds, pcfg, cfg.distance(), predictor)
        report.data_overhead = metrics.data_overhead(ds, red)
        report.time_overhead = metrics.time_overhead(ds, red)
        feats, labels = cls.feature_matrix(red, tam)
        preds = np.argmax(cls.predict_proba(model, feats), axis=1)
        non_target = labels != int(cfg.target_label)
        report.red_pill_target_rate = 100.0 * float(
            np.mean(preds[non_target] == int(cfg.target_label))
        )
    if cfg.mode == "open":
        monitored = list(range(ds.class_count - 1)) if not cfg.monitored else None
        points, ap = metrics.pr_sweep(
            model, ds, monitored or [int(v) for v in cfg.monitored.split(",")], tam
        )
        report.pr_points = points
        report.map_score = ap
    if args.out:
        experiment.atomic_write(args.out, report.to_text())
    print(report.to_text(), end="")
    return 0


def cmd_report(args) -> int:
    path = experiment.os.path.join(args.run, "report.txt")
    with open(path, "r", encoding="ascii") as fh:
        print(fh.read(), end="")
    return 0


def cmd_synth(args) -> int:
    ds = make_synthetic_dataset(
        SynthConfig(
            classes=args.classes,
            per_class=args.per_class,
            unmonitored=args.unmonitored,
            seed=args.seed,
            mean_events=args.mean_events,
            duration=args.duration,
        )
    )
    traces.save_dataset(ds, args.out)
    print(f"{args.out}: {len(ds)} traces, {ds.class_count} classes")
    return 0


def main(argv: list[str] | None = None) -> int:
    parent = _config_parser()
    parser = argparse.ArgumentParser(prog="wfbd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[parent], help="full pipeline from a config file")
    p.add_argument("--config", help="INI experiment config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ingest", parents=[parent], help="load a dataset and print a summary")
    p.add_argument("--summary", help="also write the summary to this file")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("static-opt", parents=[parent], help="optimize a static plan for one trace")
    p.add_argument("--trace", required=True, help="trace filename inside the dataset")
    p.add_argument("--plan-out", help="write the plan to this file")
    p.set_defaults(func=cmd_static_opt)

    p = sub.add_parser("train-trigger", parents=[parent], help="train the dynamic burst predictor")
    p.add_argument("--out", required=True, help="output directory for the checkpoint")
    p.set_defaults(func=cmd_train_trigger)

    p = sub.add_parser("poison", parents=[parent], help="poison a dataset label-consistently")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--predictor", help="predictor checkpoint for dynamic triggers")
    p.set_defaults(func=cmd_poison)

    p = sub.add_parser("train-attacker", parents=[parent], help="train the reference classifier")
    p.add_argument("--out", required=True, help="classifier checkpoint path")
    p.set_defaults(func=cmd_train_attacker)

    p = sub.add_parser("eval", parents=[parent], help="evaluate a classifier checkpoint")
    p.add_argument("--model", required=True, help="classifier checkpoint")
    p.add_argument("--red-pill", action="store_true", help="also evaluate triggered traffic")
    p.add_argument("--predictor", help="predictor checkpoint for dynamic triggers")
    p.add_argument("--out", help="write the report to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="print the report of a finished run")
    p.add_argument("--run", required=True, help="run directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--unmonitored", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mean-events", type=int, default=800)
    p.add_argument("--duration", type=float, default=16.0)
    p.set_defaults(func=cmd_synth)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except experiment.StageError as err:
        print(f"error in stage {err.stage}: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - single CLI boundary
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
