"""Command-line front end.

Every subcommand reads one JSON config (an ExperimentSpec) and applies
overrides: RAILS_SEED in the environment beats the file, explicit flags
beat both.  Exit codes: 0 success, 1 bad configuration, 2 bad data or an
unreadable file.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .adaptive import save_vectors
from .attacks import attack_batch
from .dknn import CalibrationSet, dknn_predict
from .errors import ConfigError, DataError
from .flocking import ReferenceFeatures
from .harness import (ExperimentSpec, build_experiment, evaluate, run_ssal)
from .predictor import rails_predict


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


_OVERRIDES = [
    ("--seed", "seed", int),
    ("--outdir", "outdir", str),
    ("--weights", "weights", str),
    ("--memory-bank", "memory_bank", str),
    ("--memory-capacity", "memory_capacity", int),
    ("--train-size", "train_size", int),
    ("--calibration-size", "calibration_size", int),
    ("--test-size", "test_size", int),
    ("--harvest-size", "harvest_size", int),
    ("--epochs", "epochs", int),
    ("--neighbors-per-class", "neighbors_per_class", int),
    ("--dknn-neighbors", "dknn_neighbors", int),
    ("--population-size", "population_size", int),
    ("--max-generations", "max_generations", int),
    ("--crossover-mode", "crossover_mode", str),
    ("--attack-kind", "attack_kind", str),
    ("--attack-epsilon", "attack_epsilon", float),
    ("--attack-steps", "attack_steps", int),
]


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}")
    return values[0] if len(values) == 1 else values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rails", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("train", "train the network and save its weights"),
            ("attack", "write an adversarial version of the test batch"),
            ("predict", "classify one test example"),
            ("eval", "full clean + adversarial evaluation"),
            ("harden", "harvest memory from attacked queries and re-measure"),
            ("trace", "emit per-generation expansion traces for one query")]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True,
                         help="path to a JSON experiment config")
        for flag, dest, kind in _OVERRIDES:
            cmd.add_argument(flag, dest=dest, type=kind, default=None)
        cmd.add_argument("--layers", dest="layers", type=_int_list,
                         default=None, help="comma-separated feature layers")
        cmd.add_argument("--temperature", dest="temperature",
                         type=_float_list, default=None,
                         help="scalar or comma-separated per-layer values")
        if name in ("predict", "trace"):
            cmd.add_argument("--index", type=int, default=0,
                             help="test example to classify")
            cmd.add_argument("--attacked", action="store_true",
                             help="attack the example first")
        if name == "attack":
            cmd.add_argument("--out", default=None,
                             help="output container (default outdir/adversarial.bin)")
    return parser


def _load_spec(args: argparse.Namespace) -> ExperimentSpec:
    spec = ExperimentSpec.from_file(args.config)
    env_seed = os.environ.get("RAILS_SEED")
    if env_seed is not None:
        try:
            spec.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"RAILS_SEED must be an integer, got {env_seed!r}")
    override_names = [dest for _, dest, _ in _OVERRIDES]
    override_names += ["layers", "temperature"]
    for dest in override_names:
        value = getattr(args, dest, None)
        if value is not None:
            setattr(spec, dest, value)
    spec.validate_types()
    return spec


def _progress(stage: str, done: int, total: int) -> None:
    if done == total or done % 25 == 0:
        print(f"  {stage}: {done}/{total}", flush=True)


def cmd_train(spec: ExperimentSpec, args) -> int:
    if spec.weights is None:
        spec.weights = os.path.join(spec.outdir, "weights.bin")
    os.makedirs(spec.outdir, exist_ok=True)
    parts = build_experiment(spec)
    train_acc = float(np.mean(
        parts.net.predict_labels(parts.train.vectors) == parts.train.labels))
    test_acc = float(np.mean(
        parts.net.predict_labels(parts.test_vectors) == parts.test_labels))
    print(f"saved weights to {spec.weights}")
    print(f"train accuracy {100 * train_acc:.2f}%  "
          f"test accuracy {100 * test_acc:.2f}%")
    return 0


def cmd_attack(spec: ExperimentSpec, args) -> int:
    parts = build_experiment(spec)
    adv = attack_batch(parts.net, parts.test_vectors, parts.test_labels,
                       spec.attack_config(), spec.seed)
    out = args.out or os.path.join(spec.outdir, "adversarial.bin")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    save_vectors(out, adv, parts.test_labels)
    clean_acc = float(np.mean(
        parts.net.predict_labels(parts.test_vectors) == parts.test_labels))
    adv_acc = float(np.mean(
        parts.net.predict_labels(adv) == parts.test_labels))
    print(f"wrote {adv.shape[0]} adversarial examples to {out}")
    print(f"network accuracy {100 * clean_acc:.2f}% clean, "
          f"{100 * adv_acc:.2f}% attacked")
    return 0


def _one_query(spec: ExperimentSpec, args):
    parts = build_experiment(spec)
    if not 0 <= args.index < parts.test_vectors.shape[0]:
        raise ConfigError(
            f"--index must lie in [0, {parts.test_vectors.shape[0]})")
    x = parts.test_vectors[args.index]
    y = int(parts.test_labels[args.index])
    if args.attacked:
        x = attack_batch(parts.net, x[None, :],
                         np.array([y]), spec.attack_config(), spec.seed)[0]
    return parts, x, y


def cmd_predict(spec: ExperimentSpec, args) -> int:
    parts, x, y = _one_query(spec, args)
    cfg = spec.rails_config()
    cfg.validate(parts.net)
    layers = cfg.resolve_layers(parts.net)
    features = ReferenceFeatures.build(parts.train, parts.net, layers,
                                       parts.bank)
    calibration = CalibrationSet.build(
        parts.calibration_vectors, parts.calibration_labels, parts.train,
        parts.net, layers, cfg.dknn_neighbors, memory=parts.bank,
        features=features)
    pred = rails_predict(x, parts.train, parts.net, cfg, query_id=args.index,
                         memory=parts.bank, calibration=calibration,
                         features=features)
    network = int(parts.net.predict_labels(x)[0])
    print(f"query {args.index} (true label {y})")
    print(f"network: {network}")
    print(f"dknn: {pred.dknn_label}  credibility {pred.dknn_credibility:.4f}")
    print(f"rails: {pred.label}  confidence {pred.confidence:.4f}")
    return 0


def cmd_eval(spec: ExperimentSpec, args) -> int:
    report = evaluate(spec, progress=_progress)
    batches = [("clean", report.clean)]
    if report.adversarial is not None:
        batches.append(("adversarial", report.adversarial))
    for name, batch in batches:
        for method in ("network", "dknn", "rails"):
            print(f"{name:12s} {method:8s} {100 * batch.accuracy(method):6.2f}%"
                  f"  ({batch.correct(method)}/{len(batch)})")
    print(f"wrote metrics and predictions to {spec.outdir}")
    return 0


def cmd_harden(spec: ExperimentSpec, args) -> int:
    report = run_ssal(spec, progress=_progress)
    print(f"dknn robust accuracy {100 * report.robust_before:.2f}% -> "
          f"{100 * report.robust_after:.2f}%")
    print(f"dknn clean accuracy {100 * report.clean_before:.2f}% -> "
          f"{100 * report.clean_after:.2f}%")
    print(f"bank holds {report.bank_size} cells "
          f"({report.harvested} harvested)")
    print(f"wrote ssal.csv and memory_bank.bin to {spec.outdir}")
    return 0


def cmd_trace(spec: ExperimentSpec, args) -> int:
    parts, x, y = _one_query(spec, args)
    cfg = spec.rails_config()
    cfg.validate(parts.net)
    pred = rails_predict(x, parts.train, parts.net, cfg, query_id=args.index,
                         memory=parts.bank)
    os.makedirs(spec.outdir, exist_ok=True)
    for layer, trace in sorted(pred.traces.items()):
        path = os.path.join(spec.outdir,
                            f"trace_q{args.index}_layer{layer}.csv")
        trace.to_csv(path)
        print(f"wrote {path}")
    print(f"query {args.index} (true label {y}): rails {pred.label} "
          f"confidence {pred.confidence:.4f}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "harden": cmd_harden,
    "trace": cmd_trace,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        spec = _load_spec(args)
        return _COMMANDS[args.command](spec, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
