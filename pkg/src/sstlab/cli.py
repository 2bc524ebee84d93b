"""Command-line frontend.

Commands: gen-benchmark, pretrain, tune, eval, experiment,
verify-mindist, report, gradcheck. Exit codes: 0 success, 2 usage,
3 data error, 4 divergence. All outputs are reproducible for fixed
flags and seeds (no timestamps).

Config files are flat key=value text; command-line flags override file
values.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import dataio, netcore, runner, varspace
from .rng import derive_seed
from .strategies import StrategyConfig, StrategyKind

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4

_DATA_ERRORS = (
    dataio.BadMagic, dataio.TruncatedFile, dataio.DimensionMismatch,
    dataio.NonDivisible, dataio.ParseError, varspace.InfeasibleRegion,
    netcore.CheckpointError, netcore.ShapeMismatch,
    netcore.InconsistentArchitecture, FileNotFoundError, KeyError,
)


def _parse_strategy(text: str) -> StrategyKind:
    try:
        return StrategyKind(text.lower())
    except ValueError:
        raise SystemExit(
            f"error: unknown strategy {text!r}; choose from "
            + ", ".join(k.value for k in StrategyKind))


def read_config_file(path) -> dict[str, str]:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise dataio.ParseError(f"expected key=value, got {line!r}",
                                        lineno)
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


_CONFIG_KEYS = {
    "strategy": str, "lambda": float, "sc": float, "runs": int,
    "epochs_per_batch": int, "pretrain_epochs": int,
    "pretrain_minibatch": int, "pretrain_lr": float, "tune_lr": float,
    "label_noise": float, "class_mode": str, "mindist": int, "seed": int,
    "share_pretrained": lambda s: s.lower() in ("1", "true", "yes"),
    "n_batches": int, "arch": str, "eval_max_frames": int,
}


def build_experiment_config(values: dict[str, str]) -> runner.ExperimentConfig:
    parsed = {}
    for key, value in values.items():
        if key not in _CONFIG_KEYS:
            raise dataio.ParseError(f"unknown config key {key!r}", 0)
        parsed[key] = _CONFIG_KEYS[key](value)
    cfg = runner.ExperimentConfig(
        strategy=_parse_strategy(parsed.get("strategy", "supt")),
        runs=parsed.get("runs", 10),
        epochs_per_batch=parsed.get("epochs_per_batch", 100),
        pretrain_epochs=parsed.get("pretrain_epochs", 20),
        pretrain_minibatch=parsed.get("pretrain_minibatch", 100),
        pretrain_lr=parsed.get("pretrain_lr", 0.05),
        tune_lr=parsed.get("tune_lr", 0.01),
        label_noise_fraction=parsed.get("label_noise", 0.0),
        class_mode=parsed.get("class_mode", "five"),
        mindist=parsed.get("mindist", 1),
        master_seed=parsed.get("seed", 0),
        share_pretrained=parsed.get("share_pretrained", True),
        n_batches=parsed.get("n_batches", 10),
        arch=parsed.get("arch", "default"),
        eval_max_frames=parsed.get("eval_max_frames"),
    )
    cfg.strategy_cfg = StrategyConfig(
        lam=parsed.get("lambda", 2 / 3),
        sc=parsed.get("sc", 0.65),
        n_w=cfg.n_w)
    return cfg


# ---------------------------------------------------------------------------
# benchmark directories

def _write_bench_config(directory, values: dict) -> None:
    with open(os.path.join(directory, "bench.cfg"), "w") as fh:
        for key in sorted(values):
            fh.write(f"{key}={values[key]}\n")


def load_benchmark(directory, norb_files=None) -> runner.Benchmark:
    values = read_config_file(os.path.join(directory, "bench.cfg"))
    class_mode = values.get("class_mode", "five")
    train = dataio.read_batch_manifests(directory, "train", class_mode)
    test = dataio.read_batch_manifests(directory, "test", class_mode)
    if not train or not test:
        raise FileNotFoundError(f"no batch manifests in {directory}")
    if norb_files:
        records = dataio.load_norb(*norb_files)
        source = dataio.NorbFrameSource(records)
    else:
        source = dataio.ToyFrameSource(
            dataio.ToyDatasetSpec(seed=int(values.get("toy_seed", 0))))
    return runner.Benchmark(train, test, source, class_mode)


def cmd_gen_benchmark(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    walk = varspace.WalkConfig()
    train = varspace.generate_train_batches(
        args.n_batches, walk, args.seed, class_mode=args.class_mode)
    test = varspace.generate_test_batches(
        train, args.mindist, walk, derive_seed(args.seed, 0x7E57),
        n_batches=args.n_batches, class_mode=args.class_mode)
    dataio.write_batch_manifests(args.out, train)
    dataio.write_batch_manifests(args.out, test)
    _write_bench_config(args.out, {
        "class_mode": args.class_mode, "mindist": args.mindist,
        "seed": args.seed, "toy_seed": args.seed, "dataset": "toy"})
    report = varspace.verify_mindist(train, test, args.mindist)
    with open(os.path.join(args.out, "verify_report.txt"), "w") as fh:
        fh.write(f"mindist={args.mindist}\n")
        fh.write(f"comparisons={report.comparisons}\n")
        fh.write(f"violations={len(report.violations)}\n")
        fh.write(f"ok={str(report.ok).lower()}\n")
        fh.write(f"unique_train_frames={varspace.unique_frame_count(train)}\n")
    print(f"benchmark written to {args.out} "
          f"(mindist={args.mindist}, ok={report.ok})")
    return 0 if report.ok else EXIT_DATA


def cmd_verify_mindist(args) -> int:
    bench = load_benchmark(args.bench)
    report = varspace.verify_mindist(bench.train_batches, bench.test_batches,
                                     args.mindist)
    print(f"ok={str(report.ok).lower()} violations={len(report.violations)} "
          f"comparisons={report.comparisons}")
    return 0 if report.ok else EXIT_DATA


def _norb_files(args):
    if getattr(args, "norb_data", None):
        return (args.norb_data, args.norb_cat, args.norb_info)
    return None


def cmd_pretrain(args) -> int:
    cfg = build_experiment_config(_overrides(args))
    bench = load_benchmark(args.bench, _norb_files(args))
    net = runner.pretrain_from_benchmark(cfg, bench)
    netcore.save_checkpoint(net, args.out)
    frames, labels = runner._eval_set(bench, cfg)
    acc = runner.evaluate_frame_accuracy(net, frames, labels)
    print(f"pretrained checkpoint written to {args.out} accuracy={acc:.4f}")
    return 0


def cmd_tune(args) -> int:
    cfg = build_experiment_config(_overrides(args))
    bench = load_benchmark(args.bench, _norb_files(args))
    net = netcore.load_checkpoint(args.ckpt)
    order = ([int(x) for x in args.order.split(",")] if args.order
             else list(range(2, len(bench.train_batches) + 1)))
    for index in order:
        runner.tune_on_batch(net, bench.train_batches[index - 1],
                             cfg.strategy, cfg, bench.frame_source)
    netcore.save_checkpoint(net, args.out)
    print(f"tuned checkpoint written to {args.out} (batches {order})")
    return 0


def cmd_eval(args) -> int:
    cfg = build_experiment_config(_overrides(args))
    bench = load_benchmark(args.bench, _norb_files(args))
    net = netcore.load_checkpoint(args.ckpt)
    frames, labels = runner._eval_set(bench, cfg)
    acc = runner.evaluate_frame_accuracy(net, frames, labels)
    ent = runner.entropy_report(net, frames[:1000])
    print(f"accuracy={acc:.6f} entropy_bits={ent:.4f} frames={len(frames)}")
    return 0


def _overrides(args) -> dict[str, str]:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in _CONFIG_KEYS:
        flag = key.replace("_", "-")
        attr = key if key != "lambda" else "lam"
        v = getattr(args, attr.replace("-", "_"), None)
        if v is not None:
            values[key] = str(v)
    return values


def cmd_experiment(args) -> int:
    cfg = build_experiment_config(_overrides(args))
    if args.bench:
        bench = load_benchmark(args.bench, _norb_files(args))
    else:
        bench = runner.make_toy_benchmark(cfg)
    agg, results = runner.run_experiment(cfg, bench)
    runner.write_results_csv(args.out, results, agg)
    print(f"results written to {args.out}; checkpoint means: "
          + " ".join(f"{m:.4f}" for m in agg.mean))
    return 0


def cmd_report(args) -> int:
    results, agg = runner.read_results_csv(args.csv)
    n = len(agg.mean)
    print("checkpoint " + " ".join(f"{i + 1:>8d}" for i in range(n)))
    print("mean       " + " ".join(f"{v:8.4f}" for v in agg.mean))
    print("std        " + " ".join(f"{v:8.4f}" for v in agg.std))
    print("ci95       " + " ".join(f"{v:8.4f}" for v in agg.ci95))
    for r in results:
        print(f"run {r.run:<6d} " + " ".join(f"{v:8.4f}" for v in r.accuracy_at))
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    arch = [netcore.ConvSpec(3, 3), netcore.ActivationSpec("tanh"),
            netcore.SumPoolSpec(2), netcore.FullSpec(4)]
    net = netcore.init_network(arch, seed=args.seed, input_size=10)
    x = rng.uniform(0, 1, (10, 10))
    t = rng.uniform(0, 1, 4)
    err = netcore.gradient_check(net, x, t, eps=args.eps)
    print(f"max_relative_error={err:.3e}")
    return 0 if err < 1e-4 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sstlab",
        description="Incremental semi-supervised tuning laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, bench_required=True):
        p.add_argument("--bench", required=bench_required,
                       help="benchmark directory from gen-benchmark")
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--norb-data", help="NORB -dat matrix file")
        p.add_argument("--norb-cat", help="NORB -cat matrix file")
        p.add_argument("--norb-info", help="NORB -info matrix file")
        p.add_argument("--seed", type=int)
        p.add_argument("--class-mode", choices=["five", "fifty"],
                       dest="class_mode")
        p.add_argument("--arch", choices=["default", "small"])
        p.add_argument("--lambda", type=float, dest="lam")
        p.add_argument("--sc", type=float)
        p.add_argument("--runs", type=int)
        p.add_argument("--epochs-per-batch", type=int, dest="epochs_per_batch")
        p.add_argument("--pretrain-epochs", type=int, dest="pretrain_epochs")
        p.add_argument("--pretrain-lr", type=float, dest="pretrain_lr")
        p.add_argument("--tune-lr", type=float, dest="tune_lr")
        p.add_argument("--label-noise", type=float, dest="label_noise")
        p.add_argument("--mindist", type=int)
        p.add_argument("--eval-max-frames", type=int, dest="eval_max_frames")

    p = sub.add_parser("gen-benchmark", help="generate walk manifests")
    p.add_argument("--mindist", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--n-batches", type=int, default=10)
    p.add_argument("--class-mode", choices=["five", "fifty"], default="five")
    p.set_defaults(fn=cmd_gen_benchmark)

    p = sub.add_parser("verify-mindist", help="check the exclusion distance")
    p.add_argument("--bench", required=True)
    p.add_argument("--mindist", type=int, required=True)
    p.set_defaults(fn=cmd_verify_mindist)

    p = sub.add_parser("pretrain", help="supervised training on batch 1")
    add_common(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("tune", help="incremental tuning of a checkpoint")
    add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", required=True)
    p.add_argument("--order", help="comma-separated batch indices")
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("eval", help="frame accuracy of a checkpoint")
    add_common(p)
    p.add_argument("--ckpt", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("experiment", help="full multi-run protocol")
    add_common(p, bench_required=False)
    p.add_argument("--strategy")
    p.add_argument("--out", required=True, help="results CSV path")
    p.set_defaults(fn=cmd_experiment)

    p = sub.add_parser("report", help="render a results CSV as text")
    p.add_argument("--csv", required=True)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "strategy", None) is not None and isinstance(args.strategy, str):
        # validated here so a bad name exits 2 like other usage errors
        try:
            StrategyKind(args.strategy.lower())
        except ValueError:
            parser.error(f"unknown strategy {args.strategy!r}")
    try:
        return args.fn(args)
    except _DATA_ERRORS as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (runner.DivergenceDetected, netcore.NonFiniteGradient) as exc:
        print(f"error: divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
