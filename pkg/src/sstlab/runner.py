"""Incremental experiment protocol: supervised pre-training on the
first batch, incremental tuning on the remaining ones (old batches are
never revisited), shuffled multi-run repetition, per-checkpoint frame
accuracy and aggregate statistics.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field

import numpy as np

from . import netcore, strategies, varspace
from .dataio import ToyDatasetSpec, ToyFrameSource
from .netcore import ClassifierState, NonFiniteGradient
from .rng import derive_seed
from .strategies import StrategyConfig, StrategyKind, TemporalState


class DivergenceDetected(Exception):
    pass


@dataclass
class ExperimentConfig:
    strategy: StrategyKind = StrategyKind.SUPT
    strategy_cfg: StrategyConfig = field(default_factory=StrategyConfig)
    runs: int = 10
    epochs_per_batch: int = 100
    pretrain_epochs: int = 20
    pretrain_minibatch: int = 100
    pretrain_lr: float = 0.05
    tune_lr: float = 0.01
    label_noise_fraction: float = 0.0
    class_mode: str = "five"  # "five" | "fifty"
    mindist: int = 1
    master_seed: int = 0
    share_pretrained: bool = True
    n_batches: int = 10
    arch: str = "default"  # "default" | "small"
    eval_max_frames: int | None = None

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if not (0.0 <= self.label_noise_fraction <= 1.0):
            raise ValueError("label_noise_fraction must be in [0,1]")
        self.n_w = 50 if self.class_mode == "fifty" else 5
        if self.strategy_cfg.n_w != self.n_w:
            self.strategy_cfg = StrategyConfig(
                lam=self.strategy_cfg.lam, sc=self.strategy_cfg.sc,
                n_w=self.n_w)


@dataclass
class RunResult:
    run: int
    accuracy_at: list[float]          # checkpoints 1..n_batches
    batch_order: list[int]            # shuffled indices of batches 2..n


@dataclass
class AggregateResult:
    mean: list[float]
    std: list[float]
    ci95: list[float]                 # 1.96 * std / sqrt(runs)


@dataclass
class Benchmark:
    train_batches: list[varspace.Batch]
    test_batches: list[varspace.Batch]
    frame_source: object              # (object_id, point) -> float image
    class_mode: str = "five"


def make_toy_benchmark(cfg: ExperimentConfig,
                       toy_spec: ToyDatasetSpec | None = None) -> Benchmark:
    """Synthetic stand-in mirroring the video benchmark shape: 10 train
    batches of 50 walks x 20 frames, test batches at the configured
    exclusion distance."""
    walk = varspace.WalkConfig()
    train = varspace.generate_train_batches(
        cfg.n_batches, walk, cfg.master_seed, class_mode=cfg.class_mode)
    test = varspace.generate_test_batches(
        train, cfg.mindist, walk, derive_seed(cfg.master_seed, 0x7E57),
        n_batches=cfg.n_batches, class_mode=cfg.class_mode)
    spec = toy_spec or ToyDatasetSpec(seed=cfg.master_seed)
    return Benchmark(train, test, ToyFrameSource(spec), cfg.class_mode)


def batch_frames(batch: varspace.Batch, frame_source) -> tuple[np.ndarray, np.ndarray]:
    """All frames of a batch in flow order, with their class labels."""
    frames, labels = [], []
    for seq in batch.sequences:
        for p in seq.points:
            frames.append(frame_source(seq.object_id, p))
            labels.append(seq.class_id)
    return np.stack(frames), np.array(labels, dtype=np.int64)


def inject_label_noise(labels, fraction: float, n_w: int, seed: int):
    """Replace exactly round(fraction * n) labels with a uniformly
    random different class."""
    labels = np.array(labels, dtype=np.int64)
    if not (0.0 <= fraction <= 1.0):
        raise ValueError("fraction must be in [0,1]")
    k = int(round(fraction * len(labels)))
    if k == 0:
        return labels
    rng = np.random.default_rng(seed)
    positions = rng.choice(len(labels), size=k, replace=False)
    for pos in positions:
        shift = rng.integers(1, n_w)
        labels[pos] = (labels[pos] + shift) % n_w
    return labels


def _make_net(cfg: ExperimentConfig, seed: int) -> ClassifierState:
    if cfg.arch == "default":
        arch = netcore.default_architecture(cfg.n_w)
    elif cfg.arch == "small":
        arch = netcore.small_architecture(cfg.n_w)
    else:
        raise ValueError(f"unknown arch {cfg.arch!r}")
    return netcore.init_network(arch, seed=seed)


def supervised_pretrain(net: ClassifierState, frames: np.ndarray,
                        labels: np.ndarray, cfg: ExperimentConfig,
                        seed: int) -> list[float]:
    """Mini-batch SGD with one-hot targets; returns per-epoch mean loss."""
    n = len(frames)
    targets = np.zeros((n, cfg.n_w))
    targets[np.arange(n), labels] = 1.0
    rng = np.random.default_rng(seed)
    history = []
    try:
        for _epoch in range(cfg.pretrain_epochs):
            order = rng.permutation(n)
            losses = []
            for s in range(0, n, cfg.pretrain_minibatch):
                idx = order[s:s + cfg.pretrain_minibatch]
                losses.append(netcore.sgd_step(
                    net, frames[idx], targets[idx], cfg.pretrain_lr))
            history.append(float(np.mean(losses)))
    except NonFiniteGradient as exc:
        raise DivergenceDetected(str(exc)) from exc
    return history


def tune_on_batch(net: ClassifierState, batch: varspace.Batch,
                  strategy: StrategyKind, cfg: ExperimentConfig,
                  frame_source) -> list[float]:
    """One incremental-tuning stage: the whole batch is a single frame
    flow, processed online (mini-batch 1). The temporal state resets at
    the start of each pass, never at sequence boundaries. Returns the
    mean loss of the applied updates per pass (nan if all skipped)."""
    frames, labels = batch_frames(batch, frame_source)
    scfg = cfg.strategy_cfg
    history = []
    try:
        for _epoch in range(cfg.epochs_per_batch):
            state = TemporalState()
            losses = []
            for img, label in zip(frames, labels):
                out = netcore.forward(net, img)
                target = strategies.desired_output(
                    strategy, scfg, state, out,
                    label=int(label) if strategy.needs_label else None)
                if target is not None:
                    losses.append(netcore.sgd_step(
                        net, img[None], target[None], cfg.tune_lr))
                state = strategies.advance_temporal(state, out)
            history.append(float(np.mean(losses)) if losses else float("nan"))
    except NonFiniteGradient as exc:
        raise DivergenceDetected(str(exc)) from exc
    return history


def evaluate_frame_accuracy(net: ClassifierState, frames: np.ndarray,
                            labels: np.ndarray, chunk: int = 500) -> float:
    """Fraction of frames whose argmax output matches the label. Ties
    break toward the lowest class index."""
    if len(frames) == 0:
        raise ValueError("empty test set")
    hits = 0
    for s in range(0, len(frames), chunk):
        out = netcore.forward_batch(net, frames[s:s + chunk])
        hits += int(np.sum(np.argmax(out, axis=1) == labels[s:s + chunk]))
    return hits / len(frames)


def entropy_report(net: ClassifierState, frames: np.ndarray,
                   chunk: int = 500) -> float:
    """Mean output entropy (bits) over the given frames."""
    outs = [netcore.forward_batch(net, frames[s:s + chunk])
            for s in range(0, len(frames), chunk)]
    return netcore.output_entropy(np.concatenate(outs))


def _eval_set(benchmark: Benchmark, cfg: ExperimentConfig):
    frames_list, labels_list = [], []
    for batch in benchmark.test_batches:
        f, l = batch_frames(batch, benchmark.frame_source)
        frames_list.append(f)
        labels_list.append(l)
    frames = np.concatenate(frames_list)
    labels = np.concatenate(labels_list)
    if cfg.eval_max_frames and cfg.eval_max_frames < len(frames):
        idx = np.linspace(0, len(frames) - 1, cfg.eval_max_frames).astype(int)
        frames, labels = frames[idx], labels[idx]
    return frames, labels


def pretrain_from_benchmark(cfg: ExperimentConfig, benchmark: Benchmark,
                            seed_tag: int = 0) -> ClassifierState:
    """Fresh network trained on the first batch (with optional label
    noise), the shared starting point of every run."""
    net = _make_net(cfg, seed=derive_seed(cfg.master_seed, 0x1417, seed_tag))
    frames, labels = batch_frames(benchmark.train_batches[0],
                                  benchmark.frame_source)
    if cfg.label_noise_fraction > 0:
        labels = inject_label_noise(
            labels, cfg.label_noise_fraction, cfg.n_w,
            derive_seed(cfg.master_seed, 0x0153, seed_tag))
    supervised_pretrain(net, frames, labels, cfg,
                        seed=derive_seed(cfg.master_seed, 0x93D, seed_tag))
    return net


def run_experiment(
    cfg: ExperimentConfig,
    benchmark: Benchmark | None = None,
    pretrained: ClassifierState | None = None,
) -> tuple[AggregateResult, list[RunResult]]:
    """Full protocol: per run, start from the pretrained network,
    shuffle the tuning batches, tune stage by stage and record frame
    accuracy after pre-training and after every stage."""
    if benchmark is None:
        benchmark = make_toy_benchmark(cfg)
    eval_frames, eval_labels = _eval_set(benchmark, cfg)
    if pretrained is None and cfg.share_pretrained:
        pretrained = pretrain_from_benchmark(cfg, benchmark)

    results = []
    for run in range(1, cfg.runs + 1):
        if cfg.share_pretrained:
            net = copy.deepcopy(pretrained)
        else:
            net = pretrain_from_benchmark(cfg, benchmark, seed_tag=run)
        order = list(range(2, cfg.n_batches + 1))
        np.random.default_rng(
            derive_seed(cfg.master_seed, 0x5F, run)).shuffle(order)
        accs = [evaluate_frame_accuracy(net, eval_frames, eval_labels)]
        for batch_index in order:
            batch = benchmark.train_batches[batch_index - 1]
            tune_on_batch(net, batch, cfg.strategy, cfg,
                          benchmark.frame_source)
            accs.append(evaluate_frame_accuracy(net, eval_frames, eval_labels))
        results.append(RunResult(run=run, accuracy_at=accs, batch_order=order))

    acc = np.array([r.accuracy_at for r in results])
    mean = acc.mean(axis=0)
    std = acc.std(axis=0, ddof=0)
    ci = 1.96 * std / np.sqrt(cfg.runs)
    agg = AggregateResult(mean=mean.tolist(), std=std.tolist(), ci95=ci.tolist())
    return agg, results


# ---------------------------------------------------------------------------
# results CSV: kind,run,checkpoint,value rows, then an aggregate block

def write_results_csv(path, results: list[RunResult],
                      agg: AggregateResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "run", "checkpoint", "value"])
        for r in results:
            for ck, v in enumerate(r.accuracy_at, start=1):
                writer.writerow(["accuracy", r.run, ck, f"{v:.10g}"])
        for name, vals in (("mean", agg.mean), ("std", agg.std),
                           ("ci95", agg.ci95)):
            for ck, v in enumerate(vals, start=1):
                writer.writerow([name, "", ck, f"{v:.10g}"])


def read_results_csv(path) -> tuple[list[RunResult], AggregateResult]:
    runs: dict[int, list[float]] = {}
    agg = {"mean": [], "std": [], "ci95": []}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["kind", "run", "checkpoint", "value"]:
            raise ValueError(f"unexpected results header {header}")
        for kind, run, _ck, value in reader:
            if kind == "accuracy":
                runs.setdefault(int(run), []).append(float(value))
            else:
                agg[kind].append(float(value))
    results = [RunResult(run=k, accuracy_at=v, batch_order=[])
               for k, v in sorted(runs.items())]
    return results, AggregateResult(**agg)


# ---------------------------------------------------------------------------
# alternative benchmark recipes

@dataclass
class PoseSequence:
    """Temporally coherent walk over the circular 72-pose ring of one
    turntable object class."""
    class_id: int
    poses: list[int]


@dataclass
class PoseBatch:
    sequences: list[PoseSequence]
    kind: str
    index: int


COIL_POSES = 72
COIL_TEST_POSES = tuple(range(0, COIL_POSES, 12))  # one pose every 60 degrees


def coil_allowed_poses() -> list[int]:
    """Training poses: everything except the 6 test poses and their two
    5-degree neighbours (54 of 72)."""
    excluded = set()
    for p in COIL_TEST_POSES:
        excluded.update({(p - 1) % COIL_POSES, p, (p + 1) % COIL_POSES})
    return [p for p in range(COIL_POSES) if p not in excluded]


def generate_coil_batches(master_seed: int, n_classes: int = 100,
                          n_batches: int = 10,
                          walk_length: int = 10) -> tuple[list[PoseBatch], list[PoseBatch]]:
    """Turntable variant: 10 training batches of 100 sequences x 10
    frames walked over the allowed poses, and one test batch holding
    the 6 held-out poses per class."""
    from .rng import XorShift128Plus

    allowed = coil_allowed_poses()
    allowed_set = set(allowed)
    train = []
    for b in range(1, n_batches + 1):
        sequences = []
        for cls in range(n_classes):
            rng = XorShift128Plus(derive_seed(master_seed, 0xC0 , b, cls))
            pose = allowed[rng.randrange(len(allowed))]
            direction = 1 if rng.uniform() < 0.5 else -1
            poses = [pose]
            for _ in range(walk_length - 1):
                if rng.uniform() < 0.2:
                    direction = -direction
                nxt = (pose + direction) % COIL_POSES
                if nxt not in allowed_set:
                    direction = -direction
                    nxt = (pose + direction) % COIL_POSES
                    if nxt not in allowed_set:
                        nxt = pose
                pose = nxt
                poses.append(pose)
            sequences.append(PoseSequence(class_id=cls, poses=poses))
        train.append(PoseBatch(sequences=sequences, kind="train", index=b))
    test = [PoseBatch(
        sequences=[PoseSequence(class_id=cls, poses=list(COIL_TEST_POSES))
                   for cls in range(n_classes)],
        kind="test", index=1)]
    return train, test


def make_toy_native_benchmark(cfg: ExperimentConfig,
                              toy_spec: ToyDatasetSpec | None = None) -> Benchmark:
    """Object-segregated variant: per class, objects 0-4 train and 5-9
    test; no exclusion distance. Each batch still holds 50 sequences
    (two walks per object)."""
    walk = varspace.WalkConfig()
    train_objects = [c * 10 + i for c in range(5) for i in range(5)]
    test_objects = [c * 10 + i for c in range(5) for i in range(5, 10)]

    def walk_batches(objects, kind, tag):
        batches = []
        for b in range(1, cfg.n_batches + 1):
            sequences = []
            for rep in range(2):
                for obj in objects:
                    seed = derive_seed(cfg.master_seed, tag, b, obj, rep)
                    from .rng import XorShift128Plus
                    start = varspace.VariationPoint(
                        XorShift128Plus(derive_seed(seed, 0xA)).randrange(9),
                        XorShift128Plus(derive_seed(seed, 0xB)).randrange(18),
                        XorShift128Plus(derive_seed(seed, 0xC)).randrange(6))
                    wcfg = varspace.WalkConfig(
                        length=walk.length, dim_step_prob=walk.dim_step_prob,
                        flip_prob=walk.flip_prob, seed=seed)
                    sequences.append(varspace.FrameSequence(
                        object_id=obj,
                        class_id=varspace.class_of_object(obj, cfg.class_mode),
                        points=varspace.random_walk(wcfg, start)))
            batches.append(varspace.Batch(sequences=sequences, kind=kind, index=b))
        return batches

    spec = toy_spec or ToyDatasetSpec(seed=cfg.master_seed)
    return Benchmark(
        walk_batches(train_objects, "train", 0xAA),
        walk_batches(test_objects, "test", 0xBB),
        ToyFrameSource(spec), cfg.class_mode)
