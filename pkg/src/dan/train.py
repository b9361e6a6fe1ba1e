"""Training loop, evaluation and the head-count ablation."""

from __future__ import annotations

import contextlib
import dataclasses
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import fcn
from .afn import LossWeights, combine
from .checkpoint import Checkpoint
from .config import RunConfig
from .data import AugmentConfig, Dataset, augment, balanced_sampler, batches, load_dataset, synth_dataset
from .functional import NonFiniteError, softmax
from .man import head_overlap
from .metrics import EpochLog, MetricsReport, build_report
from .model import DAN, build_model
from .optim import Optimizer, learning_rate
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 10007


class TrainingError(RuntimeError):
    pass


def load_data(config: RunConfig) -> tuple[Dataset, Optional[Dataset]]:
    d = config.data
    if d.kind == "synthetic":
        train = synth_dataset(d.classes, d.per_class, d.image_size, seed=d.seed, noise=d.noise)
        held_out = None
        if d.eval_per_class > 0:
            held_out = synth_dataset(d.classes, d.eval_per_class, d.image_size, seed=d.seed + EVAL_SEED_OFFSET, noise=d.noise)
        return train, held_out
    root = Path(d.root)
    n = config.model.num_classes
    train = load_dataset(root, root / d.train_manifest, d.image_size, num_classes=n)
    held_out = load_dataset(root, root / d.eval_manifest, d.image_size, num_classes=n) if d.eval_manifest else None
    return train, held_out


def deterministic_context(enabled: bool):
    return threadpool_limits(limits=1) if enabled else contextlib.nullcontext()


# ------------------------------------------------------------------ evaluation


@dataclass
class Collected:
    labels: np.ndarray
    scores: np.ndarray
    features: np.ndarray
    overlap: Optional[np.ndarray]
    losses: dict[str, float]


def collect(model: DAN, dataset: Dataset, weights: LossWeights, batch_size: int) -> Collected:
    """Eval-mode pass over ``dataset`` (no augmentation, running BN statistics).

    Loss components are reported at the scale of one training batch: the
    affinity sum is taken over the whole set and rescaled by
    ``batch_size / N``; the mean-form terms are sample-weighted means.
    """
    was_training = model.training
    model.eval()
    n = len(dataset)
    scores, feats = [], []
    overlap_sum = None
    dist_sum = 0.0
    pt_sum = 0.0
    cls_sum = 0.0
    K = model.config.num_heads
    with no_grad():
        for idx in batches(np.arange(n), batch_size):
            x = Tensor(dataset.images[idx])
            y = dataset.labels[idx]
            fwd = model(x)
            logits = fwd.logits.data
            scores.append(softmax(logits, axis=1))
            feats.append(fwd.features.data)
            c = model.centers.c.data
            diff = fwd.features.data - c.T[y]
            dist_sum += float((diff * diff).sum())
            losses = model.losses(fwd, y, LossWeights(0.0, 0.0))
            cls_sum += losses.classification.item() * len(idx)
            if K > 1:
                pt_sum += losses.partition.item() * len(idx)
                ov = head_overlap(fwd.man.spatial_gates) * len(idx)
                overlap_sum = ov if overlap_sum is None else overlap_sum + ov
    model.train(was_training)
    spread = fcn.center_variance(model.centers).item()
    af = dist_sum / spread * (batch_size / n)
    pt = pt_sum / n if K > 1 else 0.0
    cls = cls_sum / n
    losses = {
        "affinity": af,
        "partition": pt,
        "classification": cls,
        "total": combine(af, pt, cls, weights),
    }
    return Collected(
        labels=dataset.labels.copy(),
        scores=np.concatenate(scores),
        features=np.concatenate(feats),
        overlap=None if overlap_sum is None else overlap_sum / n,
        losses=losses,
    )


def evaluate_model(model: DAN, dataset: Dataset, weights: LossWeights, batch_size: int = 64) -> MetricsReport:
    if dataset.num_classes != model.config.num_classes:
        raise ValueError(
            f"dataset has {dataset.num_classes} classes but the model predicts {model.config.num_classes}"
        )
    got = collect(model, dataset, weights, batch_size)
    distance = fcn.normalized_center_distance(got.features, got.labels, model.centers)
    return build_report(got.labels, got.scores, dataset.class_names, got.losses, got.overlap, distance)


def evaluate(checkpoint, dataset: Dataset, batch_size: Optional[int] = None) -> MetricsReport:
    """Evaluate a checkpoint (object or path) on ``dataset``."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = Checkpoint.load(checkpoint)
    cfg = checkpoint.config
    model = checkpoint.build_model()
    with deterministic_context(cfg.deterministic):
        return evaluate_model(model, dataset, cfg.weights, batch_size or cfg.batch_size)


# -------------------------------------------------------------------- training


@dataclass
class TrainResult:
    config: RunConfig
    model: DAN
    optimizer: Optimizer
    history: list[dict] = field(default_factory=list)
    train_report: Optional[MetricsReport] = None
    eval_report: Optional[MetricsReport] = None
    checkpoint_path: Optional[Path] = None

    def checkpoint(self) -> Checkpoint:
        return Checkpoint.capture(self.config, self.model, self.optimizer, len(self.history))


def _first_non_finite(components: dict[str, float]) -> Optional[str]:
    for name, value in components.items():
        if not math.isfinite(value):
            return name
    return None


def _augmented_batch(dataset: Dataset, idx: np.ndarray, rng: np.random.Generator, aug: AugmentConfig) -> np.ndarray:
    if aug.flip_p <= 0 and aug.rotate_p <= 0 and aug.erase_p <= 0:
        return dataset.images[idx]
    return np.stack([augment(dataset[i], rng, aug).image for i in idx])


def train(
    config: RunConfig,
    out_dir=None,
    train_data: Optional[Dataset] = None,
    eval_data: Optional[Dataset] = None,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Train a model under ``config``.

    Writes ``metrics.csv`` (one row per epoch), ``report.json`` and
    ``checkpoint.bin`` into ``out_dir`` when given.
    """
    config.validate()
    if train_data is None:
        train_data, loaded_eval = load_data(config)
        eval_data = loaded_eval if eval_data is None else eval_data
    if train_data.num_classes != config.model.num_classes:
        raise ValueError(
            f"training data has {train_data.num_classes} classes, config expects {config.model.num_classes}"
        )
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        config.save(out / "config.ini")
    epoch_log = EpochLog(out / "metrics.csv") if out is not None else None

    aug = config.augment
    if aug.fill is None:
        aug = AugmentConfig(**{**aug.__dict__, "fill": tuple(float(v) for v in train_data.channel_mean())})

    with deterministic_context(config.deterministic):
        model = build_model(config.model, config.seed)
        optimizer = Optimizer(list(model.named_parameters()), config.optim)
        result = TrainResult(config, model, optimizer)
        epoch_size = config.epoch_size or len(train_data)
        steps_per_epoch = sum(1 for b in batches(np.arange(epoch_size), config.batch_size) if len(b) >= 2)
        total_steps = steps_per_epoch * config.epochs
        step = 0
        for epoch in range(1, config.epochs + 1):
            model.train()
            order = balanced_sampler(train_data, epoch_size, seed=hash_seed(config.seed, epoch, 0))
            rng = np.random.default_rng([config.seed, epoch, 1])
            sums = {"affinity": 0.0, "partition": 0.0, "classification": 0.0}
            correct = seen = n_batches = 0
            lr = config.optim.lr
            for idx in batches(order, config.batch_size):
                if len(idx) < 2:
                    continue
                x = Tensor(_augmented_batch(train_data, idx, rng, aug))
                y = train_data.labels[idx]
                try:
                    fwd = model(x)
                    losses = model.losses(fwd, y, config.weights)
                except NonFiniteError as exc:
                    raise TrainingError(f"non-finite activations at epoch {epoch}, step {step}: {exc}") from None
                comps = losses.components()
                bad = _first_non_finite({**comps, "total": losses.total.item()})
                if bad is not None:
                    raise TrainingError(f"non-finite {bad} loss at epoch {epoch}, step {step}: {comps}")
                optimizer.zero_grad()
                losses.total.backward()
                lr = learning_rate(config.optim, step, total_steps)
                optimizer.step(lr)
                step += 1
                for k in sums:
                    sums[k] += comps[k]
                n_batches += 1
                correct += int((fwd.logits.data.argmax(axis=1) == y).sum())
                seen += len(idx)
            means = {k: v / n_batches for k, v in sums.items()}
            row = {
                "epoch": epoch,
                "lr": lr,
                "train_affinity": means["affinity"],
                "train_partition": means["partition"],
                "train_classification": means["classification"],
                "train_total": combine(means["affinity"], means["partition"], means["classification"], config.weights),
                "train_accuracy": correct / seen,
            }
            if eval_data is not None:
                report = evaluate_model(model, eval_data, config.weights, config.batch_size)
                row.update(
                    eval_affinity=report.losses["affinity"],
                    eval_partition=report.losses["partition"],
                    eval_classification=report.losses["classification"],
                    eval_total=report.losses["total"],
                    eval_accuracy=report.accuracy,
                    eval_head_overlap=report.mean_head_overlap,
                    eval_center_distance=report.center_distance,
                )
                result.eval_report = report
            result.history.append(row)
            if epoch_log is not None:
                epoch_log.append(row)
            log.info(
                "epoch %d  loss %.4f  train acc %.4f  eval acc %s",
                epoch,
                row["train_total"],
                row["train_accuracy"],
                f"{row['eval_accuracy']:.4f}" if "eval_accuracy" in row else "-",
            )
            if on_epoch is not None:
                on_epoch(row)

        result.train_report = evaluate_model(model, train_data, config.weights, config.batch_size)

    if out is not None:
        result.checkpoint_path = result.checkpoint().save(out / "checkpoint.bin")
        report = {"train": result.train_report.to_dict()}
        if result.eval_report is not None:
            report["eval"] = result.eval_report.to_dict()
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return result


def hash_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


# -------------------------------------------------------------------- ablation

ABLATION_COLUMNS = ["num_heads", "params", "train_accuracy", "eval_accuracy", "mean_head_overlap"]


def ablate_heads(base: RunConfig, head_counts: Sequence[int], out_dir=None) -> list[dict]:
    """Train one model per head count (shared seed); K = 1 forces the partition weight to 0."""
    rows = []
    out = Path(out_dir) if out_dir is not None else None
    for k in head_counts:
        if k < 1:
            raise ValueError(f"head count must be >= 1, got {k}")
        weights = LossWeights(base.weights.affinity, 0.0) if k == 1 else base.weights
        cfg = base.replace(model=dataclasses.replace(base.model, num_heads=k), weights=weights)
        run_dir = out / f"K{k}" if out is not None else None
        res = train(cfg, run_dir)
        rows.append(
            {
                "num_heads": k,
                "params": res.model.num_parameters(),
                "train_accuracy": res.train_report.accuracy,
                "eval_accuracy": None if res.eval_report is None else res.eval_report.accuracy,
                "mean_head_overlap": None if res.eval_report is None else res.eval_report.mean_head_overlap,
            }
        )
    if out is not None:
        write_ablation_table(rows, out / "ablation_heads.csv")
    return rows


def write_ablation_table(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ABLATION_COLUMNS)
        for row in rows:
            writer.writerow(["" if row[c] is None else row[c] for c in ABLATION_COLUMNS])
    return path
