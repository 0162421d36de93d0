"""SGD training loop: stepped learning-rate decay, momentum + weight decay,
validation-monitored best-checkpoint selection, training-set fraction
subsampling, and multi-scale training for SPP networks.

The loop is strictly sequential, so a fixed seed reproduces the run
bit-for-bit (the same guarantee the single-threaded pipeline mode promises).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import augment, imaging, network
from .data import Dataset, Pipeline


class DivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, update: int, loss: float):
        super().__init__(
            f"training diverged at update {update}: loss={loss}")
        self.update = update
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    total_updates: int = 500_000
    base_lr: float = 0.003
    lr_step: int = 150_000
    lr_decay: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    transform: augment.TransformSpec | None = None
    ar_policy: augment.ARPolicy = augment.ARPolicy("warp")
    representation: imaging.RepresentationSpec = imaging.RepresentationSpec(("G",))
    scale_sizes: tuple | None = None   # multi-scale training sizes
    train_fraction: float = 1.0
    validation_interval: int = 500

    def __post_init__(self):
        for name in ("batch_size", "total_updates", "lr_step",
                     "validation_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError(
                f"train_fraction must be in (0, 1], got {self.train_fraction}")
        if self.scale_sizes is not None:
            object.__setattr__(self, "scale_sizes", tuple(self.scale_sizes))
            if not self.scale_sizes:
                raise ValueError("scale_sizes must be non-empty when given")


@dataclass(frozen=True)
class TrainRecord:
    update: int
    loss: float
    val_accuracy: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    best_index: int = -1

    @property
    def best(self) -> TrainRecord:
        return self.records[self.best_index]

    def to_csv(self, path: str):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["update", "loss", "val_accuracy"])
            for r in self.records:
                w.writerow([r.update, f"{r.loss:.6f}", f"{r.val_accuracy:.6f}"])

    @classmethod
    def from_csv(cls, path: str) -> "TrainLog":
        log = cls()
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            next(reader)
            for rec in reader:
                log.records.append(TrainRecord(int(rec[0]), float(rec[1]),
                                               float(rec[2])))
        if log.records:
            log.best_index = int(np.argmax([r.val_accuracy for r in log.records]))
        return log


def lr_at(update: int, config: TrainConfig) -> float:
    """Stepped decay: base * decay^floor(update / step)."""
    if update < 0:
        raise ValueError(f"update index must be >= 0, got {update}")
    return config.base_lr * config.lr_decay ** (update // config.lr_step)


def sgd_step(model: network.Model, grads: dict, lr: float, momentum: float,
             weight_decay: float, velocity: dict):
    """v <- mu*v - lr*(g + lambda*w); w <- w + v, applied in place."""
    for name, w in model.params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(
                f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        v = velocity[name]
        v *= momentum
        v -= lr * (g + weight_decay * w)
        w += v
    return model


def subsample_train_items(items, fraction: float, seed: int):
    """First ceil(fraction*N) items of a seeded shuffle of the train split."""
    if fraction >= 1.0:
        return list(items)
    keep = math.ceil(fraction * len(items))
    order = np.random.default_rng([seed, 0xF5A5]).permutation(len(items))
    return [items[i] for i in order[:keep]]


def _validation_accuracy(model, pipeline, items) -> float:
    correct = 0
    for item in items:
        x = pipeline.eval_example(item)
        probs = network.forward(model, x[None])
        if int(np.argmax(probs[0])) == item.label_index:
            correct += 1
    return correct / len(items)


def _batch_loss_and_grads(model, xs, labels, rng):
    """Forward/backward over one mini-batch, grouping by input size so that
    multi-scale batches stay batched per size. Loss and grads are the mean
    over the whole batch."""
    groups = {}
    for x, label in zip(xs, labels):
        groups.setdefault(x.shape, []).append((x, label))
    total = len(xs)
    loss = 0.0
    grads = None
    for members in groups.values():
        bx = np.stack([m[0] for m in members])
        by = np.array([m[1] for m in members], dtype=np.int64)
        g_loss, _, g_grads = network.loss_and_grads(model, bx, by,
                                                    mode="train", rng=rng)
        scale = len(members) / total
        loss += scale * g_loss
        if grads is None:
            grads = {k: scale * v for k, v in g_grads.items()}
        else:
            for k, v in g_grads.items():
                grads[k] += scale * v
    return loss, grads


def train(model: network.Model, dataset: Dataset, config: TrainConfig,
          pipeline: Pipeline | None = None, progress=None):
    """Run exactly config.total_updates SGD steps.

    Per step: sample a mini-batch (per-epoch reshuffle with a derived seed),
    run AR policy -> representation -> augmentation -> normalization, forward
    in train mode, backward, SGD update. Validation accuracy is measured
    every validation_interval updates (and at the final update); the best
    parameters are retained and returned as a Checkpoint. progress, when
    given, is called with each TrainRecord as it is logged.
    """
    train_items = dataset.split("train")
    val_items = dataset.split("val")
    if not train_items or not val_items:
        raise ValueError("dataset needs non-empty train and val splits")
    train_items = subsample_train_items(train_items, config.train_fraction,
                                        config.seed)
    if pipeline is None:
        pipeline = Pipeline(config.representation, config.ar_policy,
                            model.spec.input_size)
    if pipeline.channel_means is None:
        pipeline.set_channel_means(pipeline.compute_channel_means(train_items))

    if config.scale_sizes and not model.spec.has_spp:
        raise ValueError(
            "multi-scale training requires a network with spp pooling")

    batch_size = min(config.batch_size, len(train_items))
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    dropout_rng = np.random.default_rng([config.seed, 0xD0])

    log = TrainLog()
    best_acc = -1.0
    best_model = None
    best_update = 0
    interval_losses = []

    update = 0
    epoch = 0
    while update < config.total_updates:
        epoch_rng = np.random.default_rng([config.seed, 0xE0C, epoch])
        order = epoch_rng.permutation(len(train_items))
        n_batches = max(1, len(order) // batch_size)
        for b in range(n_batches):
            if update >= config.total_updates:
                break
            idx = order[b * batch_size:(b + 1) * batch_size]
            xs, labels = [], []
            for i in idx:
                item = train_items[i]
                size = None
                if config.scale_sizes:
                    size = augment.sample_scale(config.scale_sizes, epoch_rng)
                xs.append(pipeline.train_example(item, epoch_rng,
                                                 config.transform, size=size))
                labels.append(item.label_index)
            loss, grads = _batch_loss_and_grads(model, xs, labels, dropout_rng)
            if not np.isfinite(loss):
                raise DivergedError(update, loss)
            sgd_step(model, grads, lr_at(update, config), config.momentum,
                     config.weight_decay, velocity)
            interval_losses.append(loss)
            update += 1
            if update % config.validation_interval == 0 \
                    or update == config.total_updates:
                acc = _validation_accuracy(model, pipeline, val_items)
                record = TrainRecord(update, float(np.mean(interval_losses)), acc)
                log.records.append(record)
                interval_losses = []
                if acc > best_acc:
                    best_acc = acc
                    best_model = model.copy()
                    best_update = update
                    log.best_index = len(log.records) - 1
                if progress is not None:
                    progress(record)
        epoch += 1

    meta = {
        "update_count": best_update,
        "val_accuracy": best_acc,
        "seed": config.seed,
        "channel_means": [float(v) for v in pipeline.channel_means],
    }
    return log, network.Checkpoint(best_model, meta)


def train_multiscale(model: network.Model, dataset: Dataset,
                     config: TrainConfig, pipeline: Pipeline | None = None,
                     progress=None):
    """Multi-scale training: per-image input sizes drawn uniformly from
    config.scale_sizes. The model must use spp pooling."""
    if not model.spec.has_spp:
        raise ValueError(
            "multi-scale training requires a network with spp pooling")
    if not config.scale_sizes:
        raise ValueError("config.scale_sizes must list the training sizes")
    return train(model, dataset, config, pipeline, progress)
