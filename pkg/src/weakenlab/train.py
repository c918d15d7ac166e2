"""Training loop: soft-label cross-entropy, momentum SGD, step LR schedule, metrics."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .augment import AugmentSpec, Batch, apply_hidden, apply_pipeline
from .data import Dataset, batches
from .models import Model
from .tensor import Tensor

METRICS_HEADER = ["epoch", "train_loss", "val_top1", "val_top5", "lr", "wall_ms"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    milestone_epochs: tuple[int, ...] = (15, 22)
    milestone_gamma: float = 0.2
    seed: int = 0
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    # Wall time breaks byte-identical replays, so the CSV column is zero unless asked for.
    record_wall_time: bool = False

    def __post_init__(self):
        object.__setattr__(self, "milestone_epochs", tuple(int(m) for m in self.milestone_epochs))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0.0 < self.milestone_gamma <= 1.0:
            raise ValueError("milestone_gamma must lie in (0, 1]")
        m = self.milestone_epochs
        if any(b <= a for a, b in zip(m, m[1:])) or any(x >= self.epochs or x < 0 for x in m):
            raise ValueError(f"milestones must be strictly increasing and < epochs, got {list(m)}")

    @classmethod
    def desk_defaults(cls, epochs: int = 30, **overrides) -> TrainConfig:
        """Milestones at 50% and 75% of ``epochs``."""
        milestones = tuple(sorted({int(epochs * 0.5), int(epochs * 0.75)} - {0}))
        return cls(epochs=epochs, milestone_epochs=milestones, **overrides)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "augment"}
        d["milestone_epochs"] = list(self.milestone_epochs)
        d["augment"] = self.augment.to_dict()
        return d


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    train_loss: float
    val_top1: float
    val_top5: float
    lr_in_effect: float
    wall_time: float  # seconds

    def __post_init__(self):
        if not 0.0 <= self.val_top1 <= self.val_top5 <= 100.0:
            raise ValueError(f"inconsistent accuracies top1={self.val_top1} top5={self.val_top5}")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-sum_k labels * log_softmax(logits)``; labels may be soft."""
    labels = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=np.float64)
    if labels.shape != logits.shape:
        raise ValueError(f"logits {logits.shape} and labels {labels.shape} disagree")
    n = logits.shape[0]
    return T.scalar_mul(T.sum(T.mul(T.log_softmax(logits, axis=1), Tensor(labels))), -1.0 / n)


def sgd_step(params, state: dict, cfg: TrainConfig, lr: float | None = None):
    """``v = momentum*v + grad + wd*param``; ``param -= lr*v``; then clear gradients.

    ``params`` is a list of ``(name, Tensor)``; ``state`` maps names to velocity buffers.
    """
    lr = cfg.lr if lr is None else lr
    for name, p in params:
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient; run backward first")
    for name, p in params:
        v = state.get(name)
        step = p.grad + cfg.weight_decay * p.data
        v = step if v is None else cfg.momentum * v + step
        state[name] = v
        p.data = p.data - lr * v
        p.grad = None


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    passed = sum(1 for m in cfg.milestone_epochs if m <= epoch)
    return cfg.lr * cfg.milestone_gamma ** passed


def topk_hits(logits: np.ndarray, labels: np.ndarray, k: int) -> int:
    """Count rows whose label is among the ``k`` largest logits; ties favor lower class ids."""
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return int((order == np.asarray(labels)[:, None]).any(axis=1).sum())


def evaluate(model: Model, data: Dataset, batch_size: int = 1000) -> tuple[float, float]:
    """Clean Top-1 and Top-5 accuracy in percent; no training-time transforms apply."""
    if len(data) == 0:
        return 0.0, 0.0
    k5 = min(5, data.num_classes)
    hit1 = hit5 = 0
    for start in range(0, len(data), batch_size):
        logits = model.forward(data.inputs[start:start + batch_size]).data
        labels = data.labels[start:start + batch_size]
        hit1 += topk_hits(logits, labels, 1)
        hit5 += topk_hits(logits, labels, k5)
    return 100.0 * hit1 / len(data), 100.0 * hit5 / len(data)


def train_step(model: Model, batch: Batch, cfg: TrainConfig, opt_state: dict, lr: float,
               hidden_rng: np.random.Generator) -> float:
    rep = model.forward_features(batch.inputs)
    rep = apply_hidden(cfg.augment, rep, training=True, rng=hidden_rng)
    loss = cross_entropy(model.decision(rep), batch.labels)
    T.backward(loss)
    sgd_step(model.parameters(), opt_state, cfg, lr=lr)
    return loss.item()


def train(model: Model, train_data: Dataset, val_data: Dataset, cfg: TrainConfig,
          callback=None) -> list[MetricsRecord]:
    """Train in place and return one :class:`MetricsRecord` per epoch.

    Randomness comes from three streams spawned from ``cfg.seed``: batch order,
    input transforms and hidden transforms. Identical seeds reproduce the run
    bit for bit.
    """
    if len(train_data) == 0:
        raise ValueError("training data is empty")
    shuffle_ss, input_ss, hidden_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    input_rng = np.random.default_rng(input_ss)
    hidden_rng = np.random.default_rng(hidden_ss)
    opt_state: dict[str, np.ndarray] = {}
    history = []
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        lr = lr_at(epoch, cfg)
        total, seen = 0.0, 0
        epoch_seed = int(shuffle_rng.integers(2**63))
        for batch in batches(train_data, cfg.batch_size, shuffle_seed=epoch_seed):
            batch = apply_pipeline(cfg.augment, batch, rng=input_rng)
            total += train_step(model, batch, cfg, opt_state, lr, hidden_rng) * len(batch)
            seen += len(batch)
        top1, top5 = evaluate(model, val_data)
        record = MetricsRecord(epoch, total / seen, top1, top5, lr, time.perf_counter() - started)
        history.append(record)
        if callback is not None:
            callback(record)
    return history


def best_top1(history: list[MetricsRecord]) -> float:
    return max(r.val_top1 for r in history)


def metrics_csv(history: list[MetricsRecord], record_wall_time: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for r in history:
        wall_ms = int(round(r.wall_time * 1000)) if record_wall_time else 0
        writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_top1), repr(r.val_top5),
                         repr(r.lr_in_effect), wall_ms])
    return buf.getvalue()


def metrics_json(history: list[MetricsRecord], record_wall_time: bool = False) -> str:
    rows = []
    for r in history:
        row = asdict(r)
        row["wall_ms"] = int(round(r.wall_time * 1000)) if record_wall_time else 0
        del row["wall_time"]
        rows.append(row)
    return json.dumps(rows, indent=1)
