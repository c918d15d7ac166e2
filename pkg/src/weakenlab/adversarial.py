"""FGSM / I-FGSM attacks and white-box / black-box robustness evaluation.

Attacks run in the model's (normalized) input space. ``clip_range`` is the
image of the raw pixel interval under the dataset normalization; see
:func:`weakenlab.data.valid_range`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .augment import Batch
from .data import Dataset, batches
from .models import Model
from .tensor import Tensor
from .train import cross_entropy, topk_hits

REPORT_HEADER = ["method", "attack", "mode", "epsilon", "accuracy"]


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "fgsm"
    epsilon: float = 0.1
    iterations: int = 1
    clip_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "clip_range", tuple(float(v) for v in self.clip_range))
        if self.kind not in ("fgsm", "ifgsm"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        # epsilon == 0 is accepted as a degenerate no-op attack.
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        lo, hi = self.clip_range
        if not lo < hi:
            raise ValueError(f"clip_range must satisfy lo < hi, got {self.clip_range}")

    @property
    def name(self) -> str:
        return "fgsm" if self.kind == "fgsm" else f"ifgsm{self.iterations}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "epsilon": self.epsilon, "iterations": self.iterations,
                "clip_range": list(self.clip_range)}


def input_gradient(model: Model, inputs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of the mean cross-entropy w.r.t. the inputs, model in evaluation mode."""
    x = Tensor(inputs, requires_grad=True)
    loss = cross_entropy(model.forward(x), labels)
    T.backward(loss)
    model.zero_grad()
    return x.grad


def fgsm(model: Model, batch: Batch, spec: AttackSpec) -> np.ndarray:
    if spec.kind != "fgsm":
        raise ValueError(f"fgsm called with a {spec.kind!r} spec")
    lo, hi = spec.clip_range
    g = input_gradient(model, batch.inputs, batch.labels)
    return np.clip(batch.inputs + spec.epsilon * np.sign(g), lo, hi)


def ifgsm(model: Model, batch: Batch, spec: AttackSpec) -> np.ndarray:
    """``iterations`` signed steps of size ``epsilon / iterations``, projected after each step."""
    if spec.kind != "ifgsm":
        raise ValueError(f"ifgsm called with a {spec.kind!r} spec")
    lo, hi = spec.clip_range
    step = spec.epsilon / spec.iterations
    x0 = batch.inputs
    ball_lo, ball_hi = x0 - spec.epsilon, x0 + spec.epsilon
    x = x0
    for _ in range(spec.iterations):
        g = input_gradient(model, x, batch.labels)
        x = np.clip(np.clip(x + step * np.sign(g), lo, hi), ball_lo, ball_hi)
    return x


def attack(model: Model, batch: Batch, spec: AttackSpec) -> np.ndarray:
    return fgsm(model, batch, spec) if spec.kind == "fgsm" else ifgsm(model, batch, spec)


def _adversarial_accuracy(source: Model, target: Model, data: Dataset, spec: AttackSpec,
                          batch_size: int) -> float:
    if len(data) == 0:
        return 0.0
    hits = 0
    for batch in batches(data, batch_size):
        x_adv = attack(source, batch, spec)
        hits += topk_hits(target.forward(x_adv).data, batch.hard_labels, 1)
    return 100.0 * hits / len(data)


def evaluate_whitebox(model: Model, data: Dataset, spec: AttackSpec, batch_size: int = 500) -> float:
    """Top-1 accuracy (%) on adversarial examples crafted against ``model`` itself."""
    return _adversarial_accuracy(model, model, data, spec, batch_size)


def evaluate_blackbox(source: Model, target: Model, data: Dataset, spec: AttackSpec,
                      batch_size: int = 500) -> float:
    """Top-1 accuracy (%) of ``target`` on adversarial examples crafted against ``source``."""
    if source.spec.input_shape != target.spec.input_shape:
        raise ValueError(f"source input shape {source.spec.input_shape} != target {target.spec.input_shape}")
    return _adversarial_accuracy(source, target, data, spec, batch_size)


def write_report(rows, path):
    """``rows`` are ``(method, attack, mode, epsilon, accuracy)`` tuples."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for method, attack_name, mode, eps, acc in rows:
            if mode not in ("white", "black"):
                raise ValueError(f"mode must be 'white' or 'black', got {mode!r}")
            writer.writerow([method, attack_name, mode, repr(float(eps)), repr(float(acc))])
