"""Sample- and representation-space transforms.

Input transforms act on a :class:`Batch` of raw arrays before the forward pass:
Feature Weaken at the embedding level, Mixup, Cutout and CutMix. Hidden
transforms act on the representation tensor at the model's tap point, so
gradients flow through them: Feature Weaken at the hidden level and Dropout.

Every random transform takes an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

INPUT_KINDS = ("mixup", "cutout", "cutmix", "feature_weaken_input")
HIDDEN_KINDS = ("feature_weaken_hidden", "dropout")


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray  # [N, ...]
    labels: np.ndarray  # [N, K] soft-label rows
    class_count: int

    def __post_init__(self):
        if len(self.inputs) < 1:
            raise ValueError("a batch needs at least one sample")
        if self.labels.shape != (len(self.inputs), self.class_count):
            raise ValueError(f"labels must have shape ({len(self.inputs)}, {self.class_count}), "
                             f"got {self.labels.shape}")

    def __len__(self):
        return len(self.inputs)

    @property
    def hard_labels(self) -> np.ndarray:
        return self.labels.argmax(axis=1)


@dataclass(frozen=True)
class Transform:
    """One pipeline step, e.g. ``Transform("mixup", alpha=0.4)``."""

    kind: str
    params: dict = field(default_factory=dict)

    def __init__(self, kind: str, **params):
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", dict(params))

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> Transform:
        d = dict(d)
        return cls(d.pop("kind"), **d)


_REQUIRED = {
    "mixup": ("alpha",),
    "cutmix": ("alpha",),
    "cutout": ("patch_length",),
    "feature_weaken_input": ("ws",),
    "feature_weaken_hidden": ("ws",),
    "dropout": ("p",),
}


def _check_ws(ws: float):
    if not 0.0 < ws < 1.0:
        raise ValueError(f"weaken strength must lie in (0, 1), got {ws}")


def _check_transform(t: Transform, allowed: Sequence[str]):
    if t.kind not in allowed:
        raise ValueError(f"transform {t.kind!r} not allowed here; expected one of {list(allowed)}")
    expected = set(_REQUIRED[t.kind])
    if set(t.params) != expected:
        raise ValueError(f"{t.kind}: expected parameters {sorted(expected)}, got {sorted(t.params)}")
    if t.kind in ("mixup", "cutmix") and not t.params["alpha"] > 0:
        raise ValueError(f"{t.kind}: alpha must be > 0")
    if t.kind == "cutout" and (int(t.params["patch_length"]) != t.params["patch_length"]
                               or t.params["patch_length"] < 1):
        raise ValueError("cutout: patch_length must be an integer >= 1")
    if t.kind.startswith("feature_weaken"):
        _check_ws(t.params["ws"])
    if t.kind == "dropout" and not 0.0 <= t.params["p"] < 1.0:
        raise ValueError("dropout: p must lie in [0, 1)")


@dataclass(frozen=True)
class AugmentSpec:
    input_transforms: tuple[Transform, ...] = ()
    hidden_transforms: tuple[Transform, ...] = ()
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_transforms", tuple(self.input_transforms))
        object.__setattr__(self, "hidden_transforms", tuple(self.hidden_transforms))
        for t in self.input_transforms:
            _check_transform(t, INPUT_KINDS)
        for t in self.hidden_transforms:
            _check_transform(t, HIDDEN_KINDS)
        mixing = [t.kind for t in self.input_transforms if t.kind in ("mixup", "cutmix")]
        if len(mixing) > 1:
            raise ValueError(f"label-mixing transforms do not stack: {mixing}")

    def to_dict(self) -> dict:
        return {
            "input_transforms": [t.to_dict() for t in self.input_transforms],
            "hidden_transforms": [t.to_dict() for t in self.hidden_transforms],
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> AugmentSpec:
        unknown = set(d) - {"input_transforms", "hidden_transforms", "rng_seed"}
        if unknown:
            raise ValueError(f"unknown augment keys: {sorted(unknown)}")
        return cls(
            tuple(Transform.from_dict(t) for t in d.get("input_transforms", ())),
            tuple(Transform.from_dict(t) for t in d.get("hidden_transforms", ())),
            int(d.get("rng_seed", 0)),
        )


def feature_weaken_input(batch: Batch, ws: float) -> Batch:
    _check_ws(ws)
    return replace(batch, inputs=(1.0 - ws) * batch.inputs)


def feature_weaken_hidden(rep: Tensor, ws: float, training: bool = True) -> Tensor:
    """Shrink the representation by ``1 - ws`` on the tape; identity outside training."""
    _check_ws(ws)
    if not training:
        return rep
    return T.scalar_mul(rep, 1.0 - ws)


def _require_pair(batch: Batch, name: str):
    if len(batch) < 2:
        raise ValueError(f"{name} needs at least 2 samples, got {len(batch)}")


def _require_spatial(batch: Batch, name: str):
    if batch.inputs.ndim != 4:
        raise ValueError(f"{name} needs [N, C, H, W] inputs, got shape {batch.inputs.shape}")


def mixup(batch: Batch, alpha: float, rng: np.random.Generator, *, lam: float | None = None,
          perm: np.ndarray | None = None) -> Batch:
    """Convex combination of each sample with a randomly permuted partner.

    One ``lam ~ Beta(alpha, alpha)`` is drawn per batch; ``lam`` and ``perm``
    may be forced for testing.
    """
    _require_pair(batch, "mixup")
    if not alpha > 0:
        raise ValueError("mixup: alpha must be > 0")
    drawn_lam = rng.beta(alpha, alpha)
    drawn_perm = rng.permutation(len(batch))
    lam = drawn_lam if lam is None else float(lam)
    perm = drawn_perm if perm is None else np.asarray(perm)
    inputs = lam * batch.inputs + (1.0 - lam) * batch.inputs[perm]
    labels = lam * batch.labels + (1.0 - lam) * batch.labels[perm]
    return replace(batch, inputs=inputs, labels=labels)


def _clipped_interval(center: int, length: int, size: int) -> tuple[int, int]:
    lo = center - length // 2
    return max(lo, 0), min(lo + length, size)


def cutout_mask(height: int, width: int, cy: int, cx: int, patch_length: int) -> np.ndarray:
    """Boolean ``[H, W]`` mask of the square patch centered at ``(cy, cx)``, clipped to the image."""
    mask = np.zeros((height, width), dtype=bool)
    y0, y1 = _clipped_interval(cy, patch_length, height)
    x0, x1 = _clipped_interval(cx, patch_length, width)
    mask[y0:y1, x0:x1] = True
    return mask


def cutout(batch: Batch, patch_length: int, rng: np.random.Generator, *,
           centers: np.ndarray | None = None) -> Batch:
    _require_spatial(batch, "cutout")
    if patch_length < 1:
        raise ValueError("cutout: patch_length must be >= 1")
    n, _, h, w = batch.inputs.shape
    drawn = np.stack([rng.integers(0, h, size=n), rng.integers(0, w, size=n)], axis=1)
    centers = drawn if centers is None else np.asarray(centers).reshape(n, 2)
    inputs = batch.inputs.copy()
    for i, (cy, cx) in enumerate(centers):
        inputs[i][:, cutout_mask(h, w, int(cy), int(cx), patch_length)] = 0.0
    return replace(batch, inputs=inputs)


@dataclass(frozen=True)
class CutMixInfo:
    lam: float  # Beta draw before clipping
    lam_adjusted: float  # 1 - clipped box area / (H * W)
    mask: np.ndarray  # [H, W], True where partner pixels were pasted
    perm: np.ndarray


def cutmix_box(height: int, width: int, lam: float, cy: int, cx: int) -> np.ndarray:
    """Mask of a ``H*sqrt(1-lam)`` by ``W*sqrt(1-lam)`` box centered at ``(cy, cx)``, clipped."""
    ratio = math.sqrt(1.0 - lam)
    mask = np.zeros((height, width), dtype=bool)
    y0, y1 = _clipped_interval(cy, int(height * ratio), height)
    x0, x1 = _clipped_interval(cx, int(width * ratio), width)
    mask[y0:y1, x0:x1] = True
    return mask


def cutmix_with_info(batch: Batch, alpha: float, rng: np.random.Generator, *,
                     lam: float | None = None, center: tuple[int, int] | None = None,
                     perm: np.ndarray | None = None) -> tuple[Batch, CutMixInfo]:
    _require_pair(batch, "cutmix")
    _require_spatial(batch, "cutmix")
    if not alpha > 0:
        raise ValueError("cutmix: alpha must be > 0")
    n, _, h, w = batch.inputs.shape
    drawn_lam = rng.beta(alpha, alpha)
    drawn_perm = rng.permutation(n)
    drawn_center = (int(rng.integers(0, h)), int(rng.integers(0, w)))
    lam = drawn_lam if lam is None else float(lam)
    perm = drawn_perm if perm is None else np.asarray(perm)
    cy, cx = drawn_center if center is None else center

    mask = cutmix_box(h, w, lam, cy, cx)
    lam_adj = 1.0 - mask.sum() / (h * w)
    inputs = np.where(mask, batch.inputs[perm], batch.inputs)
    labels = lam_adj * batch.labels + (1.0 - lam_adj) * batch.labels[perm]
    return replace(batch, inputs=inputs, labels=labels), CutMixInfo(lam, lam_adj, mask, perm)


def cutmix(batch: Batch, alpha: float, rng: np.random.Generator, **overrides) -> Batch:
    return cutmix_with_info(batch, alpha, rng, **overrides)[0]


def dropout(rep: Tensor, p: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout: zero with probability ``p``, scale survivors by ``1 / (1 - p)``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return rep
    keep = rng.random(rep.shape) >= p
    return T.mul(rep, Tensor(keep / (1.0 - p)))


def apply_pipeline(spec: AugmentSpec, batch: Batch, rng: np.random.Generator | None = None) -> Batch:
    """Run the input transforms in order.

    Without an explicit ``rng`` a fresh generator seeded from ``spec.rng_seed``
    is used, so repeated calls give identical output.
    """
    if rng is None:
        rng = np.random.default_rng(spec.rng_seed)
    for t in spec.input_transforms:
        if t.kind == "mixup":
            batch = mixup(batch, t.params["alpha"], rng)
        elif t.kind == "cutmix":
            batch = cutmix(batch, t.params["alpha"], rng)
        elif t.kind == "cutout":
            batch = cutout(batch, int(t.params["patch_length"]), rng)
        elif t.kind == "feature_weaken_input":
            batch = feature_weaken_input(batch, t.params["ws"])
    return batch


def apply_hidden(spec: AugmentSpec, rep: Tensor, training: bool,
                 rng: np.random.Generator | None = None) -> Tensor:
    if not training:
        return rep
    if rng is None:
        rng = np.random.default_rng(spec.rng_seed)
    for t in spec.hidden_transforms:
        if t.kind == "feature_weaken_hidden":
            rep = feature_weaken_hidden(rep, t.params["ws"], training=True)
        elif t.kind == "dropout":
            rep = dropout(rep, t.params["p"], rng, training=True)
    return rep
