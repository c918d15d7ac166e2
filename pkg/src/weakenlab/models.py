"""Small classifiers split into a feature extractor and a linear decision layer.

The split point is the hidden-level tap: :meth:`Model.forward_features` returns
the representation that hidden transforms act on, and :meth:`Model.decision`
maps it to logits.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor

CHECKPOINT_MAGIC = b"WKLB"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """``kind="mlp"``: ``widths`` is ``[input, hidden..., classes]``.

    ``kind="small_cnn"``: ``channels`` are the two conv widths, ``widths`` is
    ``[hidden, classes]`` for the fully connected part.
    """

    kind: str = "mlp"
    widths: tuple[int, ...] = (784, 256, 128, 10)
    channels: tuple[int, ...] = ()
    input_shape: tuple[int, ...] = (1, 28, 28)
    init_seed: int = 0
    head_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if self.kind not in ("mlp", "small_cnn"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if any(w < 1 for w in self.widths + self.channels):
            raise ValueError("layer widths and channel counts must be >= 1")
        if self.num_classes < 2:
            raise ValueError("class count must be >= 2")
        if self.kind == "mlp":
            if len(self.widths) < 2:
                raise ValueError("mlp needs at least [input, classes] widths")
            if int(np.prod(self.input_shape)) != self.widths[0]:
                raise ValueError(f"input shape {self.input_shape} has {int(np.prod(self.input_shape))} "
                                 f"features but widths[0] = {self.widths[0]}")
        else:
            if len(self.channels) != 2 or len(self.widths) != 2:
                raise ValueError("small_cnn needs 2 channel counts and [hidden, classes] widths")
            if len(self.input_shape) != 3:
                raise ValueError("small_cnn needs a (C, H, W) input shape")
            _, h, w = self.input_shape
            if h % 4 or w % 4:
                raise ValueError(f"small_cnn needs H and W divisible by 4, got {h}x{w}")

    @property
    def num_classes(self) -> int:
        return self.widths[-1]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "widths": list(self.widths), "channels": list(self.channels),
                "input_shape": list(self.input_shape), "init_seed": self.init_seed,
                "head_bias": self.head_bias}


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _linear(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    out = T.matmul(x, w)
    return T.add(out, b) if b is not None else out


@dataclass
class Model:
    spec: ModelSpec
    params: dict[str, Tensor] = field(default_factory=dict)

    @property
    def rep_width(self) -> int:
        return self.params["head.weight"].shape[0]

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    def parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def forward_features(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if tuple(x.shape[1:]) != self.spec.input_shape:
            raise ValueError(f"expected inputs of shape [N, {', '.join(map(str, self.spec.input_shape))}], "
                             f"got {list(x.shape)}")
        p = self.params
        if self.spec.kind == "mlp":
            h = T.flatten(x)
            for i in range(len(self.spec.widths) - 2):
                h = T.relu(_linear(h, p[f"fc{i}.weight"], p[f"fc{i}.bias"]))
            return h
        h = x
        for i in range(2):
            h = T.conv2d(h, p[f"conv{i}.weight"], stride=1, padding=1)
            h = T.add(h, p[f"conv{i}.bias"])
            h = T.max_pool2d(T.relu(h), 2)
        return T.relu(_linear(T.flatten(h), p["fc0.weight"], p["fc0.bias"]))

    def decision(self, rep: Tensor) -> Tensor:
        if rep.ndim != 2 or rep.shape[1] != self.rep_width:
            raise ValueError(f"decision layer expects [N, {self.rep_width}] representations, got {list(rep.shape)}")
        return _linear(rep, self.params["head.weight"], self.params.get("head.bias"))

    def forward(self, x, tap: Callable[[Tensor], Tensor] | None = None) -> Tensor:
        rep = self.forward_features(x)
        if tap is not None:
            rep = tap(rep)
        return self.decision(rep)

    __call__ = forward

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        if set(state) != set(self.params):
            raise ValueError(f"parameter names differ: {sorted(set(state) ^ set(self.params))}")
        for name, value in state.items():
            if value.shape != self.params[name].shape:
                raise ValueError(f"{name}: shape {value.shape} != {self.params[name].shape}")
            self.params[name] = Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def build(spec: ModelSpec) -> Model:
    rng = np.random.default_rng(spec.init_seed)
    params: dict[str, Tensor] = {}
    if spec.kind == "mlp":
        dims = spec.widths
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-2], dims[1:-1])):
            params[f"fc{i}.weight"] = _kaiming_uniform(rng, (fan_in, fan_out), fan_in)
            params[f"fc{i}.bias"] = Tensor(np.zeros(fan_out), requires_grad=True)
        rep = dims[-2]
    else:
        c, h, w = spec.input_shape
        c1, c2 = spec.channels
        for i, (cin, cout) in enumerate(((c, c1), (c1, c2))):
            params[f"conv{i}.weight"] = _kaiming_uniform(rng, (cout, cin, 3, 3), cin * 9)
            params[f"conv{i}.bias"] = Tensor(np.zeros((cout, 1, 1)), requires_grad=True)
        flat = c2 * (h // 4) * (w // 4)
        rep = spec.widths[0]
        params["fc0.weight"] = _kaiming_uniform(rng, (flat, rep), flat)
        params["fc0.bias"] = Tensor(np.zeros(rep), requires_grad=True)
    params["head.weight"] = _kaiming_uniform(rng, (rep, spec.num_classes), rep)
    if spec.head_bias:
        params["head.bias"] = Tensor(np.zeros(spec.num_classes), requires_grad=True)
    return Model(spec, params)


def expected_parameter_count(spec: ModelSpec) -> int:
    """Parameter count implied by the spec's declared shapes."""
    if spec.kind == "mlp":
        w = spec.widths
        total = sum(a * b + b for a, b in zip(w[:-1], w[1:]))
    else:
        c, h, wd = spec.input_shape
        c1, c2 = spec.channels
        hidden, k = spec.widths
        flat = c2 * (h // 4) * (wd // 4)
        total = (c * 9 * c1 + c1) + (c1 * 9 * c2 + c2) + (flat * hidden + hidden) + (hidden * k + k)
    return total if spec.head_bias else total - spec.num_classes


def spec_from_state(state: dict[str, np.ndarray], input_shape) -> ModelSpec:
    """Recover the architecture from checkpoint tensor names and shapes."""
    input_shape = tuple(int(s) for s in input_shape)
    head_bias = "head.bias" in state
    k = state["head.weight"].shape[1]
    if "conv0.weight" in state:
        channels = (state["conv0.weight"].shape[0], state["conv1.weight"].shape[0])
        return ModelSpec("small_cnn", (state["fc0.weight"].shape[1], k), channels, input_shape,
                         head_bias=head_bias)
    widths = [state[f"fc{i}.weight"].shape[0] for i in range(len(state)) if f"fc{i}.weight" in state]
    widths += [state["head.weight"].shape[0], k]
    return ModelSpec("mlp", tuple(widths), (), input_shape, head_bias=head_bias)


def save_checkpoint(model: Model, path):
    """Write parameters as ``WKLB`` records: name, rank, u32 dims, little-endian f64 data."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    for name, p in model.params.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", p.data.ndim))
        chunks.append(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a WKLB checkpoint")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 8
    state: dict[str, np.ndarray] = {}
    try:
        while pos < len(raw):
            (name_len,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            count = int(np.prod(dims))
            if pos + 8 * count > len(raw):
                raise ValueError(f"{path}: truncated data for {name!r}")
            state[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise ValueError(f"{path}: truncated checkpoint") from exc
    return state
