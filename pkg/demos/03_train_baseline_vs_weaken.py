# # Training with and without Feature Weaken
#
# A short version of the desk-scale experiment: the same MLP trained on a
# 2,000-digit MNIST subset as a baseline, with hidden-level weakening (the
# representation before the decision layer is scaled during training) and
# with input-level weakening. Evaluation never weakens.
#
# Run from the repository root:  python demos/03_train_baseline_vs_weaken.py
# The full 30-epoch, three-seed comparison lives in configs/desk_mnist.json:
#   weakenlab train --config configs/desk_mnist.json --out runs/desk

from dataclasses import replace
from pathlib import Path

import numpy as np

from weakenlab.augment import AugmentSpec, Transform
from weakenlab.config import DataConfig, load_datasets
from weakenlab.models import ModelSpec, build
from weakenlab.train import TrainConfig, best_top1, train

ROOT = Path(__file__).resolve().parents[1]
data = DataConfig(images="data/mnist10k/images-idx3-ubyte.gz", labels="data/mnist10k/labels-idx1-ubyte.gz",
                  train_size=2000, val_size=500)
train_set, val_set = load_datasets(data, ROOT)
print(f"{len(train_set)} training / {len(val_set)} validation digits")

spec = ModelSpec("mlp", widths=(784, 256, 128, 10), input_shape=(1, 28, 28))
base_cfg = TrainConfig.desk_defaults(10)

methods = {
    "baseline": AugmentSpec(),
    "FW-hl ws=0.8": AugmentSpec(hidden_transforms=[Transform("feature_weaken_hidden", ws=0.8)]),
    "FW-el ws=0.5": AugmentSpec(input_transforms=[Transform("feature_weaken_input", ws=0.5)]),
}

# Train each method from the same initialization and batch order.

curves = {}
for name, augment in methods.items():
    model = build(spec)
    history = train(model, train_set, val_set, replace(base_cfg, augment=augment))
    curves[name] = history
    print(f"{name:>14}: best top-1 {best_top1(history):5.1f}%   final loss {history[-1].train_loss:.4f}")

# Hidden-level weakening leaves a higher training loss: the shrunken
# representation gives less confident logits during training. Input-level
# weakening only rescales the data, which the first layer can absorb.

print("\nepoch " + "".join(f"{name:>16}" for name in curves))
for epoch in range(base_cfg.epochs):
    print(f"{epoch:5d} " + "".join(f"{curves[n][epoch].val_top1:15.1f}%" for n in curves))

tail = {n: np.std([r.val_top1 for r in h[-5:]]) for n, h in curves.items()}
print("\nstd of val top-1 over the last 5 epochs:", {n: round(float(v), 3) for n, v in tail.items()})
