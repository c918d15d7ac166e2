# # Adversarial robustness of a weakened model
#
# Two MLPs, one baseline and one trained with hidden-level weakening, are
# attacked with FGSM and iterative FGSM. White-box attacks use each model's
# own gradients. Black-box attacks craft the examples on the baseline and
# replay them against the other model. The budget epsilon is measured in
# normalized input units.
#
# Run from the repository root:  python demos/04_robustness.py

from dataclasses import replace
from pathlib import Path

import numpy as np

from weakenlab.adversarial import AttackSpec, attack, evaluate_blackbox, evaluate_whitebox
from weakenlab.augment import AugmentSpec, Batch, Transform, one_hot
from weakenlab.config import DataConfig, load_datasets
from weakenlab.data import valid_range
from weakenlab.models import ModelSpec, build
from weakenlab.train import TrainConfig, evaluate, train

ROOT = Path(__file__).resolve().parents[1]
data = DataConfig(images="data/mnist10k/images-idx3-ubyte.gz", labels="data/mnist10k/labels-idx1-ubyte.gz",
                  train_size=2000, val_size=500)
train_set, val_set = load_datasets(data, ROOT)
spec = ModelSpec("mlp", widths=(784, 256, 128, 10), input_shape=(1, 28, 28))
cfg = TrainConfig.desk_defaults(10)

models = {}
for name, augment in (("baseline", AugmentSpec()),
                      ("FW-hl", AugmentSpec(hidden_transforms=[Transform("feature_weaken_hidden", ws=0.8)]))):
    models[name] = build(spec)
    train(models[name], train_set, val_set, replace(cfg, augment=augment))
    print(f"{name:>8}: clean top-1 {evaluate(models[name], val_set)[0]:.1f}%")

# The attack keeps pixels inside the valid range, expressed after
# normalization.

lo, hi = valid_range(val_set)
print(f"valid input range after normalization: [{lo:.3f}, {hi:.3f}]")

# Accuracy as the budget grows.

print("\n  eps   " + "".join(f"{m + ' ' + a:>20}" for m in models for a in ("fgsm", "ifgsm10")))
for eps in (0.05, 0.1, 0.3, 0.5):
    row = []
    for name, model in models.items():
        for kind, iters in (("fgsm", 1), ("ifgsm", 10)):
            row.append(evaluate_whitebox(model, val_set, AttackSpec(kind, eps, iters, (lo, hi))))
    print(f"  {eps:<5} " + "".join(f"{v:19.1f}%" for v in row))

# Black-box transfer: examples crafted on the baseline.

spec_bb = AttackSpec("fgsm", 0.3, 1, (lo, hi))
for name, model in models.items():
    print(f"black-box FGSM eps=0.3 from baseline -> {name}: "
          f"{evaluate_blackbox(models['baseline'], model, val_set, spec_bb):.1f}%")

# Every adversarial image stays within the budget.

batch = Batch(val_set.inputs[:100], one_hot(val_set.labels[:100], 10), 10)
adv = attack(models["FW-hl"], batch, AttackSpec("ifgsm", 0.3, 10, (lo, hi)))
print(f"max |x_adv - x| = {np.abs(adv - batch.inputs).max():.6f} (budget 0.3)")
