# # The augmentation transforms side by side
#
# Mixup, Cutout, CutMix and Dropout are the baselines that Feature Weaken is
# compared with. Here each is applied to a handful of real digits and shown
# as coarse ASCII art, together with the soft labels it produces.
#
# Run from the repository root:  python demos/02_transforms.py

from pathlib import Path

import numpy as np

from weakenlab.augment import (Batch, cutmix_with_info, cutout, dropout, feature_weaken_input, mixup,
                               one_hot)
from weakenlab.data import load_idx, subsample
from weakenlab.tensor import Tensor

DATA = Path(__file__).resolve().parents[1] / "data" / "mnist10k"
digits = subsample(load_idx(DATA / "images-idx3-ubyte.gz", DATA / "labels-idx1-ubyte.gz"), 4, seed=3)
batch = Batch(digits.inputs, one_hot(digits.labels, 10), 10)
rng = np.random.default_rng(0)
print("labels:", digits.labels.tolist())


def show(img, title):
    """Print a 14x14 downsample of a 28x28 image."""
    small = img[0].reshape(14, 2, 14, 2).mean(axis=(1, 3))
    shades = " .:-=+*#%@"
    print(title)
    for row in small:
        print("   " + "".join(shades[min(int(v * 10), 9)] for v in row))


show(batch.inputs[0], "original sample 0")

# Feature Weaken on the input: the same digit, only fainter.

show(feature_weaken_input(batch, 0.6).inputs[0], "weakened, ws=0.6")

# Mixup blends two digits and their labels with one lambda per batch.

mixed = mixup(batch, 1.0, rng)
show(mixed.inputs[0], "mixup")
print("   label mass:", {int(k): round(float(v), 3) for k, v in enumerate(mixed.labels[0]) if v > 0})

# Cutout zeros a square patch. The label is untouched.

show(cutout(batch, 12, rng, centers=np.array([[14, 14]] * 4)).inputs[0], "cutout, 12x12 patch at the center")

# CutMix pastes a box from a partner image. The label weight follows the
# pasted area. Lambda is pinned here so the box is big enough to see.

pasted, info = cutmix_with_info(batch, 1.0, rng, lam=0.6)
show(pasted.inputs[0], f"cutmix, lambda={info.lam:.3f}, box covers {int(info.mask.sum())} pixels")
print("   label mass:", {int(k): round(float(v), 3) for k, v in enumerate(pasted.labels[0]) if v > 0})

# Dropout acts on hidden units. Survivors are scaled up so the expected value
# is unchanged.

h = Tensor(np.ones((1, 20)))
print("dropout p=0.3 on a row of ones:", np.round(dropout(h, 0.3, rng).data[0], 2).tolist())
