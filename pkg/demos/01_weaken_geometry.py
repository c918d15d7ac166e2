# # What weakening does to a feature vector
#
# Feature Weaken multiplies a sample's features by (1 - ws). The direction of
# the vector is kept and only its length shrinks, so every class cloud is
# pulled toward the origin while its shape stays the same.
#
# Run from the repository root:  python demos/01_weaken_geometry.py

from pathlib import Path

import numpy as np

from weakenlab.augment import Batch, feature_weaken_input, one_hot
from weakenlab.data import Dataset, SyntheticSpec, export_scatter, synthetic_blobs

OUT = Path(__file__).resolve().parent / "output"
OUT.mkdir(exist_ok=True)

# Three Gaussian blobs in 3-d, 60 points each.

blobs = synthetic_blobs(SyntheticSpec(classes=3, dims=3, samples_per_class=60, mean_scale=4.0, seed=7))
batch = Batch(blobs.inputs, one_hot(blobs.labels, 3), 3)

# Weaken with a few strengths and look at angles and lengths.

for ws in (0.2, 0.5, 0.8):
    weak = feature_weaken_input(batch, ws).inputs
    cos = np.sum(blobs.inputs * weak, axis=1) / (
        np.linalg.norm(blobs.inputs, axis=1) * np.linalg.norm(weak, axis=1))
    ratio = np.linalg.norm(weak, axis=1) / np.linalg.norm(blobs.inputs, axis=1)
    print(f"ws={ws}:  cosine in [{cos.min():.15f}, {cos.max():.15f}]  "
          f"length ratio {ratio.mean():.3f} (expected {1 - ws:.3f})")

# Class centroids move toward the origin by the same factor, so the spread
# between classes shrinks. That is the smaller-margin training set the model
# now has to fit.

for ws in (0.0, 0.8):
    weak = (1 - ws) * blobs.inputs
    centroids = np.stack([weak[blobs.labels == c].mean(axis=0) for c in range(3)])
    gaps = [np.linalg.norm(centroids[i] - centroids[j]) for i in range(3) for j in range(i + 1, 3)]
    print(f"ws={ws}: pairwise centroid distances {np.round(gaps, 2)}")

# A CSV with both clouds, ready for any 3-d scatter plot tool.

weak = Dataset(feature_weaken_input(batch, 0.6).inputs, blobs.labels, 3)
export_scatter(blobs, weak, [0, 1, 2], OUT / "blobs_ws_0.6.csv")
print("wrote", OUT / "blobs_ws_0.6.csv")
