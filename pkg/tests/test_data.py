import csv
import gzip
import struct

import numpy as np
import pytest

from weakenlab.augment import Batch, feature_weaken_input
from weakenlab.data import (Dataset, IDXConsistencyError, IDXFormatError, IDXLengthError,
                            SyntheticSpec, batches, denormalize, export_scatter, load_idx, normalize,
                            stratified_split, subsample, synthetic_blobs, write_idx)


def fixture_bytes(pixels: np.ndarray, labels: np.ndarray):
    """Hand-assembled IDX bytes, independent of write_idx."""
    n, h, w = pixels.shape
    img = bytes([0, 0, 8, 3]) + n.to_bytes(4, "big") + h.to_bytes(4, "big") + w.to_bytes(4, "big")
    img += bytes(pixels.astype(np.uint8).ravel().tolist())
    lbl = bytes([0, 0, 8, 1]) + n.to_bytes(4, "big") + bytes(labels.astype(np.uint8).tolist())
    return img, lbl


@pytest.fixture
def two_images(tmp_path):
    pixels = np.zeros((2, 28, 28), dtype=np.uint8)
    pixels[0, 5, 7] = 255
    pixels[1, 10:12, 3] = [17, 128]
    img, lbl = fixture_bytes(pixels, np.array([3, 9]))
    (tmp_path / "img").write_bytes(img)
    (tmp_path / "lbl").write_bytes(lbl)
    return tmp_path / "img", tmp_path / "lbl", pixels


def test_load_idx_fixture(two_images):
    img, lbl, pixels = two_images
    ds = load_idx(img, lbl)
    assert len(ds) == 2 and ds.inputs.shape == (2, 1, 28, 28)
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1
    assert ds.inputs[0, 0, 5, 7] == 1.0
    assert ds.inputs[1, 0, 11, 3] == 128 / 255
    np.testing.assert_array_equal(ds.labels, [3, 9])


def test_idx_round_trip_bytes(two_images, tmp_path):
    img, lbl, _ = two_images
    ds = load_idx(img, lbl)
    write_idx(ds, tmp_path / "img2", tmp_path / "lbl2")
    assert (tmp_path / "img2").read_bytes() == img.read_bytes()
    assert (tmp_path / "lbl2").read_bytes() == lbl.read_bytes()


def test_idx_gzip(two_images, tmp_path):
    img, lbl, _ = two_images
    (tmp_path / "img.gz").write_bytes(gzip.compress(img.read_bytes()))
    (tmp_path / "lbl.gz").write_bytes(gzip.compress(lbl.read_bytes()))
    a, b = load_idx(img, lbl), load_idx(tmp_path / "img.gz", tmp_path / "lbl.gz")
    assert a.inputs.tobytes() == b.inputs.tobytes()


def test_idx_errors(two_images, tmp_path):
    img, lbl, _ = two_images
    raw = img.read_bytes()
    (tmp_path / "badmagic").write_bytes(bytes([0, 0, 8, 2]) + raw[4:])
    with pytest.raises(IDXFormatError):
        load_idx(tmp_path / "badmagic", lbl)
    (tmp_path / "short").write_bytes(raw[:-1])
    with pytest.raises(IDXLengthError):
        load_idx(tmp_path / "short", lbl)
    (tmp_path / "lbl3").write_bytes(bytes([0, 0, 8, 1]) + struct.pack(">I", 3) + bytes([1, 2, 3]))
    with pytest.raises(IDXConsistencyError):
        load_idx(img, tmp_path / "lbl3")
    with pytest.raises(IDXFormatError):
        load_idx(lbl, lbl)


def test_normalize_round_trip():
    rng = np.random.default_rng(0)
    ds = Dataset(rng.uniform(size=(5, 3, 4, 4)), np.arange(5) % 2, 2)
    norm = normalize(ds, [0.1, 0.2, 0.3], [0.5, 0.6, 0.7])
    np.testing.assert_allclose(norm.inputs[:, 1], (ds.inputs[:, 1] - 0.2) / 0.6, rtol=1e-15)
    np.testing.assert_allclose(denormalize(norm).inputs, ds.inputs, rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        normalize(ds, 0.0, 0.0)


def labeled(n_per_class):
    labels = np.concatenate([np.full(n, c) for c, n in enumerate(n_per_class)])
    return Dataset(np.arange(len(labels), dtype=float)[:, None] * np.ones((1, 2)), labels, len(n_per_class))


def test_subsample_full_is_permutation():
    ds = labeled([7, 5, 9])
    sub = subsample(ds, len(ds), seed=3)
    assert sorted(sub.inputs[:, 0].tolist()) == ds.inputs[:, 0].tolist()


def test_subsample_class_ratios():
    ds = labeled([500, 300, 201, 7])
    for n in (1, 10, 97, 500, 1007):
        sub = subsample(ds, n, seed=n)
        counts = np.bincount(sub.labels, minlength=4)
        ideal = np.array([500, 300, 201, 7]) * n / len(ds)
        assert counts.sum() == n
        assert np.all(np.abs(counts - ideal) <= 1)
        assert len(set(sub.inputs[:, 0])) == n
    with pytest.raises(ValueError):
        subsample(ds, len(ds) + 1, 0)


def test_split_is_disjoint():
    ds = labeled([30, 20])
    a, b = stratified_split(ds, 17, seed=1)
    assert len(a) + len(b) == len(ds)
    assert not set(a.inputs[:, 0]) & set(b.inputs[:, 0])


def test_batches_cover_each_sample_once():
    ds = labeled([13, 10])
    seen = []
    sizes = []
    for batch in batches(ds, 5, shuffle_seed=4):
        assert isinstance(batch, Batch)
        np.testing.assert_array_equal(batch.labels.sum(axis=1), 1)
        seen += batch.inputs[:, 0].tolist()
        sizes.append(len(batch))
    assert sorted(seen) == ds.inputs[:, 0].tolist()
    assert sizes == [5, 5, 5, 5, 3]


def test_batches_deterministic():
    ds = labeled([13, 10])
    a = [b.inputs.tobytes() for b in batches(ds, 4, shuffle_seed=9)]
    b = [b.inputs.tobytes() for b in batches(ds, 4, shuffle_seed=9)]
    c = [b.inputs.tobytes() for b in batches(ds, 4, shuffle_seed=10)]
    assert a == b and a != c


def test_synthetic_blobs():
    ds = synthetic_blobs(SyntheticSpec(classes=3, dims=4, samples_per_class=5, noise_std=0.0, seed=1))
    for c in range(3):
        rows = ds.inputs[ds.labels == c]
        assert np.all(rows == rows[0])
    with pytest.raises(ValueError):
        SyntheticSpec(classes=1)
    with pytest.raises(ValueError):
        SyntheticSpec(dims=1)


def test_weakened_blobs_are_scaled_copies():
    ds = synthetic_blobs(SyntheticSpec(classes=2, dims=3, samples_per_class=20, seed=2))
    batch = Batch(ds.inputs, np.eye(2)[ds.labels], 2)
    weak = feature_weaken_input(batch, 0.6).inputs
    np.testing.assert_allclose(weak, 0.4 * ds.inputs, rtol=1e-15)


def test_export_scatter(tmp_path):
    ds = synthetic_blobs(SyntheticSpec(classes=2, dims=5, samples_per_class=10, seed=3))
    weak = Dataset(0.2 * ds.inputs, ds.labels, 2)
    export_scatter(ds, weak, [0, 2, 4], tmp_path / "s.csv")
    with open(tmp_path / "s.csv") as f:
        rows = list(csv.DictReader(f))
    orig = [r for r in rows if r["kind"] == "original"]
    wk = [r for r in rows if r["kind"] == "weakened"]
    assert len(orig) == len(wk) == 20
    for o, w in zip(orig, wk):
        a = np.array([float(o[k]) for k in "xyz"])
        b = np.array([float(w[k]) for k in "xyz"])
        np.testing.assert_allclose(b, 0.2 * a, rtol=1e-15)
        assert abs(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)) - 1) < 1e-12
        assert o["label"] == w["label"]
    with pytest.raises(ValueError):
        export_scatter(ds, weak, [0, 1, 5], tmp_path / "bad.csv")
    with pytest.raises(ValueError):
        export_scatter(ds, weak, [0, 0, 1], tmp_path / "bad.csv")


def test_export_scatter_empty(tmp_path):
    empty = Dataset(np.zeros((0, 4)), np.zeros(0, dtype=np.int64), 2)
    export_scatter(empty, empty, [0, 1, 2], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().strip() == "x,y,z,label,kind"
