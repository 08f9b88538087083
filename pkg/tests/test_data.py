"""Synthetic blobs, label noise, CSV files, splits and batching."""

import numpy as np
import pytest

from calibforge.data import (
    BlobsSpec,
    Dataset,
    SplitSpec,
    Standardizer,
    batches,
    carve,
    gen_blobs,
    inject_label_noise,
    load_csv,
    save_csv,
    split,
)
from calibforge.errors import ConfigError, DataFormatError, ShapeError


def test_blobs_are_deterministic_and_balanced():
    a = gen_blobs(4, 50, 3, 2.0, 1.0, seed=5)
    b = gen_blobs(4, 50, 3, 2.0, 1.0, seed=5)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert a.class_counts().tolist() == [50, 50, 50, 50]
    assert a.dim == 3 and len(a) == 200
    assert not np.array_equal(a.x, gen_blobs(4, 50, 3, 2.0, 1.0, seed=6).x)


def test_well_separated_blobs_are_linearly_separable():
    ds = gen_blobs(2, 500, 2, 50.0, 0.1, seed=1)
    centroids = np.stack([ds.x[ds.y == c].mean(axis=0) for c in range(2)])
    w = centroids[1] - centroids[0]
    threshold = w @ centroids.mean(axis=0)
    predicted = (ds.x @ w > threshold).astype(int)
    assert (predicted == ds.y).mean() > 0.99


def test_blobs_spec_validation():
    with pytest.raises(ConfigError):
        BlobsSpec(num_classes=1)
    with pytest.raises(ConfigError):
        BlobsSpec(sigma=0.0)
    assert np.array_equal(BlobsSpec(per_class=10).generate(3).x, gen_blobs(4, 10, 2, 2.0, 1.0, 3).x)


def test_dataset_validation():
    with pytest.raises(ShapeError):
        Dataset(np.zeros((3, 2)), np.zeros(2, dtype=int), 2)
    with pytest.raises(DataFormatError):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)
    with pytest.raises(DataFormatError):
        Dataset(np.array([[np.nan, 0.0]]), np.array([0]), 2)
    with pytest.raises(DataFormatError):
        Dataset(np.zeros((1, 2)), np.array([0.5]), 2)
    ds = Dataset(np.zeros((3, 1)), np.array([0, 1, 1]), 2)
    assert ds.ids.tolist() == [0, 1, 2]
    assert ds.take([2, 0]).ids.tolist() == [2, 0]


def test_label_noise():
    ds = gen_blobs(2, 100, 2, 2.0, 1.0, seed=0)
    assert inject_label_noise(ds, 0.0, seed=1) is ds
    flipped = inject_label_noise(ds, 1.0, seed=1)
    assert np.all(flipped.y != ds.y)
    assert np.array_equal(flipped.x, ds.x)
    with pytest.raises(ConfigError):
        inject_label_noise(ds, 1.5, seed=1)


def test_label_noise_rate():
    ds = gen_blobs(5, 20_000, 1, 2.0, 1.0, seed=0)
    noisy = inject_label_noise(ds, 0.2, seed=9)
    assert abs((noisy.y != ds.y).mean() - 0.2) <= 0.004
    assert np.array_equal(noisy.y, inject_label_noise(ds, 0.2, seed=9).y)


def test_csv_round_trip(tmp_path):
    ds = gen_blobs(3, 10, 2, 2.0, 1.0, seed=2)
    path = save_csv(tmp_path / "data.csv", ds)
    assert path.read_text().splitlines()[0] == "f0,f1,label"
    loaded = load_csv(path)
    assert np.array_equal(loaded.x, ds.x)
    assert np.array_equal(loaded.y, ds.y)
    assert loaded.num_classes == 3
    assert load_csv(path, num_classes=5).num_classes == 5


@pytest.mark.parametrize("text", [
    "",
    "a,b,label\n1,2,0\n",
    "f0,f1,label\n1,2\n",
    "f0,f1,label\n1,x,0\n",
    "f0,f1,label\n1,2,0.5\n",
    "f0,f1,label\n",
])
def test_load_csv_rejects_malformed_files(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(DataFormatError):
        load_csv(path)


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "nope.csv")


def test_split_sizes_and_partition():
    ds = gen_blobs(4, 250, 2, 2.0, 1.0, seed=0)
    spec = SplitSpec(0.8, 0.1, 0.1, seed=3)
    assert spec.sizes(1000) == (800, 100, 100)
    train, holdout, test = split(ds, spec)
    assert (len(train), len(holdout), len(test)) == (800, 100, 100)
    ids = np.concatenate([train.ids, holdout.ids, test.ids])
    assert sorted(ids.tolist()) == list(range(1000))
    again = split(ds, spec)
    assert np.array_equal(again[0].ids, train.ids)


def test_split_from_sizes():
    spec = SplitSpec.from_sizes(4000, 1000, 2000)
    assert spec.sizes(7000) == (4000, 1000, 2000)
    with pytest.raises(ConfigError):
        SplitSpec(0.5, 0.5, 0.0)
    with pytest.raises(ConfigError):
        SplitSpec(0.5, 0.3, 0.3)


def test_carve():
    ds = gen_blobs(2, 50, 2, 2.0, 1.0, seed=0)
    rest, carved = carve(ds, 0.1, seed=4)
    assert (len(rest), len(carved)) == (90, 10)
    assert not set(rest.ids) & set(carved.ids)
    assert np.all(np.diff(carved.ids) > 0)
    with pytest.raises(ConfigError):
        carve(ds, 0.001, seed=4)


def test_batches_cover_every_index_once():
    seen = np.concatenate(list(batches(103, 10, seed=1, epoch=0)))
    assert sorted(seen.tolist()) == list(range(103))
    sizes = [len(b) for b in batches(103, 10, seed=1, epoch=0)]
    assert sizes[-1] == 3 and len(sizes) == 11
    first = next(batches(103, 10, seed=1, epoch=0))
    assert not np.array_equal(first, next(batches(103, 10, seed=1, epoch=1)))
    with pytest.raises(ConfigError):
        next(batches(10, 0, seed=1, epoch=0))


def test_standardizer():
    ds = Dataset(np.array([[1.0, 5.0], [3.0, 5.0]]), np.array([0, 1]), 2)
    scaler = Standardizer.fit(ds)
    out = scaler.transform(ds)
    assert np.allclose(out.x[:, 0], [-1.0, 1.0])
    assert np.all(out.x[:, 1] == 0.0)
    restored = Standardizer.from_dict(scaler.to_dict())
    assert np.array_equal(restored.mean, scaler.mean) and np.array_equal(restored.std, scaler.std)
    with pytest.raises(ShapeError):
        scaler.transform(Dataset(np.zeros((1, 3)), np.array([0]), 2))
