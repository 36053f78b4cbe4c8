import numpy as np
import pytest

from nyssl.data import (
    DataError,
    Dataset,
    SplitSpec,
    augment_tabular,
    load_csv,
    load_embeddings,
    make_blobs,
    make_moons,
    save_embeddings,
    split_dataset,
    standardize,
)


def test_dataset_shape_validation():
    with pytest.raises(DataError):
        Dataset(views=np.zeros((4, 3)))
    with pytest.raises(DataError):
        Dataset(views=np.zeros((1, 4, 3)), y=np.arange(5))
    with pytest.raises(DataError):
        Dataset(views=np.zeros((1, 4, 3)), y=np.array([0.5, 1.0, 2.0, 3.0]))


def test_dataset_properties():
    ds = Dataset(views=np.zeros((2, 7, 3)), y=np.array([0, 1, 2, 0, 1, 2, 1]))
    assert (ds.p, ds.n, ds.d) == (2, 7, 3)
    assert ds.n_classes == 3
    sub = ds.subset(np.array([0, 2, 4]))
    assert sub.n == 3 and list(sub.y) == [0, 2, 1]


def test_load_csv_roundtrip(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b,label\n1.5,2.0,0\n-3.25,4.0,1\n0.5,0.25,1\n")
    ds = load_csv(path, label_column="label")
    assert ds.X.shape == (3, 2)
    assert ds.X[1, 0] == -3.25
    assert list(ds.y) == [0, 1, 1]


def test_load_csv_categorical_encoding(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("color,v\nred,1.0\nblue,2.0\nred,3.0\n")
    ds = load_csv(path)
    assert ds.y is None
    # first-appearance ordinal codes
    assert list(ds.X[:, 0]) == [0.0, 1.0, 0.0]


def test_load_csv_errors(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(DataError):
        load_csv(p)
    p.write_text("a,b\n")
    with pytest.raises(DataError):
        load_csv(p)
    p.write_text("a,b\n1.0\n")
    with pytest.raises(DataError, match="row 2"):
        load_csv(p)
    p.write_text("a,b\n1.0,nan\n2.0,3.0\n")
    with pytest.raises(DataError, match="non-finite"):
        load_csv(p)
    p.write_text("a,b\n1.0,2.0\n")
    with pytest.raises(DataError, match="no column"):
        load_csv(p, label_column="missing")
    p.write_text("a,label\n1.0,0.5\n2.0,1.0\n")
    with pytest.raises(DataError, match="nonnegative integers"):
        load_csv(p, label_column="label")


def test_standardize_moments():
    rng = np.random.default_rng(3)
    ds = Dataset(views=rng.standard_normal((1, 50, 4)) * 3.0 + 2.0)
    out = standardize(ds)
    assert np.allclose(out.X.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(out.X.std(axis=0), 1.0, atol=1e-12)


def test_standardize_constant_column():
    X = np.column_stack([np.ones(10), np.arange(10.0)])
    out = standardize(Dataset(views=X[None]))
    assert np.all(out.X[:, 0] == 0.0)


def test_standardize_shares_statistics_across_views():
    rng = np.random.default_rng(4)
    base = rng.standard_normal((20, 3))
    ds = Dataset(views=np.stack([base, base + 1.0]))
    out = standardize(ds)
    # view 1 uses view-0 statistics, so the offset survives scaling
    shift = out.views[1] - out.views[0]
    assert np.allclose(shift, shift[0], atol=1e-12)


def test_split_disjoint_and_seeded():
    ds = make_blobs(n=100, d=3, C=3, separation=5.0, seed=0)
    spec = SplitSpec(train_fraction=0.6, validation_fraction=0.2, seed=7)
    tr, va, te = split_dataset(ds, spec)
    assert tr.n + va.n + te.n == 100
    assert tr.n == 60 and va.n == 20
    tr2, va2, te2 = split_dataset(ds, spec)
    assert np.array_equal(tr.X, tr2.X) and np.array_equal(te.X, te2.X)
    tr3, _, _ = split_dataset(ds, SplitSpec(train_fraction=0.6, validation_fraction=0.2, seed=8))
    assert not np.array_equal(tr.X, tr3.X)


def test_split_fraction_validation():
    with pytest.raises(DataError):
        SplitSpec(train_fraction=0.0)
    with pytest.raises(DataError):
        SplitSpec(train_fraction=0.9, validation_fraction=0.2)


def test_augment_view_zero_untouched():
    rng = np.random.default_rng(1)
    ds = Dataset(views=rng.standard_normal((1, 30, 4)))
    out = augment_tabular(ds, noise_sigma=0.2, drop_prob=0.1, p=3, seed=5)
    assert out.p == 3
    assert np.array_equal(out.views[0], ds.X)
    assert not np.array_equal(out.views[1], ds.X)
    again = augment_tabular(ds, noise_sigma=0.2, drop_prob=0.1, p=3, seed=5)
    assert np.array_equal(out.views, again.views)


def test_augment_validation():
    ds = Dataset(views=np.zeros((1, 5, 2)))
    with pytest.raises(DataError):
        augment_tabular(ds, 0.1, 1.0, 2, 0)
    with pytest.raises(DataError):
        augment_tabular(ds, 0.1, 0.1, 0, 0)


def test_make_blobs_labels_and_separation():
    for seed in range(3):
        ds = make_blobs(n=90, d=4, C=3, separation=8.0, seed=seed)
        assert ds.n == 90 and ds.d == 4
        counts = np.bincount(ds.y)
        assert counts.min() == 30 and counts.max() == 30
        # class means stay far apart at this separation
        means = np.array([ds.X[ds.y == c].mean(axis=0) for c in range(3)])
        for a in range(3):
            for b in range(a + 1, 3):
                assert np.linalg.norm(means[a] - means[b]) > 4.0


def test_make_moons_balanced():
    ds = make_moons(n=101, noise=0.05, seed=0)
    assert ds.n == 101 and ds.d == 2
    assert abs(int(np.sum(ds.y == 0)) - int(np.sum(ds.y == 1))) <= 1


def test_embeddings_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    Z = rng.standard_normal((17, 6))
    path = tmp_path / "z.nysb"
    save_embeddings(path, Z)
    back = load_embeddings(path)
    assert np.array_equal(Z, back)


def test_embeddings_corruption(tmp_path):
    Z = np.eye(3)
    path = tmp_path / "z.nysb"
    save_embeddings(path, Z)
    raw = path.read_bytes()
    bad = tmp_path / "bad.nysb"
    bad.write_bytes(raw[:20])
    with pytest.raises(DataError, match="payload"):
        load_embeddings(bad)
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DataError, match="magic"):
        load_embeddings(bad)
    bad.write_bytes(raw[:8])
    with pytest.raises(DataError, match="truncated"):
        load_embeddings(bad)
