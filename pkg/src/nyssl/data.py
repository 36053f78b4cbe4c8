"""Dataset loading, normalization, splitting, augmentation, and embedding persistence.

A dataset is a stack of ``p`` feature-view matrices over the same ``n`` samples:
view 0 is the original data, views 1.. are augmentations of it. Labels are
optional integer classes. All operations are pure; ``Dataset`` is never mutated
after construction.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

MAGIC_EMBED = b"NYSB"


class DataError(ValueError):
    """Raised on malformed input files or invalid dataset arguments."""


@dataclass(frozen=True)
class Dataset:
    """Feature views plus optional labels.

    views: (p, n, d) float64 array, view 0 being the original features.
    y: optional (n,) int labels in 0..C-1.
    """

    views: np.ndarray
    y: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.views, dtype=np.float64)
        if v.ndim != 3:
            raise DataError(f"views must be (p, n, d), got shape {v.shape}")
        object.__setattr__(self, "views", v)
        if self.y is not None:
            y = np.asarray(self.y)
            if y.ndim != 1 or y.shape[0] != v.shape[1]:
                raise DataError(f"labels must be length n={v.shape[1]}, got shape {y.shape}")
            if y.size and (np.any(y < 0) or not np.issubdtype(y.dtype, np.integer)):
                raise DataError("labels must be nonnegative integers")
            object.__setattr__(self, "y", y.astype(np.int64))

    @property
    def X(self) -> np.ndarray:
        return self.views[0]

    @property
    def n(self) -> int:
        return self.views.shape[1]

    @property
    def d(self) -> int:
        return self.views.shape[2]

    @property
    def p(self) -> int:
        return self.views.shape[0]

    @property
    def n_classes(self) -> int:
        if self.y is None:
            return 0
        return int(self.y.max()) + 1 if self.y.size else 0

    def subset(self, idx: np.ndarray) -> "Dataset":
        idx = np.asarray(idx)
        y = self.y[idx] if self.y is not None else None
        return Dataset(views=self.views[:, idx, :], y=y)


@dataclass(frozen=True)
class SplitSpec:
    """Seeded train/validation/test partition with a probe-label budget.

    The remainder after train and validation fractions is the test split.
    ``probe_label_fraction`` is the share of labeled training points the
    downstream linear probe is allowed to see (default 10%).
    """

    train_fraction: float = 0.7
    validation_fraction: float = 0.15
    probe_label_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        for name in ("train_fraction", "validation_fraction", "probe_label_fraction"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0) and not (name == "validation_fraction" and v == 0.0):
                raise DataError(f"{name} must be in (0, 1], got {v}")
        if self.train_fraction + self.validation_fraction > 1.0 + 1e-12:
            raise DataError("train_fraction + validation_fraction must be <= 1")


def split_dataset(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Partition into disjoint (train, validation, test), reproducible from the seed."""
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(ds.n)
    n_train = int(round(spec.train_fraction * ds.n))
    n_val = int(round(spec.validation_fraction * ds.n))
    n_train = min(n_train, ds.n)
    n_val = min(n_val, ds.n - n_train)
    idx_train = np.sort(perm[:n_train])
    idx_val = np.sort(perm[n_train : n_train + n_val])
    idx_test = np.sort(perm[n_train + n_val :])
    return ds.subset(idx_train), ds.subset(idx_val), ds.subset(idx_test)


def load_csv(path, label_column: str | None = None) -> Dataset:
    """Load a headered CSV into a single-view dataset.

    Categorical columns are ordinal-encoded by first appearance. Non-finite
    numeric values are rejected. ``label_column`` names the column to split off
    as integer labels.
    """
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(header)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {i + 2} has {len(row)} fields, expected {width}")

    label_idx = None
    if label_column is not None:
        if label_column not in header:
            raise DataError(f"{path}: no column named {label_column!r}")
        label_idx = header.index(label_column)

    columns = []
    y = None
    for j in range(width):
        raw = [row[j] for row in rows]
        encoded = _encode_column(raw, name=header[j], path=path)
        if j == label_idx:
            if np.any(encoded != np.round(encoded)) or np.any(encoded < 0):
                raise DataError(f"{path}: label column {label_column!r} must hold nonnegative integers")
            y = encoded.astype(np.int64)
        else:
            columns.append(encoded)
    if not columns:
        raise DataError(f"{path}: no feature columns")
    X = np.column_stack(columns)
    return Dataset(views=X[None, :, :], y=y)


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _encode_column(raw: list[str], name: str, path) -> np.ndarray:
    numeric = all(_is_float(v) for v in raw)
    if numeric:
        vals = np.array([float(v) for v in raw])
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise DataError(f"{path}: non-finite value in column {name!r}, row {bad + 2}")
        return vals
    # categorical: ordinal codes by first appearance
    codes: dict[str, int] = {}
    out = np.empty(len(raw))
    for i, v in enumerate(raw):
        if v not in codes:
            codes[v] = len(codes)
        out[i] = codes[v]
    return out


def standardize(ds: Dataset) -> Dataset:
    """Center and scale each feature to mean 0, std 1 (population std).

    Statistics come from view 0 and are applied to every view, so augmented
    views stay in the same coordinate system. Zero-variance columns map to 0.
    """
    if ds.n < 2:
        raise DataError(f"standardize needs n >= 2, got n={ds.n}")
    mu = ds.X.mean(axis=0)
    sigma = ds.X.std(axis=0)
    dead = sigma < 1e-300
    safe = np.where(dead, 1.0, sigma)
    views = (ds.views - mu) / safe
    views[:, :, dead] = 0.0
    return replace(ds, views=views)


def augment_tabular(ds: Dataset, noise_sigma: float, drop_prob: float, p: int, seed: int) -> Dataset:
    """Expand to ``p`` views: view 0 is the original, each extra view adds
    Gaussian noise then zeroes each feature independently with drop_prob."""
    if not (0.0 <= drop_prob < 1.0):
        raise DataError(f"drop_prob must be in [0, 1), got {drop_prob}")
    if p < 1:
        raise DataError(f"p must be >= 1, got {p}")
    rng = np.random.default_rng(seed)
    X = ds.X
    views = [X]
    for _ in range(p - 1):
        v = X + noise_sigma * rng.standard_normal(X.shape)
        if drop_prob > 0.0:
            keep = rng.random(X.shape) >= drop_prob
            v = v * keep
        views.append(v)
    return replace(ds, views=np.stack(views, axis=0))


def make_blobs(n: int, d: int, C: int, separation: float, seed: int) -> Dataset:
    """Sample ``C`` isotropic unit-variance Gaussian clusters with centers at
    pairwise distance >= separation. Labeled, single view."""
    if not (n >= C >= 1):
        raise DataError(f"need n >= C >= 1, got n={n}, C={C}")
    rng = np.random.default_rng(seed)
    centers = _spread_centers(rng, C, d, separation)
    sizes = np.full(C, n // C)
    sizes[: n % C] += 1
    X = np.concatenate([centers[c] + rng.standard_normal((sizes[c], d)) for c in range(C)])
    y = np.concatenate([np.full(sizes[c], c, dtype=np.int64) for c in range(C)])
    perm = rng.permutation(n)
    return Dataset(views=X[perm][None, :, :], y=y[perm])


def _spread_centers(rng, C: int, d: int, separation: float) -> np.ndarray:
    if C == 1:
        return np.zeros((1, d))
    box = max(separation, 1.0) * C
    centers = [rng.uniform(-box, box, size=d)]
    for _ in range(C - 1):
        for _attempt in range(1000):
            cand = rng.uniform(-box, box, size=d)
            if all(np.linalg.norm(cand - c) >= separation for c in centers):
                break
        else:
            # degenerate geometry; walk out along the first axis
            cand = centers[-1].copy()
            cand[0] += separation
        centers.append(cand)
    return np.array(centers)


def make_moons(n: int, noise: float, seed: int) -> Dataset:
    """Two interleaving half-circles with Gaussian noise. Labeled, single view."""
    if n < 2:
        raise DataError(f"need n >= 2, got n={n}")
    rng = np.random.default_rng(seed)
    n_top = n // 2
    n_bot = n - n_top
    t_top = np.linspace(0.0, math.pi, n_top)
    t_bot = np.linspace(0.0, math.pi, n_bot)
    top = np.column_stack([np.cos(t_top), np.sin(t_top)])
    bot = np.column_stack([1.0 - np.cos(t_bot), 0.5 - np.sin(t_bot)])
    X = np.concatenate([top, bot]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(n_top, dtype=np.int64), np.ones(n_bot, dtype=np.int64)])
    perm = rng.permutation(n)
    return Dataset(views=X[perm][None, :, :], y=y[perm])


def save_embeddings(path, Z: np.ndarray) -> None:
    """Write a binary embedding dump: 16-byte header (magic, rows, cols,
    reserved), then little-endian f64 row-major payload."""
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise DataError(f"embeddings must be 2-D, got {Z.shape}")
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIII", MAGIC_EMBED, Z.shape[0], Z.shape[1], 0))
        f.write(Z.astype("<f8").tobytes())


def load_embeddings(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) != 16:
            raise DataError(f"{path}: truncated header")
        magic, rows, cols, _ = struct.unpack("<4sIII", head)
        if magic != MAGIC_EMBED:
            raise DataError(f"{path}: bad magic {magic!r}")
        payload = f.read()
    want = rows * cols * 8
    if len(payload) != want:
        raise DataError(f"{path}: expected {want} payload bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()
