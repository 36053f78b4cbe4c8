"""Array-in/array-out bindings over trained models.

A BoundModel wraps one loaded model behind an opaque handle; every array
crosses the boundary as a fresh C-contiguous float64 copy with an explicit
(n, d) shape, so callers never share buffers with the core. Handles stay
valid for their whole lifetime but are not safe for concurrent calls.
"""

from __future__ import annotations

import numpy as np

from nyssl.data import Dataset, augment_tabular
from nyssl.evaluate import linear_probe
from nyssl.interpret import influence_scores
from nyssl.kernels import KernelSpec
from nyssl.losses import LossSpec
from nyssl.model import NystromModel, embed, load_model
from nyssl.precondition import PrecondSpec
from nyssl.trainer import TrainConfig, initialize_model, prepare_landmarks, train


class BindingError(ValueError):
    """Shape or dtype violation at the array boundary."""


class BoundModel:
    """Opaque handle to a trained model; exposes only shape metadata."""

    def __init__(self, model: NystromModel):
        self._model = model

    @classmethod
    def load(cls, path) -> "BoundModel":
        return cls(load_model(path))

    @property
    def h(self) -> int:
        return self._model.h

    @property
    def m(self) -> int:
        return self._model.m

    @property
    def p(self) -> int:
        return self._model.p

    @property
    def kernel_name(self) -> str:
        return self._model.kernel.kind

    def __repr__(self) -> str:
        return f"BoundModel(kernel={self.kernel_name!r}, m={self.m}, p={self.p}, h={self.h})"


def _as_matrix(X, d: int | None, name: str = "X") -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    if arr.ndim != 2:
        raise BindingError(f"{name} must be 2-d (n, d), got shape {arr.shape}")
    if d is not None and arr.shape[1] != d:
        raise BindingError(f"{name} must have {d} features, got {arr.shape[1]}")
    return arr


def _as_labels(y, n: int, name: str = "y") -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(y, dtype=np.int64)).ravel()
    if arr.size != n:
        raise BindingError(f"{name} must have {n} labels, got {arr.size}")
    return arr


def py_embed(handle: BoundModel, X) -> np.ndarray:
    """Embed rows of X; empty input embeds to an empty (0, h) array."""
    model = handle._model
    arr = _as_matrix(X, model.d)
    if arr.shape[0] == 0:
        return np.zeros((0, model.h))
    return embed(model, arr)


def py_probe(handle: BoundModel, X_train, y_train, X_test, y_test,
             label_fraction: float = 0.10, seed: int = 0) -> dict:
    """Linear-probe metrics of the bound model on a labeled split."""
    Z_train = py_embed(handle, X_train)
    Z_test = py_embed(handle, X_test)
    y_tr = _as_labels(y_train, Z_train.shape[0], "y_train")
    y_te = _as_labels(y_test, Z_test.shape[0], "y_test")
    result = linear_probe(Z_train, y_tr, Z_test, y_te, label_fraction, seed=seed)
    return {
        "accuracy": float(result.accuracy),
        "balanced_accuracy": float(result.balanced_accuracy),
        "per_class_recall": np.array(result.per_class_recall, dtype=np.float64),
        "n_labeled_used": int(result.n_labeled_used),
    }


def py_influence(handle: BoundModel, x, top: int = 10) -> list[dict]:
    """Per-landmark influence rows for one test point, descending."""
    model = handle._model
    point = np.ascontiguousarray(np.asarray(x, dtype=np.float64)).ravel()
    if point.size != model.d:
        raise BindingError(f"x must have {model.d} features, got {point.size}")
    records = influence_scores(model, point, top_k=top)
    return [
        {
            "landmark_index": r.landmark_index,
            "kernel_sim": r.kernel_sim,
            "row_norm": r.row_norm,
            "iota": r.iota,
        }
        for r in records
    ]


def py_train(X, y=None, *, kernel: str = "rbf", bandwidth: float = 1.0,
             method: str = "kmeanspp", m: int = 50, h: int = 8,
             init: str = "pci", loss: str = "barlow_twins",
             noise_sigma: float = 0.1, drop_prob: float = 0.1, views: int = 2,
             precond: str = "none", lam_p: float = 1e-3, lr: float = 1e-2,
             epochs: int = 25, batch_size: int = 256, seed: int = 0) -> BoundModel:
    """One-shot training on in-memory arrays; returns a bound handle.

    This is the whole pipeline behind a single call (augment, select
    landmarks, initialize, optimize); per-epoch control stays on the
    library side.
    """
    arr = _as_matrix(X, None)
    labels = None if y is None else _as_labels(y, arr.shape[0])
    ds = Dataset(views=arr[None], y=labels)
    aug = augment_tabular(ds, noise_sigma=noise_sigma, drop_prob=drop_prob,
                          p=views, seed=seed)
    kern = KernelSpec(kind=kernel, bandwidth=bandwidth)
    lms = prepare_landmarks(aug, kern, method, m=m, seed=seed)
    model0 = initialize_model(aug, kern, lms, h=h, init=init, seed=seed)
    cfg = TrainConfig(loss=LossSpec(kind=loss),
                      precond=PrecondSpec(mode=precond, lam_p=lam_p),
                      lr_init=lr, max_epochs=epochs, patience=0,
                      batch_size=batch_size, seed=seed)
    trained, _ = train(model0, aug, cfg)
    return BoundModel(trained)
