"""The Nystrom function class f(x) = coef^T k_x + bias and its principled init.

k_x stacks kernel evaluations against all landmark views in view-major order:
row j*m + i of `coef` weights kernel similarity to view j of landmark i. The
same ordering governs every K_nm / K_mm matrix in the package.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .kernels import KernelSpec, add_jitter, build_kernel_matrix
from .landmarks import LandmarkSet

MAGIC_MODEL = b"NYSM"
MODEL_VERSION = 1

EIG_TRUNCATION = 1e-10  # eigenvalues <= this fraction of the largest count as zero


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class NystromModel:
    coef: np.ndarray  # (m*p, h) coefficient rows, view-major
    bias: np.ndarray  # (h,) shared across views
    kernel: KernelSpec
    landmarks: LandmarkSet
    landmark_views: np.ndarray  # (p, m, d) cached landmark feature rows
    landmark_labels: np.ndarray | None = None  # (m,) labels of the landmark tuples

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=np.float64)
        bias = np.asarray(self.bias, dtype=np.float64)
        lv = np.asarray(self.landmark_views, dtype=np.float64)
        if lv.ndim != 3:
            raise ModelError(f"landmark_views must be (p, m, d), got shape {lv.shape}")
        p, m, _ = lv.shape
        if coef.ndim != 2 or coef.shape[0] != m * p:
            raise ModelError(f"coef must have m*p = {m * p} rows, got shape {coef.shape}")
        if bias.shape != (coef.shape[1],):
            raise ModelError(f"bias must have length h = {coef.shape[1]}, got {bias.shape}")
        if not (np.all(np.isfinite(coef)) and np.all(np.isfinite(bias))):
            raise ModelError("model parameters must be finite")
        if m != self.landmarks.m:
            raise ModelError(f"landmark_views holds {m} tuples but index set has {self.landmarks.m}")
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "landmark_views", lv)
        if self.landmark_labels is not None:
            lab = np.asarray(self.landmark_labels, dtype=np.int64)
            if lab.shape != (m,):
                raise ModelError(f"landmark_labels must have shape ({m},), got {lab.shape}")
            object.__setattr__(self, "landmark_labels", lab)

    @property
    def p(self) -> int:
        return int(self.landmark_views.shape[0])

    @property
    def m(self) -> int:
        return int(self.landmark_views.shape[1])

    @property
    def d(self) -> int:
        return int(self.landmark_views.shape[2])

    @property
    def h(self) -> int:
        return int(self.coef.shape[1])


def landmark_matrix(landmark_views: np.ndarray) -> np.ndarray:
    """Stack the (p, m, d) landmark views into the (m*p, d) view-major center list."""
    lv = np.asarray(landmark_views, dtype=np.float64)
    return lv.reshape(lv.shape[0] * lv.shape[1], lv.shape[2])


@dataclass(frozen=True)
class PciFactors:
    U_h: np.ndarray  # (m*p, h) top eigenvectors, sign-fixed
    Lambda_h: np.ndarray  # h positive eigenvalues, descending


def pci_init(K_mm: np.ndarray, h: int):
    """Principal component initialization coef0 = U_h Lambda_h^{-1/2}.

    With this start, the feature map K_nm @ coef0 satisfies
    (K_nm coef0)(K_nm coef0)^T = K_nm K_mm^dagger K_mn, the rank-h Nystrom
    approximation of the full Gram matrix.
    """
    K = add_jitter(np.asarray(K_mm, dtype=np.float64))
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ModelError(f"K_mm must be square, got shape {K.shape}")
    if h < 1:
        raise ModelError(f"h must be >= 1, got {h}")
    evals, evecs = np.linalg.eigh(K)
    evals = evals[::-1]
    evecs = evecs[:, ::-1]
    cutoff = EIG_TRUNCATION * max(float(evals[0]), 0.0)
    usable = int(np.sum(evals > cutoff))
    if usable < h:
        raise ModelError(
            f"requested h={h} components but the landmark Gram matrix has "
            f"usable rank {usable} (eigenvalue cutoff {cutoff:.3e})"
        )
    U = evecs[:, :h].copy()
    lam = evals[:h].copy()
    # deterministic sign: first non-negligible component of each eigenvector positive
    for col in range(h):
        u = U[:, col]
        nz = np.flatnonzero(np.abs(u) > 1e-12 * np.max(np.abs(u)))
        if nz.size and u[nz[0]] < 0:
            U[:, col] = -u
    coef0 = U / np.sqrt(lam)[None, :]
    return PciFactors(U_h=U, Lambda_h=lam), coef0


def embed(model: NystromModel, X: np.ndarray, block_size: int = 256) -> np.ndarray:
    """Z = K_nm @ coef + bias, assembled blockwise against the cached landmarks."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        return np.zeros((0, model.h))
    if X.shape[1] != model.d:
        raise ModelError(f"expected {model.d} features, got {X.shape[1]}")
    centers = landmark_matrix(model.landmark_views)
    K = build_kernel_matrix(model.kernel, X, centers, block_size=block_size)
    return K @ model.coef + model.bias[None, :]


def tikhonov_value(coef: np.ndarray, K_mm: np.ndarray) -> float:
    """Tr(coef^T K_mm coef), the RKHS norm of the represented map."""
    return float(np.sum(coef * (K_mm @ coef)))


def tikhonov(model: NystromModel, K_mm: np.ndarray) -> float:
    return tikhonov_value(model.coef, K_mm)


# ---------------------------------------------------------------------------
# serialization: magic, version, length-prefixed JSON metadata, f64 arrays


def _write_array(fh, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(arr.tobytes())


def _read_exact(fh, count: int) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise ModelError(f"truncated model file: wanted {count} bytes, got {len(buf)}")
    return buf


def _read_array(fh) -> np.ndarray:
    (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
    if ndim > 8:
        raise ModelError(f"implausible array rank {ndim} in model file")
    shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(_read_exact(fh, count * 8), dtype="<f8")
    return data.reshape(shape).astype(np.float64)


def save_model(model: NystromModel, path) -> None:
    meta = {
        "kernel": model.kernel.to_dict(),
        "landmarks": {
            "method": model.landmarks.method,
            "indices": [int(i) for i in model.landmarks.indices],
            "scores": None
            if model.landmarks.scores is None
            else [float(s) for s in model.landmarks.scores],
            "labels": None
            if model.landmark_labels is None
            else [int(c) for c in model.landmark_labels],
        },
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC_MODEL)
    buf.write(struct.pack("<I", MODEL_VERSION))
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    _write_array(buf, model.landmark_views)
    _write_array(buf, model.coef)
    _write_array(buf, model.bias)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path) -> NystromModel:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != MAGIC_MODEL:
            raise ModelError(f"bad magic {magic!r}, expected {MAGIC_MODEL!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != MODEL_VERSION:
            raise ModelError(f"unsupported model file version {version}")
        (json_len,) = struct.unpack("<I", _read_exact(fh, 4))
        meta = json.loads(_read_exact(fh, json_len).decode("utf-8"))
        landmark_views = _read_array(fh)
        coef = _read_array(fh)
        bias = _read_array(fh)
        trailing = fh.read(1)
    if trailing:
        raise ModelError("trailing bytes after model payload")
    kernel = KernelSpec.from_dict(meta["kernel"])
    lm = meta["landmarks"]
    landmarks = LandmarkSet(
        indices=np.asarray(lm["indices"], dtype=np.int64),
        method=lm["method"],
        scores=None if lm["scores"] is None else np.asarray(lm["scores"]),
    )
    labels = lm.get("labels")
    return NystromModel(
        coef=coef,
        bias=bias,
        kernel=kernel,
        landmarks=landmarks,
        landmark_views=landmark_views,
        landmark_labels=None if labels is None else np.asarray(labels, dtype=np.int64),
    )
