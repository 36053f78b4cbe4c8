"""Kernel functions, blockwise Gram assembly, and a small-MLP empirical tangent kernel.

Conventions:
    rbf(x, y)       = exp(-||x - y||^2 / (2 * bandwidth^2))
    laplacian(x, y) = exp(-||x - y||_1 / bandwidth)
    polynomial(x, y)= (x . y + offset)^degree
    linear(x, y)    = x . y
    entk_mlp(x, y)  = <df(x)/dtheta, df(y)/dtheta> for a scalar-head MLP at a
                      seeded random initialization, Jacobians taken analytically.

Row i of every assembled matrix is computed by one vectorized pass over the
second argument, so results are bitwise independent of ``block_size`` and agree
exactly with the scalar ``kernel_eval``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KERNEL_KINDS = ("rbf", "laplacian", "polynomial", "linear", "entk_mlp")


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    bandwidth: float = 1.0
    degree: int = 2
    offset: float = 1.0
    widths: tuple[int, ...] = (16,)
    activation: str = "tanh"
    seed: int = 0
    use_bias: bool = True

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise KernelError(f"unknown kernel kind {self.kind!r}")
        if self.kind in ("rbf", "laplacian") and not self.bandwidth > 0:
            raise KernelError(f"bandwidth must be > 0, got {self.bandwidth}")
        if self.kind == "polynomial" and self.degree < 1:
            raise KernelError(f"degree must be >= 1, got {self.degree}")
        if self.kind == "entk_mlp":
            object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
            if any(w < 1 for w in self.widths):
                raise KernelError(f"widths must all be >= 1, got {self.widths}")
            if self.activation not in ("tanh", "relu"):
                raise KernelError(f"activation must be tanh or relu, got {self.activation!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "bandwidth": self.bandwidth,
            "degree": self.degree,
            "offset": self.offset,
            "widths": list(self.widths),
            "activation": self.activation,
            "seed": self.seed,
            "use_bias": self.use_bias,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        d = dict(d)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(**d)


def kernel_eval(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> float:
    """Evaluate k(x, y) for two single feature vectors."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise KernelError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if spec.kind == "rbf":
        d2 = np.sum((x - y) ** 2)
        return float(np.exp(-d2 / (2.0 * spec.bandwidth**2)))
    if spec.kind == "laplacian":
        d1 = np.sum(np.abs(x - y))
        return float(np.exp(-d1 / spec.bandwidth))
    if spec.kind == "polynomial":
        return float((np.sum(x * y) + spec.offset) ** spec.degree)
    if spec.kind == "linear":
        return float(np.sum(x * y))
    gx = _mlp_param_grads(spec, x[None, :])[0]
    gy = _mlp_param_grads(spec, y[None, :])[0]
    return float(np.sum(gx * gy))


def build_kernel_matrix(
    spec: KernelSpec, rows_a: np.ndarray, rows_b: np.ndarray, block_size: int = 256
) -> np.ndarray:
    """Assemble the (len(rows_a), len(rows_b)) kernel matrix in row blocks.

    Peak temporary memory is one row's worth of intermediates times the block,
    never the full pairwise tensor.
    """
    A = np.atleast_2d(np.asarray(rows_a, dtype=np.float64))
    B = np.atleast_2d(np.asarray(rows_b, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise KernelError(f"feature dims differ: {A.shape[1]} vs {B.shape[1]}")
    if block_size < 1:
        raise KernelError(f"block_size must be >= 1, got {block_size}")
    if spec.kind == "entk_mlp":
        GA = _mlp_param_grads(spec, A)
        GB = GA if rows_b is rows_a else _mlp_param_grads(spec, B)
        A, B = GA, GB
        row_fn = _row_dot
    else:
        row_fn = _ROW_FNS[spec.kind]
    out = np.empty((A.shape[0], B.shape[0]))
    for start in range(0, A.shape[0], block_size):
        stop = min(start + block_size, A.shape[0])
        for i in range(start, stop):
            out[i] = row_fn(spec, A[i], B)
    return out


def _row_rbf(spec, a, B):
    d2 = np.sum((B - a) ** 2, axis=1)
    return np.exp(-d2 / (2.0 * spec.bandwidth**2))


def _row_laplacian(spec, a, B):
    d1 = np.sum(np.abs(B - a), axis=1)
    return np.exp(-d1 / spec.bandwidth)


def _row_polynomial(spec, a, B):
    return (np.sum(B * a, axis=1) + spec.offset) ** spec.degree


def _row_linear(spec, a, B):
    return np.sum(B * a, axis=1)


def _row_dot(spec, g, G):
    return np.sum(G * g, axis=1)


_ROW_FNS = {
    "rbf": _row_rbf,
    "laplacian": _row_laplacian,
    "polynomial": _row_polynomial,
    "linear": _row_linear,
}


def kernel_diag(spec: KernelSpec, rows: np.ndarray) -> np.ndarray:
    """k(x, x) for each row, without assembling a square matrix."""
    X = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if spec.kind in ("rbf", "laplacian"):
        return np.ones(X.shape[0])
    if spec.kind == "linear":
        return np.sum(X * X, axis=1)
    if spec.kind == "polynomial":
        return (np.sum(X * X, axis=1) + spec.offset) ** spec.degree
    G = _mlp_param_grads(spec, X)
    return np.sum(G * G, axis=1)


def entk_gram(spec: KernelSpec, rows_a: np.ndarray, rows_b: np.ndarray) -> np.ndarray:
    """Gram matrix of parameter Jacobians of the scalar-head MLP."""
    if spec.kind != "entk_mlp":
        raise KernelError(f"entk_gram requires an entk_mlp spec, got {spec.kind!r}")
    return build_kernel_matrix(spec, rows_a, rows_b)


def add_jitter(K: np.ndarray) -> np.ndarray:
    """Diagonal jitter of 1e-8 * mean(diag) for numerical PSD repair."""
    K = np.asarray(K, dtype=np.float64)
    tau = 1e-8 * float(np.mean(np.diag(K)))
    if tau <= 0.0:
        return K.copy()
    return K + tau * np.eye(K.shape[0])


# ---------------------------------------------------------------------------
# scalar-head MLP and its analytic parameter Jacobians


def mlp_layer_shapes(spec: KernelSpec, d: int) -> list[tuple[int, int]]:
    dims = [d, *spec.widths, 1]
    return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


def _mlp_params(spec: KernelSpec, d: int) -> list[tuple[np.ndarray, np.ndarray | None]]:
    rng = np.random.default_rng(spec.seed)
    params = []
    for out_dim, in_dim in mlp_layer_shapes(spec, d):
        W = rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)
        b = np.zeros(out_dim) if spec.use_bias else None
        params.append((W, b))
    return params


def mlp_forward(spec: KernelSpec, X: np.ndarray) -> np.ndarray:
    """Scalar MLP output per row; shares initialization with the Jacobians."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    params = _mlp_params(spec, X.shape[1])
    a = X
    for li, (W, b) in enumerate(params):
        z = a @ W.T + (b if b is not None else 0.0)
        a = _act(spec.activation, z) if li < len(params) - 1 else z
    return a[:, 0]


def _act(kind: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _act_grad(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return (z > 0.0).astype(np.float64)  # relu'(0) = 0


def _mlp_param_grads(spec: KernelSpec, X: np.ndarray) -> np.ndarray:
    """Per-sample gradient of the scalar output w.r.t. all parameters.

    Returns (n, P) with layers flattened in order [W_1, b_1, ..., W_out, b_out].
    Each row is computed independently with vector operations so the result is
    bitwise identical whether rows arrive one at a time or in a batch.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    params = _mlp_params(spec, X.shape[1])
    rows = [_mlp_param_grad_row(spec, params, X[r]) for r in range(X.shape[0])]
    return np.stack(rows, axis=0)


def _mlp_param_grad_row(spec: KernelSpec, params, x: np.ndarray) -> np.ndarray:
    acts = [x]
    zs = []
    a = x
    for li, (W, b) in enumerate(params):
        z = W @ a + (b if b is not None else 0.0)
        zs.append(z)
        a = _act(spec.activation, z) if li < len(params) - 1 else z
        acts.append(a)

    pieces_rev = []
    delta = np.ones(1)  # d(output)/d(output)
    for li in range(len(params) - 1, -1, -1):
        W, b = params[li]
        gW = np.outer(delta, acts[li]).ravel()
        if b is not None:
            pieces_rev.append(delta.copy())
        pieces_rev.append(gW)
        if li > 0:
            delta = (delta @ W) * _act_grad(spec.activation, zs[li - 1])
    return np.concatenate(pieces_rev[::-1])
