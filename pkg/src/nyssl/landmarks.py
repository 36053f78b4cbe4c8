"""Landmark selection: uniform, kmeans++ seeding, and approximate leverage scores.

Landmarks are chosen on view-1 features; all p views of a selected tuple then
serve as kernel centers. Leverage scores l_j(lambda) = (K (K + lambda n I)^{-1})_jj
are estimated by Hutchinson's diagonal estimator with Rademacher sketches and
per-column conjugate-gradient solves, never materializing an n x n inverse.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .precondition import cg_solve


class LandmarkError(ValueError):
    pass


@dataclass(frozen=True)
class LandmarkSet:
    indices: np.ndarray  # m distinct sample indices
    method: str
    scores: np.ndarray | None = None  # leverage estimates, when applicable

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size < 1:
            raise LandmarkError(f"need at least one landmark index, got shape {idx.shape}")
        if np.unique(idx).size != idx.size:
            raise LandmarkError("landmark indices must be distinct")
        object.__setattr__(self, "indices", idx)
        if self.scores is not None:
            sc = np.asarray(self.scores, dtype=np.float64)
            if np.any(sc < 0):
                raise LandmarkError("leverage scores must be nonnegative")
            object.__setattr__(self, "scores", sc)

    @property
    def m(self) -> int:
        return int(self.indices.size)


def _check_m(n: int, m: int):
    if not 1 <= m <= n:
        raise LandmarkError(f"need 1 <= m <= n, got m={m}, n={n}")


def select_uniform(n: int, m: int, seed: int) -> LandmarkSet:
    """m distinct indices, uniform without replacement."""
    _check_m(n, m)
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=m, replace=False)
    return LandmarkSet(indices=idx, method="uniform")


def select_kmeanspp(X: np.ndarray, m: int, seed: int) -> LandmarkSet:
    """kmeans++ seeding: next center drawn with probability D(x)^2 / sum_k D(x_k)^2.

    Already-chosen points have D^2 = 0 and so are never re-drawn. If every
    remaining point coincides with a chosen center (all distances zero), the
    rest are filled uniformly from the unchosen indices.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    _check_m(n, m)
    if not np.all(np.isfinite(X)):
        raise LandmarkError("features must be finite")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    while len(chosen) < m:
        total = float(np.sum(d2))
        if total <= 0.0:
            remaining = np.setdiff1d(np.arange(n), np.asarray(chosen))
            fill = rng.choice(remaining, size=m - len(chosen), replace=False)
            chosen.extend(int(i) for i in fill)
            break
        nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return LandmarkSet(indices=np.asarray(chosen), method="kmeanspp")


def approx_leverage_scores(
    K_apply,
    n: int,
    lam: float = 1e-3,
    s: int = 50,
    seed: int = 0,
    cg_tol: float = 1e-6,
    cg_maxiter: int = 500,
) -> np.ndarray:
    """Hutchinson estimate of diag(K (K + lam n I)^{-1}) from s Rademacher sketches.

    For each sketch column pi_j, solves (K + lam n I) z_j = pi_j by CG and
    accumulates pi_j n (K z_j); averaging the s columns gives an unbiased
    diagonal estimate (E[pi pi^T] = I). Entries are clamped to [0, 1].
    """
    if s < 1:
        raise LandmarkError(f"need at least one sketch column, got s={s}")
    if not lam >= 0:
        raise LandmarkError(f"lam must be >= 0, got {lam}")
    rng = np.random.default_rng(seed)
    Pi = rng.choice(np.array([-1.0, 1.0]), size=(n, s))
    acc = np.zeros(n)
    for j in range(s):
        pi = Pi[:, j]
        z, stats = cg_solve(K_apply, pi, lam * n, cg_tol, cg_maxiter)
        if not stats.converged:
            raise LandmarkError(
                f"CG failed on sketch column {j}: residual {stats.residual:.3e} "
                f"after {stats.iterations} iterations (tol {cg_tol:g})"
            )
        acc += pi * K_apply(z)
    return np.clip(acc / s, 0.0, 1.0)


def select_leverage(scores: np.ndarray, m: int, seed: int) -> LandmarkSet:
    """Draw m distinct indices with probability proportional to scores.

    Without replacement via sequential renormalization; an all-zero score
    vector (or exhausted mass partway) falls back to uniform picks.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    _check_m(n, m)
    if np.any(scores < 0) or not np.all(np.isfinite(scores)):
        raise LandmarkError("scores must be finite and nonnegative")
    rng = np.random.default_rng(seed)
    weights = scores.copy()
    chosen = []
    for _ in range(m):
        total = float(np.sum(weights))
        if total <= 0.0:
            remaining = np.setdiff1d(np.arange(n), np.asarray(chosen, dtype=np.int64))
            fill = rng.choice(remaining, size=m - len(chosen), replace=False)
            chosen.extend(int(i) for i in fill)
            break
        nxt = int(rng.choice(n, p=weights / total))
        chosen.append(nxt)
        weights[nxt] = 0.0
    return LandmarkSet(indices=np.asarray(chosen), method="leverage", scores=scores)


def save_scores_csv(scores: np.ndarray, path) -> None:
    """Dump (index, score) rows for inspection."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "score"])
        for i, sc in enumerate(np.asarray(scores, dtype=np.float64)):
            writer.writerow([i, repr(float(sc))])
