"""Gradient preconditioning: general kernel-geometry mode and matrix-free Gauss-Newton.

Three modes transform a raw gradient into an update direction:
  none    -- identity.
  general -- (K_mm + lam_p I)^{-1} grad via a cached Cholesky factorization.
  ggn     -- solve (J^T Q J + lam_p I) p = g by conjugate gradients, where the
             Hessian-vector product is a JVP followed by (Q and) a VJP, never
             forming the Gauss-Newton matrix. Available for the Barlow twins
             (least-squares residual W n (C - I)) and SimCLR (softmax rows)
             objectives.

The bias gamma is never preconditioned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .kernels import add_jitter
from .losses import (
    affine_embed,
    bt_c_backward,
    bt_c_jvp,
    bt_correlation,
    bt_residual_weights,
    row_normalize,
    row_normalize_linearize,
)

PRECOND_MODES = ("none", "general", "ggn")


class PrecondError(RuntimeError):
    pass


@dataclass(frozen=True)
class PrecondSpec:
    mode: str = "none"
    lam_p: float = 1e-3
    cg_tol: float = 1e-6
    cg_maxiter: int = 100

    def __post_init__(self):
        if self.mode not in PRECOND_MODES:
            raise PrecondError(f"unknown preconditioner mode {self.mode!r}")
        if not self.lam_p > 0:
            raise PrecondError(f"damping lam_p must be > 0, got {self.lam_p}")
        if not self.cg_tol > 0:
            raise PrecondError(f"cg_tol must be > 0, got {self.cg_tol}")
        if self.cg_maxiter < 1:
            raise PrecondError(f"cg_maxiter must be >= 1, got {self.cg_maxiter}")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "lam_p": self.lam_p,
            "cg_tol": self.cg_tol,
            "cg_maxiter": self.cg_maxiter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrecondSpec":
        return cls(**d)


@dataclass
class CgStats:
    iterations: int
    residual: float
    converged: bool
    fallback: bool = False  # direction replaced by the raw gradient


def _dot(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(x * y))


def cg_solve(apply_H, b: np.ndarray, lam_p: float, tol: float, maxiter: int):
    """Conjugate gradients on (H + lam_p I) x = b for a PSD operator oracle.

    Works on arrays of any shape (inner products are elementwise sums).
    Returns (x, CgStats); convergence is judged on the true relative residual.
    """
    b = np.asarray(b, dtype=np.float64)
    bn = np.sqrt(_dot(b, b))
    if bn == 0.0:
        return np.zeros_like(b), CgStats(0, 0.0, True)

    def op(v):
        return apply_H(v) + lam_p * v

    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = _dot(r, r)
    iters = 0
    while iters < maxiter:
        Ap = op(p)
        if not np.all(np.isfinite(Ap)):
            raise PrecondError("non-finite values in CG operator application")
        alpha = rs / _dot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        iters += 1
        rs_new = _dot(r, r)
        if not np.isfinite(rs_new):
            raise PrecondError("non-finite residual in CG iteration")
        if np.sqrt(rs_new) <= tol * bn:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    rx = op(x) - b
    true_res = np.sqrt(_dot(rx, rx)) / bn
    return x, CgStats(iters, float(true_res), bool(true_res <= tol))


class GeneralPreconditioner:
    """Apply (K_mm + lam_p I)^{-1} through a Cholesky factorization computed once."""

    def __init__(self, K_mm: np.ndarray, lam_p: float):
        if not lam_p > 0:
            raise PrecondError(f"lam_p must be > 0, got {lam_p}")
        P = add_jitter(np.asarray(K_mm, dtype=np.float64))
        P = P + lam_p * np.eye(P.shape[0])
        try:
            self._factor = scipy.linalg.cho_factor(P, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise PrecondError(f"preconditioner factorization failed: {exc}") from exc

    def apply(self, grad_A: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self._factor, np.asarray(grad_A, dtype=np.float64))


def general_precondition(grad_A: np.ndarray, K_mm: np.ndarray, lam_p: float) -> np.ndarray:
    """One-shot convenience wrapper; training loops should hold a GeneralPreconditioner."""
    return GeneralPreconditioner(K_mm, lam_p).apply(grad_A)


# ---------------------------------------------------------------------------
# Gauss-Newton operators


class GgnBtOperator:
    """J^T J for the residual map r(A) = vec(W * (C(A) - I)) at fixed (K_a, K_b, gamma)."""

    def __init__(self, K_a, K_b, A, gamma, lam_reg: float):
        self.K_a = K_a
        self.K_b = K_b
        Z_a = affine_embed(K_a, A, gamma)
        Z_b = affine_embed(K_b, A, gamma)
        self.cache = bt_correlation(Z_a, Z_b)
        self.W = bt_residual_weights(A.shape[1], lam_reg)

    def jvp(self, d: np.ndarray) -> np.ndarray:
        dC = bt_c_jvp(self.cache, self.K_a @ d, self.K_b @ d)
        return self.W * dC

    def vjp(self, R: np.ndarray) -> np.ndarray:
        dZ_a, dZ_b = bt_c_backward(self.cache, self.W * R)
        return self.K_a.T @ dZ_a + self.K_b.T @ dZ_b

    def hvp(self, d: np.ndarray) -> np.ndarray:
        return self.vjp(self.jvp(d))


class GgnSimclrOperator:
    """J^T Q J for the similarity-logits map at temperature tau.

    Logit rows range over all 2n - 1 non-self candidates (positive included),
    so Q_i = diag(p_i) - p_i p_i^T is the softmax curvature of each row; its
    application costs O(candidates) per row and Q is never materialized.
    """

    def __init__(self, K_a, K_b, A, gamma, tau: float):
        if not tau > 0:
            raise PrecondError(f"tau must be > 0, got {tau}")
        self.K_a = K_a
        self.K_b = K_b
        self.tau = tau
        Z_a = affine_embed(K_a, A, gamma)
        Z_b = affine_embed(K_b, A, gamma)
        self.n = Z_a.shape[0]
        self.Z = np.concatenate([Z_a, Z_b], axis=0)
        self.U, self.nrm, self.nu = row_normalize(self.Z)
        S = (self.U @ self.U.T) / tau
        N = 2 * self.n
        np.fill_diagonal(S, -np.inf)
        mx = np.max(S, axis=1)
        self.p = np.exp(S - mx[:, None])
        self.p /= np.sum(self.p, axis=1, keepdims=True)
        np.fill_diagonal(self.p, 0.0)
        self._idx = np.arange(N)

    def jvp(self, d: np.ndarray) -> np.ndarray:
        dZ = np.concatenate([self.K_a @ d, self.K_b @ d], axis=0)
        dU = row_normalize_linearize(self.Z, self.nrm, self.nu, dZ)
        V = (dU @ self.U.T + self.U @ dU.T) / self.tau
        V[self._idx, self._idx] = 0.0
        return V

    def q_apply(self, V: np.ndarray) -> np.ndarray:
        pv = np.sum(self.p * V, axis=1, keepdims=True)
        return self.p * V - self.p * pv

    def vjp(self, R: np.ndarray) -> np.ndarray:
        dU = ((R + R.T) @ self.U) / self.tau
        dZ = row_normalize_linearize(self.Z, self.nrm, self.nu, dU)
        return self.K_a.T @ dZ[: self.n] + self.K_b.T @ dZ[self.n :]

    def hvp(self, d: np.ndarray) -> np.ndarray:
        return self.vjp(self.q_apply(self.jvp(d)))


def _ggn_direction(operator, grad_A: np.ndarray, spec: PrecondSpec):
    direction, stats = cg_solve(operator.hvp, grad_A, spec.lam_p, spec.cg_tol, spec.cg_maxiter)
    if not stats.converged:
        # robustness during ill-conditioned early epochs: keep the step usable
        return grad_A.copy(), CgStats(stats.iterations, stats.residual, False, fallback=True)
    return direction, stats


def ggn_bt_direction(operator: GgnBtOperator, grad_A: np.ndarray, spec: PrecondSpec):
    """Solve (J^T J + lam_p I) p = grad_A; falls back to grad_A on CG failure."""
    return _ggn_direction(operator, grad_A, spec)


def ggn_simclr_direction(operator: GgnSimclrOperator, grad_A: np.ndarray, spec: PrecondSpec):
    """Solve (J^T Q J + lam_p I) s = grad_A; falls back to grad_A on CG failure."""
    return _ggn_direction(operator, grad_A, spec)
