"""Kernelized self-supervised objectives with exact analytic gradients.

Every loss acts on embeddings Z = K @ A + gamma, where K is an n x (m*p)
kernel matrix against the landmarks, A the (m*p) x h coefficient matrix and
gamma a shared length-h bias. Gradients are closed-form matrix calculus,
validated against central finite differences in the tests. The cross
correlation forward/backward for Barlow twins is factored so the Gauss-Newton
preconditioner can reuse its JVP/VJP pieces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BT_EPS = 1e-12  # inside the sqrt of the per-dimension normalizer
NORM_EPS = 1e-12  # added to row norms before l2 normalization
VICREG_VAR_EPS = 1e-4  # inside the sqrt of the variance hinge

LOSS_KINDS = (
    "barlow_twins",
    "vicreg",
    "simclr",
    "byol",
    "simple_contrastive",
    "spectral_contrastive",
    "kpca",
    "kae",
)


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossSpec:
    kind: str
    lam_reg: float = 5e-3  # barlow twins off-diagonal weight
    lam: float = 25.0  # vicreg invariance / kpca+kae regularizer
    mu: float = 25.0  # vicreg variance
    nu: float = 1.0  # vicreg covariance
    tau: float = 0.5  # simclr temperature
    beta: float = 0.99  # byol ema momentum
    lam_tik: float = 0.0  # trainer-added Tikhonov weight

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise LossError(f"unknown loss kind {self.kind!r}")
        coeffs = (self.lam_reg, self.lam, self.mu, self.nu, self.tau, self.beta, self.lam_tik)
        if not all(np.isfinite(c) and c >= 0 for c in coeffs):
            raise LossError(f"coefficients must be finite and >= 0: {coeffs}")
        if self.kind == "simclr" and not self.tau > 0:
            raise LossError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.beta <= 1.0:
            raise LossError(f"ema momentum must lie in [0, 1], got {self.beta}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "lam_reg": self.lam_reg,
            "lam": self.lam,
            "mu": self.mu,
            "nu": self.nu,
            "tau": self.tau,
            "beta": self.beta,
            "lam_tik": self.lam_tik,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossSpec":
        return cls(**d)


@dataclass
class LossValueGrad:
    value: float
    grad_A: np.ndarray
    grad_gamma: np.ndarray
    grad_extra: dict = field(default_factory=dict)


def affine_embed(K: np.ndarray, A: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    return K @ A + gamma[None, :]


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Fixed-point-free permutation of range(n): a uniform random n-cycle."""
    if n < 2:
        raise LossError("derangement needs n >= 2 (no in-batch negative available)")
    order = rng.permutation(n)
    perm = np.empty(n, dtype=np.int64)
    perm[order] = order[np.arange(1, n + 1) % n]
    return perm


# ---------------------------------------------------------------------------
# shared pieces


def _center(Z: np.ndarray) -> np.ndarray:
    return Z - np.mean(Z, axis=0, keepdims=True)


def _center_adjoint(G: np.ndarray) -> np.ndarray:
    # (I - 11^T/n) is symmetric, so the adjoint is centering again
    return G - np.mean(G, axis=0, keepdims=True)


def row_normalize(Z: np.ndarray):
    """Rows scaled to unit norm with an eps guard; returns (U, nrm, nu)."""
    nrm = np.sqrt(np.sum(Z * Z, axis=1))
    nu = nrm + NORM_EPS
    return Z / nu[:, None], nrm, nu


def row_normalize_linearize(Z, nrm, nu, G):
    """Apply the (symmetric) per-row differential of z -> z/(|z|+eps) to G.

    Serves as both JVP and VJP since I/nu - z z^T/(nu^2 |z|) is symmetric.
    """
    safe = np.maximum(nrm, 1e-300)
    zg = np.sum(Z * G, axis=1)
    return G / nu[:, None] - Z * (zg / (nu * nu * safe))[:, None]


def _chain_to_params(K_a, K_b, dZ_a, dZ_b):
    grad_A = K_a.T @ dZ_a + K_b.T @ dZ_b
    grad_gamma = np.sum(dZ_a, axis=0) + np.sum(dZ_b, axis=0)
    return grad_A, grad_gamma


# ---------------------------------------------------------------------------
# Barlow twins


@dataclass
class BtCache:
    Zc_a: np.ndarray
    Zc_b: np.ndarray
    s: np.ndarray  # per-dim normalizers, branch A
    t: np.ndarray  # per-dim normalizers, branch B
    C: np.ndarray


def bt_correlation(Z_a: np.ndarray, Z_b: np.ndarray) -> BtCache:
    """Batch-centered, per-dimension-normalized cross correlation matrix."""
    if Z_a.shape != Z_b.shape or Z_a.shape[0] < 2:
        raise LossError(f"need matching n x h embeddings with n >= 2, got {Z_a.shape} / {Z_b.shape}")
    Zc_a = _center(Z_a)
    Zc_b = _center(Z_b)
    s = np.sqrt(np.sum(Zc_a * Zc_a, axis=0) + BT_EPS)
    t = np.sqrt(np.sum(Zc_b * Zc_b, axis=0) + BT_EPS)
    C = (Zc_a.T @ Zc_b) / np.outer(s, t)
    return BtCache(Zc_a, Zc_b, s, t, C)


def bt_residual_weights(h: int, lam_reg: float) -> np.ndarray:
    W = np.full((h, h), np.sqrt(lam_reg))
    np.fill_diagonal(W, 1.0)
    return W


def bt_value_and_dC(C: np.ndarray, lam_reg: float):
    I = np.eye(C.shape[0])
    diff = C - I
    W = bt_residual_weights(C.shape[0], lam_reg)
    value = float(np.sum((W * diff) ** 2))
    dC = 2.0 * W * W * diff
    return value, dC


def bt_c_backward(cache: BtCache, G: np.ndarray):
    """Pull a cotangent on C back to cotangents on (Z_a, Z_b)."""
    s, t, C = cache.s, cache.t, cache.C
    P = G / np.outer(s, t)
    w_a = -np.sum(G * C, axis=1) / (s * s)
    w_b = -np.sum(G * C, axis=0) / (t * t)
    dZc_a = cache.Zc_b @ P.T + cache.Zc_a * w_a[None, :]
    dZc_b = cache.Zc_a @ P + cache.Zc_b * w_b[None, :]
    return _center_adjoint(dZc_a), _center_adjoint(dZc_b)


def bt_c_jvp(cache: BtCache, dZ_a: np.ndarray, dZ_b: np.ndarray) -> np.ndarray:
    """Directional derivative of C for embedding perturbations (dZ_a, dZ_b)."""
    s, t, C = cache.s, cache.t, cache.C
    dZc_a = _center(dZ_a)
    dZc_b = _center(dZ_b)
    ds = np.sum(cache.Zc_a * dZc_a, axis=0) / s
    dt = np.sum(cache.Zc_b * dZc_b, axis=0) / t
    dM = dZc_a.T @ cache.Zc_b + cache.Zc_a.T @ dZc_b
    return dM / np.outer(s, t) - C * (ds[:, None] / s[:, None] + dt[None, :] / t[None, :])


def bt_loss(K_a, K_b, A, gamma, lam_reg: float) -> LossValueGrad:
    """Redundancy-reduction loss sum_i (1-C_ii)^2 + lam_reg sum_{i!=j} C_ij^2."""
    Z_a = affine_embed(K_a, A, gamma)
    Z_b = affine_embed(K_b, A, gamma)
    cache = bt_correlation(Z_a, Z_b)
    value, dC = bt_value_and_dC(cache.C, lam_reg)
    dZ_a, dZ_b = bt_c_backward(cache, dC)
    grad_A, grad_gamma = _chain_to_params(K_a, K_b, dZ_a, dZ_b)
    return LossValueGrad(value, grad_A, grad_gamma)


# ---------------------------------------------------------------------------
# VICReg


def vicreg_loss(K_a, K_b, A, gamma, lam: float, mu: float, nu: float) -> LossValueGrad:
    """Invariance + variance-hinge + covariance penalty.

    invariance: lam * mean_b |z_a - z_b|^2
    variance:   mu * mean over branches of sum_dims max(0, 1 - sqrt(Var + eps))
    covariance: nu * (offdiag^2 sums of per-branch covariance) / h
    Variances and covariances use population (1/n) normalization.
    """
    Z_a = affine_embed(K_a, A, gamma)
    Z_b = affine_embed(K_b, A, gamma)
    n, h = Z_a.shape
    if n < 2:
        raise LossError("vicreg needs n >= 2")

    diff = Z_a - Z_b
    inv = lam * float(np.sum(diff * diff)) / n
    dZ_a = (2.0 * lam / n) * diff
    dZ_b = -(2.0 * lam / n) * diff

    var_total = 0.0
    cov_total = 0.0
    for Zc, which in ((_center(Z_a), 0), (_center(Z_b), 1)):
        v = np.sum(Zc * Zc, axis=0) / n
        root = np.sqrt(v + VICREG_VAR_EPS)
        hinge = np.maximum(0.0, 1.0 - root)
        var_total += float(np.sum(hinge))
        active = (hinge > 0.0).astype(np.float64)
        dZc = Zc * (-(mu / 2.0) * active / (n * root))[None, :]

        cov = (Zc.T @ Zc) / n
        off = cov - np.diag(np.diag(cov))
        cov_total += float(np.sum(off * off))
        dZc += (2.0 / n) * Zc @ ((2.0 * nu / h) * off)

        d = _center_adjoint(dZc)
        if which == 0:
            dZ_a += d
        else:
            dZ_b += d

    value = inv + mu * var_total / 2.0 + nu * cov_total / h
    grad_A, grad_gamma = _chain_to_params(K_a, K_b, dZ_a, dZ_b)
    return LossValueGrad(value, grad_A, grad_gamma)


# ---------------------------------------------------------------------------
# SimCLR


def simclr_pair_similarities(Z_a, Z_b, tau: float):
    """l2-normalized 2n x 2n similarity matrix S = U U^T / tau and its cache."""
    Z = np.concatenate([Z_a, Z_b], axis=0)
    U, nrm, nu = row_normalize(Z)
    S = (U @ U.T) / tau
    return Z, U, nrm, nu, S


def simclr_loss(K_a, K_b, A, gamma, tau: float) -> LossValueGrad:
    """Temperature-scaled contrastive loss over 2n anchors.

    Per anchor the positive is the other view of the same sample; the
    log-partition runs over the 2n - 2 candidates excluding both the anchor
    itself and its positive.
    """
    if not tau > 0:
        raise LossError(f"tau must be > 0, got {tau}")
    Z_a = affine_embed(K_a, A, gamma)
    Z_b = affine_embed(K_b, A, gamma)
    n = Z_a.shape[0]
    if n < 2:
        raise LossError("simclr needs n >= 2")
    Z, U, nrm, nu, S = simclr_pair_similarities(Z_a, Z_b, tau)
    N = 2 * n
    idx = np.arange(N)
    pos = (idx + n) % N

    mask = np.ones((N, N), dtype=bool)  # candidate mask: exclude self and positive
    mask[idx, idx] = False
    mask[idx, pos] = False
    neg = np.where(mask, S, -np.inf)
    mx = np.max(neg, axis=1)
    lse = mx + np.log(np.sum(np.exp(neg - mx[:, None]), axis=1))
    value = float(np.mean(-S[idx, pos] + lse))

    D = np.where(mask, np.exp(neg - lse[:, None]), 0.0) / N
    D[idx, pos] -= 1.0 / N
    dU = ((D + D.T) @ U) / tau
    dZ = row_normalize_linearize(Z, nrm, nu, dU)
    grad_A, grad_gamma = _chain_to_params(K_a, K_b, dZ[:n], dZ[n:])
    return LossValueGrad(value, grad_A, grad_gamma)


# ---------------------------------------------------------------------------
# BYOL


def byol_loss(K_online, K_target, A, gamma, A_target, gamma_target, predictor) -> LossValueGrad:
    """Mean 2 - 2 cos(pred(z_online), z_target); target branch is constant.

    Gradients flow through the online parameters and the h x h predictor only.
    """
    Z_on = affine_embed(K_online, A, gamma)
    Z_tg = affine_embed(K_target, A_target, gamma_target)
    n = Z_on.shape[0]
    Q = Z_on @ predictor
    Qh, q_nrm, q_nu = row_normalize(Q)
    Th, _, _ = row_normalize(Z_tg)
    value = float(np.mean(2.0 - 2.0 * np.sum(Qh * Th, axis=1)))

    dQ = row_normalize_linearize(Q, q_nrm, q_nu, -(2.0 / n) * Th)
    dZ_on = dQ @ predictor.T
    grad_A = K_online.T @ dZ_on
    grad_gamma = np.sum(dZ_on, axis=0)
    grad_P = Z_on.T @ dQ
    return LossValueGrad(value, grad_A, grad_gamma, {"predictor": grad_P})


def ema_update(target: np.ndarray, online: np.ndarray, beta: float) -> np.ndarray:
    if not 0.0 <= beta <= 1.0:
        raise LossError(f"ema momentum must be in [0, 1], got {beta}")
    return beta * target + (1.0 - beta) * online


# ---------------------------------------------------------------------------
# simple / spectral contrastive


def simple_contrastive_loss(K, K_pos, K_neg, A, gamma) -> LossValueGrad:
    """mean_b [ f(x)^T f(x_neg) - f(x)^T f(x_pos) ]."""
    Z, Z_pos, Z_neg = (affine_embed(Km, A, gamma) for Km in (K, K_pos, K_neg))
    n = Z.shape[0]
    if n < 2:
        raise LossError("contrastive losses need n >= 2")
    value = float(np.sum(Z * Z_neg) - np.sum(Z * Z_pos)) / n
    dZ = (Z_neg - Z_pos) / n
    dZ_pos = -Z / n
    dZ_neg = Z / n
    grad_A = K.T @ dZ + K_pos.T @ dZ_pos + K_neg.T @ dZ_neg
    grad_gamma = np.sum(dZ, axis=0) + np.sum(dZ_pos, axis=0) + np.sum(dZ_neg, axis=0)
    return LossValueGrad(value, grad_A, grad_gamma)


def spectral_contrastive_loss(K, K_pos, K_neg, A, gamma) -> LossValueGrad:
    """mean_b [ -2 f(x)^T f(x_pos) + (f(x)^T f(x_neg))^2 ]."""
    Z, Z_pos, Z_neg = (affine_embed(Km, A, gamma) for Km in (K, K_pos, K_neg))
    n = Z.shape[0]
    if n < 2:
        raise LossError("contrastive losses need n >= 2")
    sn = np.sum(Z * Z_neg, axis=1)
    value = float(-2.0 * np.sum(Z * Z_pos) + np.sum(sn * sn)) / n
    dZ = (-2.0 * Z_pos + 2.0 * sn[:, None] * Z_neg) / n
    dZ_pos = -2.0 * Z / n
    dZ_neg = 2.0 * sn[:, None] * Z / n
    grad_A = K.T @ dZ + K_pos.T @ dZ_pos + K_neg.T @ dZ_neg
    grad_gamma = np.sum(dZ, axis=0) + np.sum(dZ_pos, axis=0) + np.sum(dZ_neg, axis=0)
    return LossValueGrad(value, grad_A, grad_gamma)


# ---------------------------------------------------------------------------
# KPCA / KAE


def kpca_loss(K_trace: float, K_nm, K_mm, A, lam: float) -> LossValueGrad:
    """Nystrom-restricted kernel PCA reconstruction objective.

    Expanding (1/n) sum_i |Phi(x_i) - W W^T Phi(x_i)|^2 + lam |W|^2 with
    W in the landmark span gives

        Tr(K)/n - (2/n) Tr(A^T S A) + (1/n) Tr(A A^T K_mm A A^T S)
        + lam Tr(A^T K_mm A),    S = K_nm^T K_nm.

    The cross term carries coefficient 2 (from -2<phi, WW^T phi>); with it,
    the principal-component initializer is a stationary point at m = n and the
    optimal value is Tr(K)/n - (1/n) sum_top-h eigenvalues. The bias gamma is
    not part of this objective.
    """
    n = K_nm.shape[0]
    S = K_nm.T @ K_nm
    SA = S @ A
    MA = K_mm @ A
    AtSA = A.T @ SA
    AtMA = A.T @ MA
    value = (
        K_trace / n
        - 2.0 * float(np.trace(AtSA)) / n
        + float(np.sum(AtMA * AtSA)) / n
        + lam * float(np.trace(AtMA))
    )
    grad_A = (
        -4.0 / n * SA
        + 2.0 / n * (SA @ AtMA + MA @ AtSA)
        + 2.0 * lam * MA
    )
    return LossValueGrad(value, grad_A, np.zeros(A.shape[1]))


def kae_loss(K_nm, K_mm, A, gamma, B, lam: float) -> LossValueGrad:
    """Autoencoding of kernel feature rows: (1/n) |K_nm - Z B|_F^2 + lam (Tr(A^T K_mm A) + |B|_F^2)."""
    n = K_nm.shape[0]
    Z = affine_embed(K_nm, A, gamma)
    R = Z @ B - K_nm
    MA = K_mm @ A
    value = float(np.sum(R * R)) / n + lam * (float(np.sum(A * MA)) + float(np.sum(B * B)))
    dZ = (2.0 / n) * R @ B.T
    grad_A = K_nm.T @ dZ + 2.0 * lam * MA
    grad_gamma = np.sum(dZ, axis=0)
    grad_B = (2.0 / n) * Z.T @ R + 2.0 * lam * B
    return LossValueGrad(value, grad_A, grad_gamma, {"decoder": grad_B})
