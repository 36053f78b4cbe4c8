import numpy as np
import pytest

from conftest import kernel_pair, rel_err
from nyssl.losses import affine_embed, bt_residual_weights, row_normalize
from nyssl.precondition import (
    CgStats,
    GeneralPreconditioner,
    GgnBtOperator,
    GgnSimclrOperator,
    PrecondError,
    PrecondSpec,
    cg_solve,
    general_precondition,
    ggn_bt_direction,
    ggn_simclr_direction,
)


def test_spec_validation():
    with pytest.raises(PrecondError):
        PrecondSpec(mode="magic")
    with pytest.raises(PrecondError):
        PrecondSpec(lam_p=0.0)
    with pytest.raises(PrecondError):
        PrecondSpec(cg_maxiter=0)
    spec = PrecondSpec(mode="ggn", lam_p=1e-2)
    assert PrecondSpec.from_dict(spec.to_dict()) == spec


# ---------------------------------------------------------------------------
# conjugate gradients


def _random_psd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    evals = np.linspace(1.0, cond, n)
    return Q @ np.diag(evals) @ Q.T


def test_cg_matches_dense_solve(rng):
    H = _random_psd(rng, 12)
    b = rng.standard_normal(12)
    lam = 0.1
    x, stats = cg_solve(lambda v: H @ v, b, lam, tol=1e-12, maxiter=200)
    exact = np.linalg.solve(H + lam * np.eye(12), b)
    assert rel_err(x, exact) < 1e-8
    assert stats.converged and not stats.fallback
    assert stats.iterations <= 200


def test_cg_matrix_shaped_unknowns(rng):
    """The solver must accept matrix right-hand sides with elementwise inner products."""
    H = _random_psd(rng, 6)
    B = rng.standard_normal((6, 3))
    x, stats = cg_solve(lambda V: H @ V, B, 0.05, tol=1e-12, maxiter=100)
    exact = np.linalg.solve(H + 0.05 * np.eye(6), B)
    assert rel_err(x, exact) < 1e-8
    assert stats.converged


def test_cg_zero_rhs():
    x, stats = cg_solve(lambda v: v, np.zeros(5), 1.0, tol=1e-8, maxiter=10)
    assert np.array_equal(x, np.zeros(5))
    assert stats.converged and stats.iterations == 0


def test_cg_reports_nonconvergence(rng):
    H = _random_psd(rng, 30, cond=1e8)
    b = rng.standard_normal(30)
    _, stats = cg_solve(lambda v: H @ v, b, 1e-12, tol=1e-14, maxiter=2)
    assert not stats.converged
    assert stats.iterations == 2


def test_cg_nonfinite_operator():
    with pytest.raises(PrecondError):
        cg_solve(lambda v: v * np.nan, np.ones(4), 0.1, tol=1e-8, maxiter=10)


def test_cg_large_damping_limit(rng):
    """lam_p >> |H| makes the solve approach g / lam_p."""
    H = _random_psd(rng, 8)
    b = rng.standard_normal(8)
    lam = 1e8
    x, _ = cg_solve(lambda v: H @ v, b, lam, tol=1e-12, maxiter=100)
    assert rel_err(x, b / lam) < 1e-6


# ---------------------------------------------------------------------------
# general mode


def test_general_preconditioner_matches_dense(rng):
    _, _, K_mm, _, _, _ = kernel_pair(rng, n=6, m=8)
    lam = 0.05
    G = rng.standard_normal((8, 3))
    pre = GeneralPreconditioner(K_mm, lam)
    out = pre.apply(G)
    from nyssl.kernels import add_jitter

    P = add_jitter(K_mm) + lam * np.eye(8)
    assert rel_err(out, np.linalg.solve(P, G)) < 1e-10
    assert rel_err(general_precondition(G, K_mm, lam), out) < 1e-14


def test_general_preconditioner_validation():
    with pytest.raises(PrecondError):
        GeneralPreconditioner(np.eye(3), 0.0)
    with pytest.raises(PrecondError):
        GeneralPreconditioner(np.array([[1.0, 0.0], [0.0, -5.0]]), 1e-9)


# ---------------------------------------------------------------------------
# GGN operators vs explicitly assembled curvature


def _bt_residual(K_a, K_b, A, gamma, lam_reg):
    from nyssl.losses import bt_correlation

    W = bt_residual_weights(A.shape[1], lam_reg)
    C = bt_correlation(affine_embed(K_a, A, gamma), affine_embed(K_b, A, gamma)).C
    return (W * C).ravel()  # the -W*I offset is constant in A


def _fd_jacobian(fn, A, eps=1e-6):
    base = fn(A)
    J = np.zeros((base.size, A.size))
    for j in range(A.size):
        Ap = A.copy().ravel()
        Am = A.copy().ravel()
        Ap[j] += eps
        Am[j] -= eps
        J[:, j] = (fn(Ap.reshape(A.shape)) - fn(Am.reshape(A.shape))) / (2 * eps)
    return J


def _bt_problem(seed, lam_reg=5e-3):
    rng = np.random.default_rng(seed)
    K_a, K_b, _, _, _, _ = kernel_pair(rng, n=8, m=5)
    A = rng.standard_normal((5, 3)) * 0.5
    gamma = rng.standard_normal(3) * 0.1
    return rng, K_a, K_b, A, gamma, lam_reg


def test_ggn_bt_hvp_matches_explicit_assembly():
    rng, K_a, K_b, A, gamma, lam_reg = _bt_problem(0)
    J = _fd_jacobian(lambda A_: _bt_residual(K_a, K_b, A_, gamma, lam_reg), A)
    H = J.T @ J
    op = GgnBtOperator(K_a, K_b, A, gamma, lam_reg)
    for _ in range(10):
        d = rng.standard_normal(A.shape)
        hv = op.hvp(d)
        assert rel_err(hv.ravel(), H @ d.ravel()) < 1e-6


def test_ggn_bt_symmetry_and_psd():
    rng, K_a, K_b, A, gamma, lam_reg = _bt_problem(1)
    op = GgnBtOperator(K_a, K_b, A, gamma, lam_reg)
    for _ in range(10):
        u = rng.standard_normal(A.shape)
        v = rng.standard_normal(A.shape)
        lhs = float(np.sum(u * op.hvp(v)))
        rhs = float(np.sum(op.hvp(u) * v))
        scale = max(abs(lhs), abs(rhs), 1.0)
        assert abs(lhs - rhs) / scale < 1e-8
        quad = float(np.sum(u * op.hvp(u)))
        assert quad > -1e-8


def _simclr_problem(seed, tau=0.5):
    rng = np.random.default_rng(seed)
    K_a, K_b, _, _, _, _ = kernel_pair(rng, n=8, m=5)
    A = rng.standard_normal((5, 3)) * 0.5
    gamma = rng.standard_normal(3) * 0.1
    return rng, K_a, K_b, A, gamma, tau


def _masked_similarities(K_a, K_b, A, gamma, tau):
    Z = np.concatenate([affine_embed(K_a, A, gamma), affine_embed(K_b, A, gamma)], axis=0)
    U, _, _ = row_normalize(Z)
    S = (U @ U.T) / tau
    np.fill_diagonal(S, 0.0)  # anchor's own logit held constant
    return S.ravel()


def test_ggn_simclr_hvp_matches_explicit_assembly():
    rng, K_a, K_b, A, gamma, tau = _simclr_problem(0)
    n = K_a.shape[0]
    N = 2 * n
    J = _fd_jacobian(lambda A_: _masked_similarities(K_a, K_b, A_, gamma, tau), A)
    op = GgnSimclrOperator(K_a, K_b, A, gamma, tau)
    # blockwise J^T Q J: row i of the logit matrix has softmax curvature
    # Q_i = diag(p_i) - p_i p_i^T
    H = np.zeros((A.size, A.size))
    for i in range(N):
        Ji = J[i * N : (i + 1) * N, :]
        p = op.p[i]
        Qi = np.diag(p) - np.outer(p, p)
        H += Ji.T @ Qi @ Ji
    for _ in range(10):
        d = rng.standard_normal(A.shape)
        hv = op.hvp(d)
        assert rel_err(hv.ravel(), H @ d.ravel()) < 1e-6


def test_ggn_simclr_symmetry_and_psd():
    rng, K_a, K_b, A, gamma, tau = _simclr_problem(1)
    op = GgnSimclrOperator(K_a, K_b, A, gamma, tau)
    for _ in range(10):
        u = rng.standard_normal(A.shape)
        v = rng.standard_normal(A.shape)
        lhs = float(np.sum(u * op.hvp(v)))
        rhs = float(np.sum(op.hvp(u) * v))
        scale = max(abs(lhs), abs(rhs), 1.0)
        assert abs(lhs - rhs) / scale < 1e-8
        assert float(np.sum(u * op.hvp(u))) > -1e-8


def test_ggn_direction_solves_damped_system():
    rng, K_a, K_b, A, gamma, lam_reg = _bt_problem(2)
    op = GgnBtOperator(K_a, K_b, A, gamma, lam_reg)
    g = rng.standard_normal(A.shape)
    spec = PrecondSpec(mode="ggn", lam_p=1e-2, cg_tol=1e-10, cg_maxiter=500)
    direction, stats = ggn_bt_direction(op, g, spec)
    assert stats.converged and not stats.fallback
    back = op.hvp(direction) + spec.lam_p * direction
    assert rel_err(back, g) < 1e-8


def test_ggn_direction_fallback_flag():
    rng, K_a, K_b, A, gamma, tau = _simclr_problem(2)
    op = GgnSimclrOperator(K_a, K_b, A, gamma, tau)
    g = rng.standard_normal(A.shape)
    spec = PrecondSpec(mode="ggn", lam_p=1e-12, cg_tol=1e-16, cg_maxiter=1)
    direction, stats = ggn_simclr_direction(op, g, spec)
    assert stats.fallback and not stats.converged
    assert np.array_equal(direction, g)


def test_cgstats_defaults():
    s = CgStats(iterations=3, residual=0.5, converged=False)
    assert not s.fallback


def _bt_training_curve(seed, mode, lam_p=1.0, epochs=30):
    from nyssl.data import SplitSpec, augment_tabular, make_blobs, split_dataset, standardize
    from nyssl.kernels import KernelSpec
    from nyssl.losses import LossSpec
    from nyssl.trainer import TrainConfig, initialize_model, prepare_landmarks, train

    kern = KernelSpec(kind="rbf", bandwidth=1.0)
    ds = standardize(make_blobs(n=300, d=3, C=3, separation=6.0, seed=seed))
    tr, _, _ = split_dataset(ds, SplitSpec(seed=0))
    aug = augment_tabular(tr, noise_sigma=0.1, drop_prob=0.1, p=2, seed=seed)
    lms = prepare_landmarks(aug, kern, "kmeanspp", m=50, seed=seed)
    model0 = initialize_model(aug, kern, lms, h=8, init="pci", seed=seed)
    cfg = TrainConfig(loss=LossSpec(kind="barlow_twins", lam_reg=5e-3),
                      precond=PrecondSpec(mode=mode, lam_p=lam_p),
                      lr_init=1e-2, max_epochs=epochs, patience=0,
                      batch_size=256, seed=seed)
    _, report = train(model0, aug, cfg)
    return np.array([e.loss for e in report.epochs])


def test_general_mode_accelerates_training():
    # kernel-geometry preconditioning must not hurt the plateau (within 5%,
    # one-sided: it may land below, since the anneal horizon freezes the
    # unpreconditioned run first) and must reach the unpreconditioned
    # plateau in strictly fewer epochs on most seeds
    wins = 0
    for seed in range(5):
        general = _bt_training_curve(seed, "general")
        plain = _bt_training_curve(seed, "none")
        target = 1.05 * plain[-1]
        if general[-1] > target:
            continue
        reach_g = int(np.argmax(general <= target))
        reach_p = int(np.argmax(plain <= target))
        wins += general[reach_g] <= target and reach_g < reach_p
    assert wins >= 4, f"general mode faster on only {wins}/5 seeds"
