"""Shared numerical helpers for the test suite."""

import numpy as np
import pytest

from nyssl.kernels import KernelSpec, build_kernel_matrix


def rel_err(approx, exact, floor=1e-12):
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    denom = max(float(np.linalg.norm(exact)), floor)
    return float(np.linalg.norm(approx - exact)) / denom


def fd_grad_coords(f, x, coords, eps=1e-6):
    """Central finite differences of scalar f at selected flat coordinates."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(len(coords))
    for k, i in enumerate(coords):
        xp = x.copy().ravel()
        xm = x.copy().ravel()
        xp[i] += eps
        xm[i] -= eps
        out[k] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * eps)
    return out


def check_grad(f, x, grad, rng, n_coords=20, eps=1e-6, tol=1e-4):
    """Compare analytic grad against central differences on random coordinates."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    size = x.size
    coords = rng.choice(size, size=min(n_coords, size), replace=False)
    fd = fd_grad_coords(f, x, coords, eps=eps)
    an = grad.ravel()[coords]
    diff = float(np.max(np.abs(fd - an)))
    # central differences cannot resolve below the cancellation noise in f;
    # differences under that resolution count as agreement (exact-zero grads)
    noise = 50.0 * max(1.0, abs(float(f(x)))) * np.finfo(np.float64).eps / (2.0 * eps)
    if diff < noise:
        return 0.0
    scale = max(float(np.max(np.abs(fd))), 1e-8)
    err = diff / scale
    assert err < tol, f"gradient mismatch: max rel err {err:.3e}"
    return err


def kernel_pair(rng, n=8, m=5, d=3, bandwidth=1.5):
    """Two cross-kernel matrices (two noisy views vs shared landmarks) plus K_mm."""
    spec = KernelSpec(kind="rbf", bandwidth=bandwidth)
    X = rng.standard_normal((n, d))
    Xb = X + 0.1 * rng.standard_normal((n, d))
    centers = rng.standard_normal((m, d))
    K_a = build_kernel_matrix(spec, X, centers)
    K_b = build_kernel_matrix(spec, Xb, centers)
    K_mm = build_kernel_matrix(spec, centers, centers)
    return K_a, K_b, K_mm, X, centers, spec


@pytest.fixture
def rng():
    return np.random.default_rng(0)
