"""Frozen-embedding evaluation: linear probe, balanced accuracy, spectrum.

The probe is a multinomial logistic regression fit by full-batch gradient
descent with backtracking step control; deterministic given (data, seed), no
external solver. Labels are stratified down to `label_fraction` before
fitting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

PROBE_L2 = 1e-4
PROBE_TOL = 1e-6
PROBE_MAX_ITER = 2000


class EvalError(ValueError):
    pass


@dataclass
class ProbeResult:
    accuracy: float
    balanced_accuracy: float
    per_class_recall: np.ndarray
    n_labeled_used: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            writer.writerow(["accuracy", repr(self.accuracy)])
            writer.writerow(["balanced_accuracy", repr(self.balanced_accuracy)])
            writer.writerow(["n_labeled_used", self.n_labeled_used])
            for c, r in enumerate(self.per_class_recall):
                writer.writerow([f"recall_class_{c}", repr(float(r))])


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray  # descending eigenvalues of coef^T coef
    effective_rank: float  # exp of spectral entropy
    degenerate: bool = False  # all-zero coefficient matrix

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "eigenvalue"])
            for i, ev in enumerate(self.eigenvalues):
                writer.writerow([i, repr(float(ev))])


def stratified_label_subset(y: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Indices of a per-class subsample covering ceil(fraction * count) of each class."""
    if not 0 < fraction <= 1:
        raise EvalError(f"label fraction must be in (0, 1], got {fraction}")
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    picks = []
    for c in np.unique(y):
        members = np.flatnonzero(y == c)
        take = int(np.ceil(fraction * members.size))
        picks.append(rng.choice(members, size=take, replace=False))
    idx = np.sort(np.concatenate(picks))
    missing = set(np.unique(y).tolist()) - set(np.unique(y[idx]).tolist())
    if missing:
        raise EvalError(
            f"classes {sorted(missing)} absent from the stratified subset; use a larger fraction"
        )
    return idx


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    mx = np.max(logits, axis=1, keepdims=True)
    e = np.exp(logits - mx)
    return e / np.sum(e, axis=1, keepdims=True)


def fit_multinomial(Z: np.ndarray, y: np.ndarray, l2: float = PROBE_L2,
                    tol: float = PROBE_TOL, max_iter: int = PROBE_MAX_ITER):
    """Softmax regression by backtracking gradient descent; returns (W, b, classes)."""
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y)
    classes = np.unique(y)
    C = classes.size
    n, h = Z.shape
    y_idx = np.searchsorted(classes, y)
    onehot = np.zeros((n, C))
    onehot[np.arange(n), y_idx] = 1.0

    W = np.zeros((h, C))
    b = np.zeros(C)

    def objective(W, b):
        logits = Z @ W + b
        mx = np.max(logits, axis=1)
        lse = mx + np.log(np.sum(np.exp(logits - mx[:, None]), axis=1))
        ce = float(np.mean(lse - logits[np.arange(n), y_idx]))
        return ce + 0.5 * l2 * float(np.sum(W * W))

    obj = objective(W, b)
    step = 1.0
    for _ in range(max_iter):
        P = _softmax_rows(Z @ W + b)
        R = (P - onehot) / n
        gW = Z.T @ R + l2 * W
        gb = np.sum(R, axis=0)
        gnorm = max(float(np.max(np.abs(gW))), float(np.max(np.abs(gb))))
        if gnorm < tol:
            break
        for _ in range(60):  # backtracking: shrink until the objective decreases
            W_new = W - step * gW
            b_new = b - step * gb
            obj_new = objective(W_new, b_new)
            if obj_new <= obj:
                break
            step *= 0.5
        else:
            break
        W, b, obj = W_new, b_new, obj_new
        step *= 1.1
    return W, b, classes


def probe_predict(W, b, classes, Z) -> np.ndarray:
    return classes[np.argmax(Z @ W + b, axis=1)]


def balanced_accuracy(pred: np.ndarray, y: np.ndarray) -> float:
    """Mean of per-class recalls over the classes present in y."""
    pred = np.asarray(pred)
    y = np.asarray(y)
    if y.size == 0 or pred.shape != y.shape:
        raise EvalError(f"need matching nonempty label arrays, got {pred.shape} vs {y.shape}")
    recalls = [float(np.mean(pred[y == c] == c)) for c in np.unique(y)]
    return float(np.mean(recalls))


def linear_probe(Z_train, y_train, Z_test, y_test, label_fraction: float = 0.10,
                 seed: int = 0) -> ProbeResult:
    """Fit the probe on a stratified label subset, report metrics on the test embeddings."""
    y_train = np.asarray(y_train)
    y_test = np.asarray(y_test)
    if y_train is None or y_test is None:
        raise EvalError("labels are required for probing")
    idx = stratified_label_subset(y_train, label_fraction, seed)
    W, b, classes = fit_multinomial(np.asarray(Z_train)[idx], y_train[idx])
    pred = probe_predict(W, b, classes, np.asarray(Z_test))
    acc = float(np.mean(pred == y_test))
    recalls = np.array([float(np.mean(pred[y_test == c] == c)) for c in np.unique(y_test)])
    return ProbeResult(
        accuracy=acc,
        balanced_accuracy=float(np.mean(recalls)),
        per_class_recall=recalls,
        n_labeled_used=int(idx.size),
    )


def spectrum(coef: np.ndarray) -> SpectrumReport:
    """Eigenvalues of coef^T coef (descending) and the exp-entropy effective rank."""
    A = np.asarray(coef, dtype=np.float64)
    evals = np.linalg.eigvalsh(A.T @ A)[::-1].copy()
    total = float(np.sum(evals))
    if total <= 0.0:
        return SpectrumReport(eigenvalues=evals, effective_rank=0.0, degenerate=True)
    p = np.clip(evals / total, 0.0, None)
    nz = p[p > 0]
    entropy = -float(np.sum(nz * np.log(nz)))
    return SpectrumReport(eigenvalues=evals, effective_rank=float(np.exp(entropy)))
