"""Representer-landmark interpretability.

Landmarks are ranked by coefficient row norms; class coverage is the shortest
ranked prefix touching every class. A test point's landmark influence is
kernel similarity times row norm (no bias term). Concept directions come from
a hinge-loss separator on embeddings; a concept's contribution at landmark l
is alignment of the landmark's embedding with the concept direction times the
landmark's influence, and the profile sums the top-N influential landmarks.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .kernels import build_kernel_matrix
from .model import NystromModel, embed, landmark_matrix

CAV_L2 = 1e-3
CAV_HOLDOUT = 0.2
CAV_ITERS = 1000


class InterpretError(ValueError):
    pass


@dataclass(frozen=True)
class LandmarkRanking:
    omega: np.ndarray  # (m*p,) coefficient row norms
    order: np.ndarray  # permutation, descending norms, ties by ascending index


def rank_landmarks(coef: np.ndarray) -> LandmarkRanking:
    coef = np.asarray(coef, dtype=np.float64)
    omega = np.sqrt(np.sum(coef * coef, axis=1))
    order = np.lexsort((np.arange(omega.size), -omega))
    return LandmarkRanking(omega=omega, order=order.astype(np.int64))


def class_coverage_kappa(ranking: LandmarkRanking, landmark_labels: np.ndarray,
                         label_set) -> int:
    """Smallest k such that the top-k ranked landmarks cover every label in label_set."""
    labels = np.asarray(landmark_labels)
    if labels.size != ranking.omega.size:
        raise InterpretError(
            f"need one label per ranked row: {labels.size} labels vs {ranking.omega.size} rows"
        )
    wanted = set(int(c) for c in label_set)
    missing = wanted - set(int(c) for c in labels)
    if missing:
        raise InterpretError(f"classes never appear among landmarks: {sorted(missing)}")
    seen = set()
    for k, row in enumerate(ranking.order, start=1):
        c = int(labels[row])
        if c in wanted:
            seen.add(c)
        if seen == wanted:
            return k
    raise InterpretError("ranking exhausted without covering all classes")  # unreachable


@dataclass
class InfluenceRecord:
    landmark_index: int
    test_index: int
    kernel_sim: float
    row_norm: float
    iota: float
    alignment: float | None = None
    score: float | None = None


def _landmark_kernel_row(model: NystromModel, x_test: np.ndarray) -> np.ndarray:
    x = np.asarray(x_test, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != model.d:
        raise InterpretError(f"expected {model.d} features, got {x.shape[1]}")
    centers = landmark_matrix(model.landmark_views)
    return build_kernel_matrix(model.kernel, x, centers)[0]


def influence_scores(model: NystromModel, x_test: np.ndarray, top_k: int | None = None,
                     test_index: int = 0) -> list:
    """Per-landmark influence iota = k(x_test, landmark) * |coef row|, descending."""
    k_row = _landmark_kernel_row(model, x_test)
    ranking = rank_landmarks(model.coef)
    iota = k_row * ranking.omega
    order = np.lexsort((np.arange(iota.size), -iota))
    if top_k is not None:
        order = order[: max(int(top_k), 0)]
    return [
        InfluenceRecord(
            landmark_index=int(l),
            test_index=test_index,
            kernel_sim=float(k_row[l]),
            row_norm=float(ranking.omega[l]),
            iota=float(iota[l]),
        )
        for l in order
    ]


@dataclass
class ConceptVector:
    v: np.ndarray  # unit-norm direction in embedding space
    name: str
    intercept: float
    train_accuracy: float
    holdout_accuracy: float


def _hinge_fit(Z: np.ndarray, y: np.ndarray):
    """Full-batch subgradient descent on hinge loss + L2; returns (w, b)."""
    n, h = Z.shape
    w = np.zeros(h)
    b = 0.0
    best = (np.inf, w, b)
    for t in range(CAV_ITERS):
        margins = y * (Z @ w + b)
        active = margins < 1.0
        obj = float(np.mean(np.maximum(0.0, 1.0 - margins))) + 0.5 * CAV_L2 * float(w @ w)
        if obj < best[0]:
            best = (obj, w.copy(), b)
        gw = -(Z[active] * y[active, None]).sum(axis=0) / n + CAV_L2 * w
        gb = -float(np.sum(y[active])) / n
        step = 0.5 / np.sqrt(t + 1.0)
        w = w - step * gw
        b = b - step * gb
    return best[1], best[2]


def learn_cav(Z_positive: np.ndarray, Z_negative: np.ndarray, seed: int = 0,
              name: str = "concept") -> ConceptVector:
    """Unit direction separating concept-positive from concept-negative embeddings."""
    Zp = np.atleast_2d(np.asarray(Z_positive, dtype=np.float64))
    Zn = np.atleast_2d(np.asarray(Z_negative, dtype=np.float64))
    if Zp.shape[0] < 2 or Zn.shape[0] < 2:
        raise InterpretError("need at least 2 samples on each side of the concept")
    rng = np.random.default_rng(seed)

    def split(Z):
        n = Z.shape[0]
        hold = min(n - 1, max(1, int(round(CAV_HOLDOUT * n))))
        perm = rng.permutation(n)
        return Z[perm[hold:]], Z[perm[:hold]]

    Zp_tr, Zp_ho = split(Zp)
    Zn_tr, Zn_ho = split(Zn)
    Z_tr = np.concatenate([Zp_tr, Zn_tr], axis=0)
    y_tr = np.concatenate([np.ones(Zp_tr.shape[0]), -np.ones(Zn_tr.shape[0])])
    w, b = _hinge_fit(Z_tr, y_tr)
    nrm = float(np.linalg.norm(w))
    if nrm < 1e-12:
        raise InterpretError("degenerate separator: concept sides are not distinguishable")
    v = w / nrm

    def acc(Zs, ys):
        return float(np.mean(np.sign(Zs @ w + b) == ys)) if Zs.size else float("nan")

    Z_ho = np.concatenate([Zp_ho, Zn_ho], axis=0)
    y_ho = np.concatenate([np.ones(Zp_ho.shape[0]), -np.ones(Zn_ho.shape[0])])
    return ConceptVector(
        v=v,
        name=name,
        intercept=b / nrm,
        train_accuracy=acc(Z_tr, y_tr),
        holdout_accuracy=acc(Z_ho, y_ho),
    )


def landmark_embeddings(model: NystromModel, include_bias: bool = True) -> np.ndarray:
    """Embed the landmark rows themselves; rows align with coef rows."""
    Z = embed(model, landmark_matrix(model.landmark_views))
    if not include_bias:
        Z = Z - model.bias[None, :]
    return Z


def concept_score(model: NystromModel, v_c: np.ndarray, x_test: np.ndarray, l: int,
                  include_bias: bool = True) -> float:
    """Score(l, c) = (landmark embedding . v_c) * iota_l at this test point."""
    k_row = _landmark_kernel_row(model, x_test)
    if not 0 <= l < k_row.size:
        raise InterpretError(f"landmark index {l} out of range [0, {k_row.size})")
    omega = np.sqrt(np.sum(model.coef * model.coef, axis=1))
    Z_m = landmark_embeddings(model, include_bias)
    return float((Z_m[l] @ np.asarray(v_c)) * (k_row[l] * omega[l]))


@dataclass
class ConceptProfile:
    psi: float
    records: list = field(default_factory=list)  # top-N by influence, descending


def concept_profile(model: NystromModel, v_c: np.ndarray, x_test: np.ndarray, N: int,
                    include_bias: bool = True, test_index: int = 0) -> ConceptProfile:
    """Sum of concept scores over the N most influential landmarks."""
    if N < 0 or N > model.coef.shape[0]:
        raise InterpretError(f"N must be in [0, {model.coef.shape[0]}], got {N}")
    records = influence_scores(model, x_test, top_k=N, test_index=test_index)
    Z_m = landmark_embeddings(model, include_bias)
    v = np.asarray(v_c, dtype=np.float64)
    psi = 0.0
    for rec in records:
        rec.alignment = float(Z_m[rec.landmark_index] @ v)
        rec.score = rec.alignment * rec.iota
        psi += rec.score
    return ConceptProfile(psi=psi, records=records)


# ---------------------------------------------------------------------------
# artifact exports


def influence_to_csv(records: list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["test_id", "landmark_id", "kernel_sim", "row_norm", "iota", "alignment", "score"])
        for r in records:
            writer.writerow([
                r.test_index,
                r.landmark_index,
                repr(r.kernel_sim),
                repr(r.row_norm),
                repr(r.iota),
                "" if r.alignment is None else repr(r.alignment),
                "" if r.score is None else repr(r.score),
            ])


def profile_to_json(profile: ConceptProfile, concept_name: str, path) -> None:
    payload = {
        "concept": concept_name,
        "N": len(profile.records),
        "psi": profile.psi,
        "records": [
            {
                "test_id": r.test_index,
                "landmark_id": r.landmark_index,
                "kernel_sim": r.kernel_sim,
                "row_norm": r.row_norm,
                "iota": r.iota,
                "alignment": r.alignment,
                "score": r.score,
            }
            for r in profile.records
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
