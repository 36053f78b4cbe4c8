"""Minibatch training loop: Adam, warm-up + cosine schedule, early stopping.

The loop precomputes per-view kernel matrices against the fixed landmarks once
(views are materialized, so K_nm is cacheable), then per batch computes the
configured loss, optionally preconditions the coefficient gradient, and takes
an Adam step. The bias and any auxiliary parameters (BYOL predictor, KAE
decoder) always update with the raw gradient.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses as L
from .data import Dataset
from .kernels import KernelSpec, build_kernel_matrix, kernel_diag
from .landmarks import (
    LandmarkSet,
    approx_leverage_scores,
    select_kmeanspp,
    select_leverage,
    select_uniform,
)
from .model import NystromModel, landmark_matrix, pci_init, tikhonov_value
from .precondition import (
    CgStats,
    GeneralPreconditioner,
    GgnBtOperator,
    GgnSimclrOperator,
    PrecondSpec,
    ggn_bt_direction,
    ggn_simclr_direction,
)

ANNEAL_HORIZON = 50  # cosine annealing length in epochs

GGN_LOSSES = ("barlow_twins", "simclr")


class TrainError(RuntimeError):
    pass


class TrainAbort(TrainError):
    def __init__(self, message: str, report: "TrainReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    loss: L.LossSpec
    precond: PrecondSpec = PrecondSpec()
    lr_init: float = 1e-2
    lr_min: float = 1e-5
    warmup_epochs: int = 3
    max_epochs: int = 60
    patience: int = 15  # 0 disables early stopping
    batch_size: int = 256
    weight_decay: float = 0.0
    seed: int = 0
    init: str = "pci"  # or "random"

    def __post_init__(self):
        if self.lr_init != 0.0 and not self.lr_init > self.lr_min > 0:
            raise TrainError(f"need lr_init > lr_min > 0 (or lr_init == 0), got {self.lr_init}, {self.lr_min}")
        if self.max_epochs < 0:
            raise TrainError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.patience < 0:
            raise TrainError(f"patience must be >= 0 (0 disables early stopping), got {self.patience}")
        if self.batch_size < 2:
            raise TrainError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.init not in ("pci", "random"):
            raise TrainError(f"init must be 'pci' or 'random', got {self.init!r}")
        if self.weight_decay < 0:
            raise TrainError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def to_dict(self) -> dict:
        return {
            "loss": self.loss.to_dict(),
            "precond": self.precond.to_dict(),
            "lr_init": self.lr_init,
            "lr_min": self.lr_min,
            "warmup_epochs": self.warmup_epochs,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "batch_size": self.batch_size,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "init": self.init,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["loss"] = L.LossSpec.from_dict(d["loss"])
        d["precond"] = PrecondSpec.from_dict(d["precond"])
        return cls(**d)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    lr: float
    seconds: float
    cg_iters: float = 0.0  # mean CG iterations over the epoch's batches
    cg_fallbacks: int = 0


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_loss: float = float("inf")
    stop_reason: str = ""

    def loss_curve(self) -> np.ndarray:
        return np.array([e.loss for e in self.epochs])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "lr", "cg_iters", "seconds"])
            for e in self.epochs:
                writer.writerow([e.epoch, repr(e.loss), repr(e.lr), repr(e.cg_iters), repr(e.seconds)])


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment buffers plus a shared step counter."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0

    def ensure(self, name: str, shape):
        if name not in self.m:
            self.m[name] = np.zeros(shape)
            self.v[name] = np.zeros(shape)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, weight_decay: float = 0.0,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> dict:
    """One decoupled-weight-decay Adam update over a dict of named tensors."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    out = {}
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainError(f"non-finite gradient for parameter {name!r}")
        state.ensure(name, p.shape)
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * weight_decay * p
    return out


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Linear warm-up to lr_init, cosine anneal to lr_min over ANNEAL_HORIZON epochs."""
    if epoch < 0:
        raise TrainError(f"epoch must be >= 0, got {epoch}")
    if cfg.lr_init == 0.0:
        return 0.0
    if cfg.warmup_epochs > 0 and epoch < cfg.warmup_epochs:
        return cfg.lr_init * (epoch + 1) / (cfg.warmup_epochs + 1)
    t = epoch - cfg.warmup_epochs
    if t >= ANNEAL_HORIZON:
        return cfg.lr_min
    return cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1.0 + np.cos(np.pi * t / ANNEAL_HORIZON))


# ---------------------------------------------------------------------------
# model construction helpers


def prepare_landmarks(ds: Dataset, kernel: KernelSpec, method: str, m: int, seed: int,
                      leverage_lam: float = 1e-3, leverage_s: int = 50) -> LandmarkSet:
    """Select landmark tuples on view-1 features by the named method."""
    X = ds.views[0]
    if method == "uniform":
        return select_uniform(ds.n, m, seed)
    if method == "kmeanspp":
        return select_kmeanspp(X, m, seed)
    if method == "leverage":
        K = build_kernel_matrix(kernel, X, X)

        def K_apply(v):
            return K @ v

        scores = approx_leverage_scores(K_apply, ds.n, lam=leverage_lam, s=leverage_s, seed=seed)
        return select_leverage(scores, m, seed)
    raise TrainError(f"unknown landmark method {method!r}")


def initialize_model(ds: Dataset, kernel: KernelSpec, landmarks: LandmarkSet, h: int,
                     init: str = "pci", seed: int = 0) -> NystromModel:
    """Build a NystromModel with principal-component or Gaussian random coefficients."""
    landmark_views = ds.views[:, landmarks.indices, :].copy()
    centers = landmark_matrix(landmark_views)
    mp = centers.shape[0]
    if init == "pci":
        K_mm = build_kernel_matrix(kernel, centers, centers)
        _, coef = pci_init(K_mm, h)
    elif init == "random":
        rng = np.random.default_rng(seed)
        coef = rng.standard_normal((mp, h)) / np.sqrt(mp)
    else:
        raise TrainError(f"init must be 'pci' or 'random', got {init!r}")
    return NystromModel(
        coef=coef,
        bias=np.zeros(h),
        kernel=kernel,
        landmarks=landmarks,
        landmark_views=landmark_views,
        landmark_labels=None if ds.y is None else ds.y[landmarks.indices].copy(),
    )


# ---------------------------------------------------------------------------
# training loop


def _batch_slices(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start : start + batch_size]
        if idx.size >= 2:  # losses need at least two rows
            yield idx


class _TrainState:
    def __init__(self, model: NystromModel, cfg: TrainConfig, K_mm: np.ndarray):
        self.params = {"coef": model.coef.copy(), "bias": model.bias.copy()}
        kind = cfg.loss.kind
        h = model.h
        if kind == "byol":
            self.params["predictor"] = np.eye(h)
            self.target = {"coef": model.coef.copy(), "bias": model.bias.copy()}
        if kind == "kae":
            self.params["decoder"] = np.zeros((h, K_mm.shape[0]))


def _batch_value_grads(cfg: TrainConfig, state: _TrainState, K_views, K_mm, diag0, idx, rng):
    """Dispatch one batch through the configured loss; returns (value, grads dict)."""
    spec = cfg.loss
    coef = state.params["coef"]
    bias = state.params["bias"]
    K_a = K_views[0][idx]
    K_b = K_views[min(1, len(K_views) - 1)][idx]
    kind = spec.kind
    if kind == "barlow_twins":
        out = L.bt_loss(K_a, K_b, coef, bias, spec.lam_reg)
    elif kind == "vicreg":
        out = L.vicreg_loss(K_a, K_b, coef, bias, spec.lam, spec.mu, spec.nu)
    elif kind == "simclr":
        out = L.simclr_loss(K_a, K_b, coef, bias, spec.tau)
    elif kind == "byol":
        pred = state.params["predictor"]
        tc, tb = state.target["coef"], state.target["bias"]
        fwd = L.byol_loss(K_a, K_b, coef, bias, tc, tb, pred)
        rev = L.byol_loss(K_b, K_a, coef, bias, tc, tb, pred)
        out = L.LossValueGrad(
            0.5 * (fwd.value + rev.value),
            0.5 * (fwd.grad_A + rev.grad_A),
            0.5 * (fwd.grad_gamma + rev.grad_gamma),
            {"predictor": 0.5 * (fwd.grad_extra["predictor"] + rev.grad_extra["predictor"])},
        )
    elif kind in ("simple_contrastive", "spectral_contrastive"):
        perm = L.derangement(idx.size, rng)
        fn = L.simple_contrastive_loss if kind == "simple_contrastive" else L.spectral_contrastive_loss
        out = fn(K_a, K_b, K_b[perm], coef, bias)
    elif kind == "kpca":
        out = L.kpca_loss(float(np.sum(diag0[idx])), K_a, K_mm, coef, spec.lam)
    elif kind == "kae":
        out = L.kae_loss(K_a, K_mm, coef, bias, state.params["decoder"], spec.lam)
    else:
        raise TrainError(f"unhandled loss kind {kind!r}")

    value = out.value
    grads = {"coef": out.grad_A, "bias": out.grad_gamma}
    if kind == "byol":
        grads["predictor"] = out.grad_extra["predictor"]
    if kind == "kae":
        grads["decoder"] = out.grad_extra["decoder"]
    if spec.lam_tik > 0:
        value += spec.lam_tik * tikhonov_value(coef, K_mm)
        grads["coef"] = grads["coef"] + 2.0 * spec.lam_tik * (K_mm @ coef)
    return value, grads


def train(model: NystromModel, ds: Dataset, cfg: TrainConfig):
    """Run the configured optimization; returns (best model, TrainReport)."""
    report = TrainReport()
    if cfg.max_epochs == 0:
        report.stop_reason = "max_epochs"
        return model, report
    if ds.p < 2 and cfg.loss.kind not in ("kpca", "kae"):
        raise TrainError(f"loss {cfg.loss.kind!r} needs p >= 2 augmented views, dataset has {ds.p}")
    if cfg.precond.mode == "ggn" and cfg.loss.kind not in GGN_LOSSES:
        raise TrainError(f"ggn preconditioning supports {GGN_LOSSES}, not {cfg.loss.kind!r}")

    centers = landmark_matrix(model.landmark_views)
    K_mm = build_kernel_matrix(model.kernel, centers, centers)
    K_views = [build_kernel_matrix(model.kernel, V, centers) for V in ds.views]
    diag0 = kernel_diag(model.kernel, ds.views[0]) if cfg.loss.kind == "kpca" else None

    state = _TrainState(model, cfg, K_mm)
    adam = AdamState()
    general = GeneralPreconditioner(K_mm, cfg.precond.lam_p) if cfg.precond.mode == "general" else None
    rng = np.random.default_rng(cfg.seed)

    best_params = {k: v.copy() for k, v in state.params.items()}
    bad_epochs = 0
    nonfinite_streak = 0
    stop_reason = "max_epochs"

    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        lr = lr_at(epoch, cfg)
        loss_sum = 0.0
        rows = 0
        cg_iters = []
        cg_fallbacks = 0
        for idx in _batch_slices(ds.n, cfg.batch_size, rng):
            value, grads = _batch_value_grads(cfg, state, K_views, K_mm, diag0, idx, rng)
            if not np.isfinite(value):
                nonfinite_streak += 1
                if nonfinite_streak >= 3:
                    report.stop_reason = "aborted"
                    raise TrainAbort(
                        f"loss non-finite for 3 consecutive batches at epoch {epoch}", report
                    )
                continue
            nonfinite_streak = 0

            if cfg.precond.mode == "general":
                grads["coef"] = general.apply(grads["coef"])
            elif cfg.precond.mode == "ggn":
                coef, bias = state.params["coef"], state.params["bias"]
                K_a = K_views[0][idx]
                K_b = K_views[1][idx]
                if cfg.loss.kind == "barlow_twins":
                    op = GgnBtOperator(K_a, K_b, coef, bias, cfg.loss.lam_reg)
                    direction, stats = ggn_bt_direction(op, grads["coef"], cfg.precond)
                else:
                    op = GgnSimclrOperator(K_a, K_b, coef, bias, cfg.loss.tau)
                    direction, stats = ggn_simclr_direction(op, grads["coef"], cfg.precond)
                grads["coef"] = direction
                cg_iters.append(stats.iterations)
                cg_fallbacks += int(stats.fallback)

            state.params = adam_step(state.params, grads, adam, lr, cfg.weight_decay)
            if cfg.loss.kind == "byol":
                state.target["coef"] = L.ema_update(state.target["coef"], state.params["coef"], cfg.loss.beta)
                state.target["bias"] = L.ema_update(state.target["bias"], state.params["bias"], cfg.loss.beta)
            loss_sum += value * idx.size
            rows += idx.size

        epoch_loss = loss_sum / rows if rows else float("nan")
        report.epochs.append(
            EpochStats(
                epoch=epoch,
                loss=float(epoch_loss),
                lr=float(lr),
                seconds=time.perf_counter() - t0,
                cg_iters=float(np.mean(cg_iters)) if cg_iters else 0.0,
                cg_fallbacks=cg_fallbacks,
            )
        )
        if epoch_loss < report.best_loss:
            report.best_loss = float(epoch_loss)
            report.best_epoch = epoch
            best_params = {k: v.copy() for k, v in state.params.items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if cfg.patience > 0 and bad_epochs >= cfg.patience:
                stop_reason = "early_stopping"
                break

    report.stop_reason = stop_reason
    trained = NystromModel(
        coef=best_params["coef"],
        bias=best_params["bias"],
        kernel=model.kernel,
        landmarks=model.landmarks,
        landmark_views=model.landmark_views,
        landmark_labels=model.landmark_labels,
    )
    return trained, report


# ---------------------------------------------------------------------------
# random search


def log_uniform(rng: np.random.Generator, low: float, high: float) -> float:
    if not 0 < low < high:
        raise TrainError(f"log-uniform range needs 0 < low < high, got [{low}, {high}]")
    return float(np.exp(rng.uniform(np.log(low), np.log(high))))


@dataclass
class SearchSpace:
    """Sampling ranges for random search plus the scoring callback.

    `evaluate` maps a TrainConfig to a validation probe score (higher is
    better); the pipeline wires it so search stays decoupled from data access.
    """

    base: TrainConfig
    evaluate: object  # callable: TrainConfig -> float
    lr_range: tuple = (1e-4, 1e-1)
    lam_range: tuple = (1e-5, 100.0)  # regularization coefficient, log-uniform
    tau_range: tuple = (1e-3, 100.0)  # simclr temperature, log-uniform


@dataclass
class SearchResult:
    best: TrainConfig
    best_score: float
    trials: list  # (TrainConfig, score) in sampling order


def sample_config(space: SearchSpace, rng: np.random.Generator) -> TrainConfig:
    cfg = space.base
    lr = log_uniform(rng, *space.lr_range)
    loss = cfg.loss
    if loss.kind == "barlow_twins":
        loss = replace(loss, lam_reg=log_uniform(rng, *space.lam_range))
    elif loss.kind == "simclr":
        loss = replace(loss, tau=log_uniform(rng, *space.tau_range))
    elif loss.kind in ("kpca", "kae", "simple_contrastive", "spectral_contrastive", "vicreg"):
        loss = replace(loss, lam=log_uniform(rng, *space.lam_range))
    return replace(cfg, lr_init=lr, loss=loss)


def random_search(space: SearchSpace, trials: int, seed: int) -> SearchResult:
    """Sample `trials` configs, score each with space.evaluate, return the best."""
    if trials < 1:
        raise TrainError(f"need at least one trial, got {trials}")
    rng = np.random.default_rng(seed)
    records = []
    best_cfg = None
    best_score = -np.inf
    for _ in range(trials):
        cfg = sample_config(space, rng)
        score = float(space.evaluate(cfg))
        records.append((cfg, score))
        if score > best_score:
            best_score = score
            best_cfg = cfg
    return SearchResult(best=best_cfg, best_score=best_score, trials=records)
