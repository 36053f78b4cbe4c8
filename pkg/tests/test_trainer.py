import numpy as np
import pytest

from nyssl import losses as L
from nyssl.data import augment_tabular, make_blobs
from nyssl.kernels import KernelSpec
from nyssl.losses import LossSpec
from nyssl.precondition import PrecondSpec
from nyssl.trainer import (
    ANNEAL_HORIZON,
    AdamState,
    SearchSpace,
    TrainAbort,
    TrainConfig,
    TrainError,
    adam_step,
    initialize_model,
    log_uniform,
    lr_at,
    prepare_landmarks,
    random_search,
    sample_config,
    train,
)

KERNEL = KernelSpec(kind="rbf", bandwidth=2.0)


def _cfg(**kw):
    base = dict(loss=LossSpec(kind="barlow_twins"), max_epochs=3, warmup_epochs=1,
                batch_size=32, patience=0, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def _toy_views(n=60, seed=0):
    ds = make_blobs(n=n, d=3, C=3, separation=6.0, seed=seed)
    return augment_tabular(ds, noise_sigma=0.05, drop_prob=0.1, p=2, seed=seed)


def test_train_config_validation():
    with pytest.raises(TrainError):
        _cfg(lr_init=1e-3, lr_min=1e-2)
    with pytest.raises(TrainError):
        _cfg(max_epochs=-1)
    with pytest.raises(TrainError):
        _cfg(patience=-2)
    with pytest.raises(TrainError):
        _cfg(batch_size=1)
    with pytest.raises(TrainError):
        _cfg(init="fancy")
    with pytest.raises(TrainError):
        _cfg(weight_decay=-0.1)
    assert _cfg(lr_init=0.0).lr_init == 0.0  # frozen-parameter runs are allowed


def test_train_config_roundtrip():
    cfg = _cfg(lr_init=3e-3, weight_decay=1e-4, precond=PrecondSpec(mode="ggn", lam_p=1e-2))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------------------
# optimizer pieces


def test_adam_scalar_oracle():
    # one parameter, two steps, hand-rolled update arithmetic
    p = {"w": np.array([1.0])}
    state = AdamState()
    b1, b2, eps = 0.9, 0.999, 1e-8
    m = v = 0.0
    x = 1.0
    for t, g in enumerate((0.5, -0.25), start=1):
        p = adam_step(p, {"w": np.array([g])}, state, lr=0.1)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - 0.1 * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        assert p["w"][0] == pytest.approx(x, rel=1e-12)


def test_adam_weight_decay_is_decoupled():
    state = AdamState()
    p = adam_step({"w": np.array([2.0])}, {"w": np.array([0.0])}, state, lr=0.1,
                  weight_decay=0.5)
    # zero gradient: the only movement is the decay term -lr * wd * w
    assert p["w"][0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0, rel=1e-12)


def test_adam_rejects_nonfinite_gradient():
    with pytest.raises(TrainError, match="non-finite"):
        adam_step({"w": np.zeros(2)}, {"w": np.array([np.nan, 0.0])}, AdamState(), lr=0.1)


def test_lr_schedule():
    cfg = _cfg(lr_init=1e-2, lr_min=1e-5, warmup_epochs=3, max_epochs=100)
    # linear ramp over the warm-up epochs
    for e in range(3):
        assert lr_at(e, cfg) == pytest.approx(1e-2 * (e + 1) / 4)
    # cosine start equals lr_init, end equals lr_min, then stays flat
    assert lr_at(3, cfg) == pytest.approx(1e-2)
    assert lr_at(3 + ANNEAL_HORIZON, cfg) == pytest.approx(1e-5)
    assert lr_at(3 + ANNEAL_HORIZON + 7, cfg) == pytest.approx(1e-5)
    mid = lr_at(3 + ANNEAL_HORIZON // 2, cfg)
    assert 1e-5 < mid < 1e-2
    assert lr_at(5, _cfg(lr_init=0.0)) == 0.0
    with pytest.raises(TrainError):
        lr_at(-1, cfg)


# ---------------------------------------------------------------------------
# model construction


def test_prepare_landmarks_methods():
    ds = _toy_views()
    for method in ("uniform", "kmeanspp", "leverage"):
        lm = prepare_landmarks(ds, KERNEL, method, m=8, seed=0, leverage_s=30)
        assert lm.m == 8
    with pytest.raises(TrainError):
        prepare_landmarks(ds, KERNEL, "grid", m=8, seed=0)


def test_initialize_model_shapes_and_labels():
    ds = _toy_views()
    lm = prepare_landmarks(ds, KERNEL, "uniform", m=10, seed=0)
    model = initialize_model(ds, KERNEL, lm, h=4)
    assert model.coef.shape == (10 * ds.p, 4)
    assert np.array_equal(model.bias, np.zeros(4))
    assert np.array_equal(model.landmark_labels, ds.y[lm.indices])
    r1 = initialize_model(ds, KERNEL, lm, h=4, init="random", seed=7)
    r2 = initialize_model(ds, KERNEL, lm, h=4, init="random", seed=7)
    assert np.array_equal(r1.coef, r2.coef)
    assert not np.array_equal(r1.coef, initialize_model(ds, KERNEL, lm, 4, "random", 8).coef)


# ---------------------------------------------------------------------------
# training loop


def _fresh(ds, m=10, h=4, init="pci"):
    lm = prepare_landmarks(ds, KERNEL, "uniform", m=m, seed=0)
    return initialize_model(ds, KERNEL, lm, h=h, init=init)


def test_train_improves_loss():
    ds = _toy_views()
    model = _fresh(ds)
    trained, report = train(model, ds, _cfg(max_epochs=8, lr_init=1e-2))
    assert len(report.epochs) == 8
    assert report.best_loss < report.epochs[0].loss
    assert report.best_epoch >= 1
    assert report.stop_reason == "max_epochs"
    assert not np.array_equal(trained.coef, model.coef)


def test_train_deterministic():
    ds = _toy_views()
    cfg = _cfg(max_epochs=4)
    _, r1 = train(_fresh(ds), ds, cfg)
    _, r2 = train(_fresh(ds), ds, cfg)
    assert np.array_equal(r1.loss_curve(), r2.loss_curve())


def test_train_early_stopping():
    # zero learning rate: no epoch improves on the first, patience trips
    ds = _toy_views()
    cfg = _cfg(lr_init=0.0, max_epochs=30, patience=2)
    _, report = train(_fresh(ds), ds, cfg)
    assert report.stop_reason == "early_stopping"
    assert len(report.epochs) == 3  # best at epoch 0, two bad epochs
    assert report.best_epoch == 0


def test_train_zero_epochs_returns_input():
    ds = _toy_views()
    model = _fresh(ds)
    trained, report = train(model, ds, _cfg(max_epochs=0))
    assert trained is model
    assert report.stop_reason == "max_epochs"
    assert report.epochs == []


def test_train_best_params_snapshot():
    # the returned model must correspond to best_epoch, not the final epoch
    ds = _toy_views()
    cfg = _cfg(max_epochs=6, lr_init=5e-2, warmup_epochs=0)
    trained, report = train(_fresh(ds), ds, cfg)
    assert report.best_loss == min(e.loss for e in report.epochs)


@pytest.mark.parametrize("kind", [
    "barlow_twins", "vicreg", "simclr", "byol",
    "simple_contrastive", "spectral_contrastive", "kpca", "kae",
])
def test_train_every_loss_runs(kind):
    ds = _toy_views(n=40)
    spec = {"barlow_twins": LossSpec(kind="barlow_twins", lam_reg=5e-3),
            "vicreg": LossSpec(kind="vicreg", lam=25.0, mu=25.0, nu=1.0),
            "simclr": LossSpec(kind="simclr", tau=0.5),
            "byol": LossSpec(kind="byol", beta=0.99),
            "simple_contrastive": LossSpec(kind="simple_contrastive"),
            "spectral_contrastive": LossSpec(kind="spectral_contrastive"),
            "kpca": LossSpec(kind="kpca", lam=1e-3),
            "kae": LossSpec(kind="kae", lam=1e-3)}[kind]
    _, report = train(_fresh(ds, m=6, h=3), ds, _cfg(loss=spec, max_epochs=2))
    assert len(report.epochs) == 2
    assert np.all(np.isfinite(report.loss_curve()))


def test_train_preconditioned_modes_run():
    ds = _toy_views(n=40)
    for mode in ("general", "ggn"):
        cfg = _cfg(max_epochs=2, precond=PrecondSpec(mode=mode, lam_p=1e-2))
        _, report = train(_fresh(ds, m=6, h=3), ds, cfg)
        assert np.all(np.isfinite(report.loss_curve()))
        if mode == "ggn":
            assert report.epochs[0].cg_iters > 0


def test_train_rejects_bad_combinations():
    ds = _toy_views(n=40)
    single = make_blobs(n=40, d=3, C=3, separation=6.0, seed=0)
    with pytest.raises(TrainError, match="views"):
        train(_fresh(ds, m=6, h=3), single, _cfg())
    with pytest.raises(TrainError, match="ggn"):
        train(_fresh(ds, m=6, h=3), ds,
              _cfg(loss=LossSpec(kind="vicreg"), precond=PrecondSpec(mode="ggn")))


def test_train_abort_on_nonfinite_loss(monkeypatch):
    ds = _toy_views(n=40)
    model = _fresh(ds, m=6, h=3)

    def bad_loss(K_a, K_b, A, gamma, lam_reg):
        return L.LossValueGrad(float("nan"), np.zeros_like(A), np.zeros_like(gamma))

    monkeypatch.setattr(L, "bt_loss", bad_loss)
    with pytest.raises(TrainAbort) as exc_info:
        train(model, ds, _cfg(max_epochs=2, batch_size=8))
    assert exc_info.value.report.stop_reason == "aborted"


def test_report_csv(tmp_path):
    ds = _toy_views(n=40)
    _, report = train(_fresh(ds, m=6, h=3), ds, _cfg(max_epochs=2))
    path = tmp_path / "report.csv"
    report.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,loss,lr,cg_iters,seconds"
    assert len(lines) == 3


# ---------------------------------------------------------------------------
# random search


def test_log_uniform_bounds(rng):
    vals = [log_uniform(rng, 1e-4, 1e-1) for _ in range(200)]
    assert all(1e-4 <= v <= 1e-1 for v in vals)
    with pytest.raises(TrainError):
        log_uniform(rng, 1e-1, 1e-4)


def test_sample_config_per_loss():
    rng = np.random.default_rng(0)
    for kind, field in (("barlow_twins", "lam_reg"), ("simclr", "tau"), ("vicreg", "lam")):
        space = SearchSpace(base=_cfg(loss=LossSpec(kind=kind)), evaluate=None)
        cfg = sample_config(space, rng)
        assert getattr(cfg.loss, field) != getattr(space.base.loss, field)
        assert cfg.lr_init != space.base.lr_init


def test_random_search_finds_argmax():
    # score is a deterministic function of the sampled lr; the search result
    # must match a brute-force scan of its own trial list
    space = SearchSpace(base=_cfg(), evaluate=lambda cfg: -abs(np.log10(cfg.lr_init) + 2.5))
    result = random_search(space, trials=12, seed=3)
    scores = [s for _, s in result.trials]
    assert len(result.trials) == 12
    assert result.best_score == max(scores)
    assert result.best is result.trials[int(np.argmax(scores))][0]
    again = random_search(space, trials=12, seed=3)
    assert [s for _, s in again.trials] == scores
    with pytest.raises(TrainError):
        random_search(space, trials=0, seed=0)
