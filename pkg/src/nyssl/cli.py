"""Command-line surface: landmark selection, training, embedding, probing,
interpretation, hyperparameter sweeps, and report rendering.

Heavy numerical imports happen inside the command handlers so that the
--threads flag (or NYSSL_THREADS) can pin BLAS thread counts before numpy
loads. Exit codes: 0 success, 1 validation/config error, 2 training abort,
3 I/O failure.
"""

from __future__ import annotations

import argparse
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ABORT = 2
EXIT_IO = 3

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


def _pin_threads(threads: int | None) -> None:
    """Export BLAS thread caps; must run before numpy is first imported."""
    if threads is None:
        env = os.environ.get("NYSSL_THREADS")
        if env is None:
            return
        threads = int(env)
    if threads < 1:
        raise ValueError(f"--threads must be >= 1, got {threads}")
    for var in _THREAD_VARS:
        os.environ[var] = str(threads)


# ---------------------------------------------------------------------------
# shared pipeline pieces


def _load_config(args):
    from dataclasses import replace

    from .config import load_run_config

    cfg = load_run_config(args.config)
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    if getattr(args, "seed", None) is not None:
        # Override every algorithmic seed; the split seed stays pinned by the
        # config so seed sweeps compare models on one fixed partition.
        cfg = replace(
            cfg,
            landmark_seed=args.seed,
            init_seed=args.seed,
            augment=replace(cfg.augment, seed=args.seed),
            train=replace(cfg.train, seed=args.seed),
        )
    cfg.validate_paths()
    return cfg


def _load_full_dataset(cfg):
    from .data import load_csv, standardize

    ds = load_csv(cfg.dataset_path, cfg.label_column)
    if cfg.standardize:
        ds = standardize(ds)
    return ds


def _prepare_splits(cfg):
    """(augmented train split, validation split, test split)."""
    from .data import augment_tabular, split_dataset

    full = _load_full_dataset(cfg)
    train_ds, val_ds, test_ds = split_dataset(full, cfg.split)
    aug = cfg.augment
    train_aug = augment_tabular(train_ds, aug.noise_sigma, aug.drop_prob, aug.p, aug.seed)
    return train_aug, val_ds, test_ds


def _select_landmarks(cfg, ds):
    from .trainer import prepare_landmarks

    return prepare_landmarks(
        ds,
        cfg.kernel,
        cfg.landmark_method,
        cfg.m,
        cfg.landmark_seed,
        leverage_lam=cfg.leverage_lam,
        leverage_s=cfg.leverage_s,
    )


def _run_dir(cfg):
    d = cfg.run_dir()
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_plain_dataset(args):
    """Dataset for the model-file commands (embed/probe/interpret)."""
    from .data import load_csv, standardize

    ds = load_csv(args.data, args.label_column)
    if not args.no_standardize:
        ds = standardize(ds)
    return ds


# ---------------------------------------------------------------------------
# command handlers


def cmd_make_data(args) -> int:
    import csv

    from .data import make_blobs, make_moons

    seed = args.seed if args.seed is not None else 0
    if args.kind == "blobs":
        ds = make_blobs(args.n, args.d, args.classes, args.separation, seed)
    else:
        ds = make_moons(args.n, args.noise, seed)
    with open(args.out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(ds.d)] + ["label"])
        for i in range(ds.n):
            writer.writerow([repr(float(v)) for v in ds.X[i]] + [int(ds.y[i])])
    print(f"wrote {ds.n} x {ds.d} {args.kind} dataset to {args.out_path}")
    return EXIT_OK


def cmd_select_landmarks(args) -> int:
    import csv

    import numpy as np

    cfg = _load_config(args)
    train_aug, _, _ = _prepare_splits(cfg)
    lms = _select_landmarks(cfg, train_aug)
    run_dir = _run_dir(cfg)
    out = run_dir / "landmarks.csv"
    scores = lms.scores if lms.scores is not None else np.ones(lms.m)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "score"])
        for idx, sc in zip(lms.indices, scores):
            writer.writerow([int(idx), repr(float(sc))])
    print(f"selected {lms.m} landmarks by {lms.method} -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import write_manifest
    from .evaluate import spectrum
    from .model import save_model
    from .trainer import TrainAbort, initialize_model, train

    cfg = _load_config(args)
    train_aug, _, _ = _prepare_splits(cfg)
    lms = _select_landmarks(cfg, train_aug)
    model0 = initialize_model(train_aug, cfg.kernel, lms, cfg.h, cfg.train.init, cfg.init_seed)
    run_dir = _run_dir(cfg)
    try:
        model, report = train(model0, train_aug, cfg.train)
    except TrainAbort as abort:
        abort.report.to_csv(run_dir / "train_report.csv")
        raise
    save_model(model, run_dir / "model.nysm")
    report.to_csv(run_dir / "train_report.csv")
    spectrum(model.coef).to_csv(run_dir / "spectrum.csv")
    write_manifest(
        cfg,
        run_dir / "manifest.json",
        extra={
            "best_epoch": report.best_epoch,
            "best_loss": report.best_loss,
            "stop_reason": report.stop_reason,
        },
    )
    print(
        f"trained {cfg.train.loss.kind} for {len(report.epochs)} epochs "
        f"(best loss {report.best_loss:.6g} at epoch {report.best_epoch}) -> {run_dir}"
    )
    return EXIT_OK


def cmd_embed(args) -> int:
    from .data import save_embeddings
    from .model import embed, load_model

    model = load_model(args.model)
    ds = _load_plain_dataset(args)
    Z = embed(model, ds.X)
    save_embeddings(args.out_path, Z)
    print(f"embedded {Z.shape[0]} points into {Z.shape[1]} dimensions -> {args.out_path}")
    return EXIT_OK


def cmd_probe(args) -> int:
    from pathlib import Path

    from .data import SplitSpec, split_dataset
    from .evaluate import EvalError, linear_probe
    from .model import embed, load_model

    model = load_model(args.model)
    ds = _load_plain_dataset(args)
    if ds.y is None:
        raise EvalError("probing requires a labeled dataset; pass --label-column")
    train_ds, _, test_ds = split_dataset(ds, SplitSpec(seed=args.split_seed))
    Z_train = embed(model, train_ds.X)
    Z_test = embed(model, test_ds.X)
    seed = args.seed if args.seed is not None else 0
    result = linear_probe(
        Z_train, train_ds.y, Z_test, test_ds.y, args.label_fraction, seed=seed
    )
    out_dir = Path(args.out) if args.out else Path(args.model).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    result.to_csv(out_dir / "probe.csv")
    print(
        f"accuracy {result.accuracy:.4f} balanced_accuracy {result.balanced_accuracy:.4f} "
        f"({result.n_labeled_used} labeled points)"
    )
    return EXIT_OK


def _parse_concept(name: str, ds):
    """Concept names take the form class=<label>; returns the class id."""
    from .interpret import InterpretError

    if not name.startswith("class="):
        raise InterpretError(f"unknown concept {name!r}; expected class=<label>")
    try:
        c = int(name.split("=", 1)[1])
    except ValueError:
        raise InterpretError(f"unknown concept {name!r}; label must be an integer") from None
    if ds.y is None:
        raise InterpretError("concept scoring requires a labeled dataset")
    import numpy as np

    if c not in np.unique(ds.y):
        raise InterpretError(f"unknown concept {name!r}; class {c} absent from labels")
    return c


def cmd_interpret(args) -> int:
    from pathlib import Path

    import numpy as np

    from .interpret import (
        InterpretError,
        class_coverage_kappa,
        concept_profile,
        influence_scores,
        influence_to_csv,
        learn_cav,
        profile_to_json,
        rank_landmarks,
    )
    from .model import embed, load_model

    if not (args.kappa or args.influence is not None or args.concept):
        raise InterpretError("nothing to do: pass --kappa, --influence, or --concept")
    model = load_model(args.model)
    ds = _load_plain_dataset(args) if args.data else None
    out_dir = Path(args.out) if args.out else Path(args.model).parent
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.kappa:
        if model.landmark_labels is None:
            raise InterpretError("model carries no landmark labels; retrain on labeled data")
        if ds is not None and ds.y is not None:
            label_set = np.unique(ds.y)
        else:
            label_set = np.unique(model.landmark_labels)
        ranking = rank_landmarks(model.coef)
        # coef rows are view-major (p, m) stacked; row j*m+i carries landmark i's label
        row_labels = np.tile(model.landmark_labels, model.p)
        kappa = class_coverage_kappa(ranking, row_labels, label_set)
        print(f"kappa {kappa}")

    test_id = args.influence if args.influence is not None else 0
    if args.influence is not None or args.concept:
        if ds is None:
            raise InterpretError("--influence and --concept require --data")
        if not (0 <= test_id < ds.n):
            raise InterpretError(f"test index {test_id} out of range for n={ds.n}")
        x_test = ds.X[test_id]

    if args.influence is not None:
        records = influence_scores(model, x_test, top_k=args.top, test_index=test_id)
        influence_to_csv(records, out_dir / "influence.csv")
        print(f"influence: top {len(records)} landmarks for test point {test_id} -> influence.csv")

    if args.concept:
        c = _parse_concept(args.concept, ds)
        Z = embed(model, ds.X)
        cav_seed = args.seed if args.seed is not None else 0
        cav = learn_cav(Z[ds.y == c], Z[ds.y != c], seed=cav_seed, name=args.concept)
        profile = concept_profile(model, cav.v, x_test, args.top, test_index=test_id)
        profile_to_json(profile, args.concept, out_dir / "profile.json")
        print(
            f"concept {args.concept}: psi_{args.top} = {profile.psi:.6g} "
            f"(cav holdout accuracy {cav.holdout_accuracy:.3f}) -> profile.json"
        )
    return EXIT_OK


def _sweep_rows(trials):
    rows = []
    for i, (tc, score) in enumerate(trials):
        rows.append(
            [
                i,
                repr(float(score)),
                repr(tc.lr_init),
                repr(tc.loss.lam_reg),
                repr(tc.loss.tau),
                repr(tc.loss.lam),
            ]
        )
    return rows


def cmd_sweep(args) -> int:
    import csv
    import json
    from dataclasses import replace

    import numpy as np

    from .evaluate import linear_probe
    from .model import embed
    from .trainer import (
        SearchResult,
        SearchSpace,
        TrainAbort,
        initialize_model,
        random_search,
        sample_config,
        train,
    )

    cfg = _load_config(args)
    train_aug, val_ds, _ = _prepare_splits(cfg)
    if train_aug.y is None or val_ds.y is None:
        raise ValueError("sweep scoring requires a labeled dataset")
    lms = _select_landmarks(cfg, train_aug)

    counts = np.bincount(train_aug.y)
    counts = counts[counts > 0]
    imbalanced = counts.max() / counts.min() > 3.0

    def evaluate(tc):
        model0 = initialize_model(train_aug, cfg.kernel, lms, cfg.h, tc.init, cfg.init_seed)
        try:
            model, _ = train(model0, train_aug, tc)
        except TrainAbort:
            return float("-inf")
        Z_train = embed(model, train_aug.X)
        Z_val = embed(model, val_ds.X)
        result = linear_probe(
            Z_train,
            train_aug.y,
            Z_val,
            val_ds.y,
            cfg.split.probe_label_fraction,
            seed=tc.seed,
        )
        return result.balanced_accuracy if imbalanced else result.accuracy

    space = SearchSpace(base=cfg.train, evaluate=evaluate)
    seed = args.seed if args.seed is not None else cfg.train.seed
    if args.parallel > 1:
        # identical trial stream: sample everything up front, score in a pool
        from concurrent.futures import ThreadPoolExecutor

        rng = np.random.default_rng(seed)
        configs = [sample_config(space, rng) for _ in range(args.trials)]
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            scores = list(pool.map(evaluate, configs))
        best_i = int(np.argmax(scores))
        result = SearchResult(
            best=configs[best_i],
            best_score=float(scores[best_i]),
            trials=list(zip(configs, [float(s) for s in scores])),
        )
    else:
        result = random_search(space, args.trials, seed)

    run_dir = _run_dir(cfg)
    with open(run_dir / "sweep_trials.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "score", "lr_init", "lam_reg", "tau", "lam"])
        writer.writerows(_sweep_rows(result.trials))
    best_run = replace(cfg, train=result.best)
    with open(run_dir / "best_config.json", "w") as fh:
        json.dump(best_run.to_dict(), fh, indent=2, sort_keys=True)
    print(
        f"sweep: {args.trials} trials, best score {result.best_score:.4f} "
        f"-> sweep_trials.csv, best_config.json"
    )
    return EXIT_OK


def cmd_report(args) -> int:
    from pathlib import Path

    from .report import render_report

    if args.run:
        run_dir = Path(args.run)
    elif args.config:
        cfg = _load_config(args)
        run_dir = cfg.run_dir()
    else:
        raise ValueError("report needs --run or --config")
    rendered = render_report(run_dir)
    for name, path in rendered:
        print(f"{name} -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nyssl",
        description="Nystrom self-supervised representation learning pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap (env NYSSL_THREADS as fallback)")
    common.add_argument("--seed", type=int, default=None, help="override algorithmic seeds")

    cfg_args = argparse.ArgumentParser(add_help=False)
    cfg_args.add_argument("--config", required=True, help="run config (TOML, or JSON mirror)")
    cfg_args.add_argument("--out", default=None, help="override the config's output directory")

    model_args = argparse.ArgumentParser(add_help=False)
    model_args.add_argument("--model", required=True, help="trained model file (.nysm)")
    model_args.add_argument("--data", default=None, help="dataset CSV")
    model_args.add_argument("--label-column", default=None, help="label column name")
    model_args.add_argument("--no-standardize", action="store_true",
                            help="skip feature standardization")
    model_args.add_argument("--out", default=None,
                            help="output directory (default: model's directory)")

    p = sub.add_parser("make-data", parents=[common], help="synthesize a benchmark dataset CSV")
    p.add_argument("--kind", choices=("blobs", "moons"), required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--d", type=int, default=2, help="blobs feature dimension")
    p.add_argument("--classes", type=int, default=3, help="blobs cluster count")
    p.add_argument("--separation", type=float, default=6.0, help="blobs center separation")
    p.add_argument("--noise", type=float, default=0.1, help="moons noise sigma")
    p.add_argument("--out-path", required=True, help="destination CSV path")
    p.set_defaults(handler=cmd_make_data)

    p = sub.add_parser("select-landmarks", parents=[common, cfg_args],
                       help="select landmarks and dump their indices/scores")
    p.set_defaults(handler=cmd_select_landmarks)

    p = sub.add_parser("train", parents=[common, cfg_args],
                       help="train a model; writes model.nysm, train_report.csv, manifest.json")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("embed", parents=[common, model_args],
                       help="embed a dataset with a trained model")
    p.add_argument("--out-path", required=True, help="destination embedding file (.nysb)")
    p.set_defaults(handler=cmd_embed)

    p = sub.add_parser("probe", parents=[common, model_args],
                       help="linear probe accuracy on a labeled dataset")
    p.add_argument("--label-fraction", type=float, default=0.10)
    p.add_argument("--split-seed", type=int, default=0, help="probe train/test split seed")
    p.set_defaults(handler=cmd_probe)

    p = sub.add_parser("interpret", parents=[common, model_args],
                       help="landmark rankings, influence scores, concept profiles")
    p.add_argument("--kappa", action="store_true", help="print the class coverage depth")
    p.add_argument("--influence", type=int, default=None, metavar="X_ID",
                   help="rank landmarks by influence on test point X_ID")
    p.add_argument("--concept", default=None, metavar="NAME",
                   help="concept to score, e.g. class=0")
    p.add_argument("--top", type=int, default=10, help="rows/landmarks to keep")
    p.set_defaults(handler=cmd_interpret)

    p = sub.add_parser("sweep", parents=[common, cfg_args],
                       help="random hyperparameter search scored by validation probe")
    p.add_argument("--trials", type=int, default=8)
    p.add_argument("--parallel", type=int, default=1,
                   help="score this many trials concurrently")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("report", parents=[common],
                       help="render run artifacts into figures plus a summary CSV")
    p.add_argument("--run", default=None, help="run directory to render")
    p.add_argument("--config", default=None, help="config whose run directory to render")
    p.add_argument("--out", default=None, help="override the config's output directory")
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _pin_threads(args.threads)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    from .trainer import TrainAbort

    try:
        return args.handler(args)
    except TrainAbort as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
