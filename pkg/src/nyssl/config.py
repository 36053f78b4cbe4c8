"""Run configuration: TOML ingestion, validation, JSON mirror, content hash.

A run file is a single human-editable TOML document; the manifest written next
to every run holds its JSON mirror plus a sha256 over the canonical JSON so
any run can be reconstructed and verified byte-for-byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .data import SplitSpec
from .kernels import KernelSpec
from .losses import LossSpec
from .precondition import PrecondSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentSpec:
    noise_sigma: float = 0.1
    drop_prob: float = 0.1
    p: int = 2
    seed: int = 0

    def to_dict(self) -> dict:
        return {"noise_sigma": self.noise_sigma, "drop_prob": self.drop_prob, "p": self.p, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentSpec":
        return cls(**d)


@dataclass(frozen=True)
class RunConfig:
    run_name: str
    out_dir: str
    dataset_path: str
    label_column: str | None
    standardize: bool
    split: SplitSpec
    augment: AugmentSpec
    kernel: KernelSpec
    landmark_method: str
    m: int
    landmark_seed: int
    leverage_lam: float
    leverage_s: int
    h: int
    init_seed: int
    train: TrainConfig

    def to_dict(self) -> dict:
        return {
            "run_name": self.run_name,
            "out_dir": self.out_dir,
            "dataset": {
                "path": self.dataset_path,
                "label_column": self.label_column,
                "standardize": self.standardize,
                "split": {
                    "train_fraction": self.split.train_fraction,
                    "validation_fraction": self.split.validation_fraction,
                    "probe_label_fraction": self.split.probe_label_fraction,
                    "seed": self.split.seed,
                },
                "augment": self.augment.to_dict(),
            },
            "kernel": self.kernel.to_dict(),
            "landmarks": {
                "method": self.landmark_method,
                "m": self.m,
                "seed": self.landmark_seed,
                "leverage_lam": self.leverage_lam,
                "leverage_s": self.leverage_s,
            },
            "model": {"h": self.h, "init": self.train.init, "init_seed": self.init_seed},
            "loss": self.train.loss.to_dict(),
            "precondition": self.train.precond.to_dict(),
            "train": {
                k: v
                for k, v in self.train.to_dict().items()
                if k not in ("loss", "precond", "init")
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        try:
            ds = doc["dataset"]
            split = SplitSpec(**ds.get("split", {}))
            augment = AugmentSpec(**ds.get("augment", {}))
            kernel = KernelSpec.from_dict(doc["kernel"])
            lm = doc.get("landmarks", {})
            model = doc.get("model", {})
            loss = LossSpec.from_dict(doc["loss"])
            precond = PrecondSpec.from_dict(doc.get("precondition", {"mode": "none"}))
            train_kw = dict(doc.get("train", {}))
            train = TrainConfig(
                loss=loss, precond=precond, init=model.get("init", "pci"), **train_kw
            )
            return cls(
                run_name=doc["run_name"],
                out_dir=doc.get("out_dir", "runs"),
                dataset_path=ds["path"],
                label_column=ds.get("label_column"),
                standardize=bool(ds.get("standardize", True)),
                split=split,
                augment=augment,
                kernel=kernel,
                landmark_method=lm.get("method", "uniform"),
                m=int(lm["m"]),
                landmark_seed=int(lm.get("seed", 0)),
                leverage_lam=float(lm.get("leverage_lam", 1e-3)),
                leverage_s=int(lm.get("leverage_s", 50)),
                h=int(model["h"]),
                init_seed=int(model.get("init_seed", 0)),
                train=train,
            )
        except KeyError as exc:
            raise ConfigError(f"missing required config field: {exc.args[0]}") from exc
        except TypeError as exc:
            raise ConfigError(f"bad config structure: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def validate_paths(self) -> None:
        if not Path(self.dataset_path).exists():
            raise ConfigError(f"dataset path does not exist: {self.dataset_path}")

    def run_dir(self) -> Path:
        return Path(self.out_dir) / self.run_name


def load_run_config(path) -> RunConfig:
    """Parse a run config: TOML normally, or its JSON mirror for .json paths."""
    try:
        with open(path, "rb") as fh:
            if str(path).endswith(".json"):
                doc = json.load(fh)
            else:
                doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be a table: {path}")
    return RunConfig.from_dict(doc)


def config_sha256(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def write_manifest(cfg: RunConfig, path, extra: dict | None = None) -> None:
    import numpy
    import scipy

    from . import __version__

    payload = {
        "config": cfg.to_dict(),
        "config_sha256": config_sha256(cfg),
        "seed": cfg.train.seed,
        "versions": {
            "package": __version__,
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
        },
    }
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def verify_manifest(cfg: RunConfig, manifest_path) -> bool:
    """True when the stored hash matches the given config's canonical JSON."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    return manifest.get("config_sha256") == config_sha256(cfg)
