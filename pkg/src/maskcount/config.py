"""Run configuration: sectioned key=value files, parsed strictly.

Unknown sections or keys are errors, so a stale config never drifts silently.
Every artifact embeds the config fingerprint (sha256 over the canonical dump)
so mismatched runs are caught at comparison time.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

from .counter import TrainCfg
from .errors import ConfigError


@dataclass
class Paths:
    data_dir: str = "data"
    models_dir: str = "models"
    reports_dir: str = "reports"


@dataclass
class Config:
    height: int = 128
    width: int = 128
    r: int = 8
    d: int = 16
    exemplar_size: int = 32
    sigma: float = 2.0
    k_min: int = 2
    k_max: int = 6
    tau: float = 0.5
    train: TrainCfg = field(default_factory=lambda: TrainCfg(epochs=300, lr=1e-2, batch=8, seed=1234))
    paths: Paths = field(default_factory=Paths)

    @property
    def canvas(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def k_range(self) -> tuple[int, int]:
        return (self.k_min, self.k_max)

    def validate(self) -> None:
        if self.height < 64 or self.width < 64:
            raise ConfigError(f"canvas must be at least 64x64, got {self.height}x{self.width}")
        if self.r < 2 or (self.r & (self.r - 1)) != 0:
            raise ConfigError(f"r must be a power of two >= 2, got {self.r}")
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if self.exemplar_size < self.r:
            raise ConfigError(f"exemplar_size must be >= r, got {self.exemplar_size}")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if not 1 <= self.k_min <= self.k_max:
            raise ConfigError(f"bad k range [{self.k_min}, {self.k_max}]")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if self.train.epochs < 1 or self.train.batch < 1 or self.train.lr < 0:
            raise ConfigError(f"bad train section {self.train}")

    def canonical(self) -> str:
        lines = [
            f"canvas.height={self.height}",
            f"canvas.width={self.width}",
            f"model.r={self.r}",
            f"model.d={self.d}",
            f"model.exemplar_size={self.exemplar_size}",
            f"density.sigma={self.sigma!r}",
            f"pseudo.k_min={self.k_min}",
            f"pseudo.k_max={self.k_max}",
            f"segment.tau={self.tau!r}",
            f"train.epochs={self.train.epochs}",
            f"train.lr={self.train.lr!r}",
            f"train.batch={self.train.batch}",
            f"train.seed={self.train.seed}",
        ]
        return "\n".join(lines)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()[:16]

    def with_seed(self, seed: int) -> "Config":
        return replace(self, train=replace(self.train, seed=seed))


_SCHEMA: dict[str, dict[str, type]] = {
    "canvas": {"height": int, "width": int},
    "model": {"r": int, "d": int, "exemplar_size": int},
    "density": {"sigma": float},
    "pseudo": {"k_min": int, "k_max": int},
    "segment": {"tau": float},
    "train": {"epochs": int, "lr": float, "batch": int, "seed": int},
    "paths": {"data_dir": str, "models_dir": str, "reports_dir": str},
}


def parse_config(path) -> Config:
    """Read a sectioned key=value file; unknown keys are configuration errors."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from e

    cfg = Config()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key '{key}' in section [{section}]")
            kind = _SCHEMA[section][key]
            try:
                value = kind(raw)
            except ValueError as e:
                raise ConfigError(f"{path}: [{section}] {key}={raw!r}: {e}") from e
            if section == "canvas":
                setattr(cfg, key, value)
            elif section == "model":
                setattr(cfg, key, value)
            elif section == "density":
                cfg.sigma = value
            elif section == "pseudo":
                setattr(cfg, key, value)
            elif section == "segment":
                cfg.tau = value
            elif section == "train":
                setattr(cfg.train, key, value)
            else:
                setattr(cfg.paths, key, value)
    cfg.validate()
    return cfg


def write_config(cfg: Config, path) -> None:
    """Write a config file that parse_config reads back equivalently."""
    parser = configparser.ConfigParser(interpolation=None)
    parser["canvas"] = {"height": str(cfg.height), "width": str(cfg.width)}
    parser["model"] = {
        "r": str(cfg.r),
        "d": str(cfg.d),
        "exemplar_size": str(cfg.exemplar_size),
    }
    parser["density"] = {"sigma": repr(cfg.sigma)}
    parser["pseudo"] = {"k_min": str(cfg.k_min), "k_max": str(cfg.k_max)}
    parser["segment"] = {"tau": repr(cfg.tau)}
    parser["train"] = {
        "epochs": str(cfg.train.epochs),
        "lr": repr(cfg.train.lr),
        "batch": str(cfg.train.batch),
        "seed": str(cfg.train.seed),
    }
    parser["paths"] = {
        "data_dir": cfg.paths.data_dir,
        "models_dir": cfg.paths.models_dir,
        "reports_dir": cfg.paths.reports_dir,
    }
    with open(path, "w", encoding="utf-8") as f:
        parser.write(f)
