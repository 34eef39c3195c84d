"""Seeded synthetic classification data with a shifted generalization split."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigError
from .models import Batch

GENERATORS = ("gaussian-blobs", "two-moons-like", "random-label")
SPLITS = ("train", "generalization")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "gaussian-blobs"
    n_samples: int = 200
    n_generalization: int | None = None
    input_dim: int = 2
    n_classes: int = 2
    seed: int = 0
    separation: float = 3.0
    noise: float = 1.0
    # generalization split: mean offset (in units of noise) and noise inflation
    shift: float = 0.75
    noise_scale: float = 1.25

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}", field="dataset.kind")
        if self.n_samples < 1 or (self.n_generalization is not None and self.n_generalization < 1):
            raise ConfigError("sample counts must be positive", field="dataset.n_samples")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be positive", field="dataset.input_dim")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes", field="dataset.n_classes")
        if self.kind == "two-moons-like" and self.input_dim < 2:
            raise ConfigError("two-moons-like needs input_dim >= 2", field="dataset.input_dim")
        if self.noise < 0 or self.noise_scale <= 0:
            raise ConfigError("noise must be non-negative", field="dataset.noise")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> DatasetConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            name = sorted(unknown)[0]
            raise ConfigError(f"unknown dataset field {name!r}", field=f"dataset.{name}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    config: DatasetConfig
    train: Batch
    generalization: Batch

    def split(self, tag: str) -> Batch:
        if tag not in SPLITS:
            raise ConfigError(f"unknown split {tag!r}", field="dataset.split")
        return self.train if tag == "train" else self.generalization


def _balanced_labels(n: int, c: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % c)


def _embedding(cfg: DatasetConfig, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal 2 -> input_dim embedding for the planar generator."""
    q, _ = np.linalg.qr(rng.normal(size=(cfg.input_dim, 2)))
    return q.T


def _centres(cfg: DatasetConfig, rng: np.random.Generator) -> np.ndarray:
    """Class means at distance ``separation`` from the origin, mutually
    orthogonal when there are no more classes than dimensions."""
    raw = rng.normal(size=(cfg.input_dim, cfg.n_classes))
    if cfg.n_classes <= cfg.input_dim:
        raw, _ = np.linalg.qr(raw)
    centres = raw.T
    return centres * (cfg.separation / np.linalg.norm(centres, axis=1, keepdims=True))


def _moons(labels: np.ndarray, noise: float, rng: np.random.Generator) -> np.ndarray:
    t = rng.uniform(0.0, np.pi, size=labels.size)
    k = labels.astype(np.float64)
    sign = np.where(labels % 2 == 0, 1.0, -1.0)
    x = np.cos(t) * sign + k
    y = np.sin(t) * sign - 0.5 * (labels % 2)
    return np.stack([x, y], axis=1) + noise * 0.1 * rng.normal(size=(labels.size, 2))


def make_dataset(config: DatasetConfig) -> SyntheticDataset:
    """Train and generalization splits, both drawn from ``config.seed``.

    The generalization split moves every sample by a fixed random direction
    of length ``shift * noise`` and inflates the noise, which lowers accuracy
    of a model fit on the train split.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    n_gen = cfg.n_generalization if cfg.n_generalization is not None else cfg.n_samples
    y_tr = _balanced_labels(cfg.n_samples, cfg.n_classes, rng)
    y_ge = _balanced_labels(n_gen, cfg.n_classes, rng)

    direction = rng.normal(size=cfg.input_dim)
    direction /= np.linalg.norm(direction)
    offset = cfg.shift * max(cfg.noise, 1e-12) * direction

    if cfg.kind == "gaussian-blobs":
        centres = _centres(cfg, rng)
        x_tr = centres[y_tr] + cfg.noise * rng.normal(size=(cfg.n_samples, cfg.input_dim))
        x_ge = centres[y_ge] + cfg.noise * cfg.noise_scale * rng.normal(
            size=(n_gen, cfg.input_dim))
    elif cfg.kind == "two-moons-like":
        emb = _embedding(cfg, rng)
        x_tr = _moons(y_tr, cfg.noise, rng) @ emb
        x_ge = _moons(y_ge, cfg.noise * cfg.noise_scale, rng) @ emb
        offset = offset * 0.1
    else:
        x_tr = rng.normal(size=(cfg.n_samples, cfg.input_dim))
        x_ge = rng.normal(size=(n_gen, cfg.input_dim)) * cfg.noise_scale
    x_ge = x_ge + offset
    return SyntheticDataset(cfg, Batch(x_tr, y_tr, cfg.n_classes), Batch(x_ge, y_ge, cfg.n_classes))
