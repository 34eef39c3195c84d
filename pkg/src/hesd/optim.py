"""Optimizers over flat parameter vectors.

Besides the usual SGD/momentum/AdamW updates this includes AdaHessian, whose
Hutchinson diagonal is averaged over contiguous blocks, and global-norm
gradient clipping. Both change the gradient the optimizer follows relative to
the one the loss Hessian describes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError, NumericalError
from .params import Segment

OPTIMIZERS = ("sgd", "sgd-momentum", "adamw", "adahessian")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.9
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    hutchinson_probes: int = 1
    block_size: int = 1
    hessian_power: float = 1.0
    clip_global_norm: float | None = None
    frozen: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "frozen", tuple(self.frozen))
        if self.kind not in OPTIMIZERS:
            raise ConfigError(
                f"unknown optimizer {self.kind!r} (choose from {', '.join(OPTIMIZERS)})",
                field="optimizer.kind")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive", field="optimizer.lr")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)", field="optimizer.momentum")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError("betas must be two values in [0, 1)", field="optimizer.betas")
        if self.eps <= 0 or self.weight_decay < 0:
            raise ConfigError("eps must be positive, weight_decay non-negative",
                              field="optimizer.eps")
        if self.block_size < 1:
            raise ConfigError("block_size must be >= 1", field="optimizer.block_size")
        if self.hutchinson_probes < 1:
            raise ConfigError("need at least one Hutchinson probe",
                              field="optimizer.hutchinson_probes")
        if self.clip_global_norm is not None and not self.clip_global_norm > 0:
            raise ConfigError("clip_global_norm must be positive",
                              field="optimizer.clip_global_norm")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"], d["frozen"] = list(self.betas), list(self.frozen)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> OptimizerConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            name = sorted(unknown)[0]
            raise ConfigError(f"unknown optimizer field {name!r}", field=f"optimizer.{name}")
        return cls(**d)


@dataclass
class OptimizerState:
    step: int = 0
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def buffer(self, name: str, n: int) -> np.ndarray:
        if name not in self.buffers:
            self.buffers[name] = np.zeros(n)
        return self.buffers[name]


def clip_global_norm(grads: np.ndarray, c: float) -> np.ndarray:
    """Rescale so the global L2 norm is at most ``c``."""
    if not c > 0:
        raise ValueError("clip norm must be positive")
    norm = float(np.linalg.norm(grads))
    if norm > c:
        return grads * (c / norm)
    return grads


def _check_finite(g: np.ndarray, what: str = "gradient") -> None:
    if not np.all(np.isfinite(g)):
        raise NumericalError(f"non-finite {what}; step aborted")


def sgd_step(w: np.ndarray, g: np.ndarray, state: OptimizerState, cfg: OptimizerConfig):
    _check_finite(g)
    state.step += 1
    return w - cfg.lr * (g + cfg.weight_decay * w), state


def sgd_momentum_step(w, g, state: OptimizerState, cfg: OptimizerConfig):
    _check_finite(g)
    state.step += 1
    vel = state.buffer("velocity", w.size)
    vel *= cfg.momentum
    vel += g + cfg.weight_decay * w
    return w - cfg.lr * vel, state


def adamw_step(w, g, state: OptimizerState, cfg: OptimizerConfig):
    _check_finite(g)
    b1, b2 = cfg.betas
    state.step += 1
    t = state.step
    m, v = state.buffer("m", w.size), state.buffer("v", w.size)
    m[:] = b1 * m + (1 - b1) * g
    v[:] = b2 * v + (1 - b2) * g * g
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    w = w * (1 - cfg.lr * cfg.weight_decay)
    return w - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps), state


def block_average(d: np.ndarray, layout: tuple[Segment, ...] | None, block: int) -> np.ndarray:
    """Replace each contiguous block of ``|d|`` by its mean, per segment.

    Blocks never straddle segment boundaries; a short trailing block is kept.
    """
    d = np.abs(np.asarray(d, dtype=np.float64))
    if block == 1:
        return d
    out = np.empty_like(d)
    spans = [(s.offset, s.stop) for s in layout] if layout else [(0, d.size)]
    for lo, hi in spans:
        for start in range(lo, hi, block):
            stop = min(start + block, hi)
            out[start:stop] = d[start:stop].mean()
    return out


def hutchinson_diagonal(hvp_op: Callable[[np.ndarray], np.ndarray], dim: int,
                        n_probes: int, rng: np.random.Generator) -> np.ndarray:
    """Mean of ``z * (H z)`` over Rademacher ``z``."""
    acc = np.zeros(dim)
    for _ in range(n_probes):
        z = rng.integers(0, 2, size=dim).astype(np.float64) * 2.0 - 1.0
        acc += z * hvp_op(z)
    return acc / n_probes


def adahessian_step(w, g, state: OptimizerState, cfg: OptimizerConfig,
                    hvp_op: Callable[[np.ndarray], np.ndarray],
                    layout: tuple[Segment, ...] | None, rng: np.random.Generator):
    _check_finite(g)
    d = hutchinson_diagonal(hvp_op, w.size, cfg.hutchinson_probes, rng)
    _check_finite(d, "Hessian diagonal")
    d = block_average(d, layout, cfg.block_size)
    b1, b2 = cfg.betas
    state.step += 1
    t = state.step
    m, v = state.buffer("m", w.size), state.buffer("v", w.size)
    m[:] = b1 * m + (1 - b1) * g
    v[:] = b2 * v + (1 - b2) * d * d
    state.buffers["D"] = d
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    denom = v_hat ** (cfg.hessian_power / 2) + cfg.eps
    w = w * (1 - cfg.lr * cfg.weight_decay)
    return w - cfg.lr * m_hat / denom, state


def frozen_mask(layout: tuple[Segment, ...], frozen) -> np.ndarray:
    names = {s.name for s in layout}
    for f in frozen:
        if f not in names:
            raise ConfigError(f"frozen segment {f!r} not in model", field="optimizer.frozen")
    mask = np.ones(layout[-1].stop if layout else 0, dtype=bool)
    for s in layout:
        if s.name in frozen:
            mask[s.offset:s.stop] = False
    return mask


def optimizer_step(w: np.ndarray, g: np.ndarray, state: OptimizerState, cfg: OptimizerConfig,
                   layout: tuple[Segment, ...], hvp_op=None,
                   rng: np.random.Generator | None = None) -> tuple[np.ndarray, OptimizerState]:
    """Clip (if configured), update, and leave frozen segments untouched."""
    _check_finite(g)
    mask = frozen_mask(layout, cfg.frozen) if cfg.frozen else None
    if mask is not None:
        g = np.where(mask, g, 0.0)
    if cfg.clip_global_norm is not None:
        g = clip_global_norm(g, cfg.clip_global_norm)
    if cfg.kind == "sgd":
        new, state = sgd_step(w, g, state, cfg)
    elif cfg.kind == "sgd-momentum":
        new, state = sgd_momentum_step(w, g, state, cfg)
    elif cfg.kind == "adamw":
        new, state = adamw_step(w, g, state, cfg)
    else:
        if hvp_op is None or rng is None:
            raise ValueError("adahessian needs an hvp operator and a generator")
        new, state = adahessian_step(w, g, state, cfg, hvp_op, layout, rng)
    if mask is not None:
        new = np.where(mask, new, w)
    return new, state
