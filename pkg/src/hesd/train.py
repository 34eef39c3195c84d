"""Training loop that produces checkpoint series for spectrum analysis."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .data import DatasetConfig, SyntheticDataset, make_dataset
from .errors import ConfigError, NumericalError
from .models import Batch, HessianOperator, Model, ModelSpec, accuracy, build_model, loss_tensor
from .optim import OptimizerConfig, OptimizerState, frozen_mask, optimizer_step
from .params import ParameterVector

log = logging.getLogger(__name__)

CONFIG_VERSION = 1


@dataclass(frozen=True)
class AnalysisConfig:
    n_probes: int = 10
    steps: int = 64
    sigma_factor: float = 0.01
    seed: int = 0
    power_iters: int = 100
    # None means the whole split
    batch_size: int | None = None

    def __post_init__(self):
        if self.n_probes < 1 or self.steps < 1:
            raise ConfigError("n_probes and steps must be >= 1", field="analysis.n_probes")
        if self.sigma_factor <= 0:
            raise ConfigError("sigma_factor must be positive", field="analysis.sigma_factor")


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    epochs: int = 100
    checkpoint_every: int = 10
    batch_size: int | None = None
    seed: int = 0
    run_id: str = "run"
    lr_decay_every: int | None = None
    lr_decay_factor: float = 0.1
    reinit: tuple[str, ...] = ()
    version: int = CONFIG_VERSION

    def __post_init__(self):
        object.__setattr__(self, "reinit", tuple(self.reinit))
        if self.version > CONFIG_VERSION:
            raise ConfigError(f"config version {self.version} is newer than supported",
                              field="version")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1", field="epochs")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1", field="checkpoint_every")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be positive", field="batch_size")
        if self.model.input_dim != self.dataset.input_dim:
            raise ConfigError("model input size differs from dataset input_dim",
                              field="model.sizes")
        if self.model.n_classes != self.dataset.n_classes:
            raise ConfigError("model output size differs from dataset n_classes",
                              field="model.sizes")

    def to_dict(self) -> dict:
        return {
            "version": self.version, "run_id": self.run_id, "seed": self.seed,
            "epochs": self.epochs, "checkpoint_every": self.checkpoint_every,
            "batch_size": self.batch_size, "lr_decay_every": self.lr_decay_every,
            "lr_decay_factor": self.lr_decay_factor, "reinit": list(self.reinit),
            "model": self.model.to_dict(), "dataset": self.dataset.to_dict(),
            "optimizer": self.optimizer.to_dict(), "analysis": asdict(self.analysis),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> RunConfig:
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            name = sorted(unknown)[0]
            raise ConfigError(f"unknown config field {name!r}", field=name)
        sections = {
            "model": ModelSpec.from_dict, "dataset": DatasetConfig.from_dict,
            "optimizer": OptimizerConfig.from_dict,
            "analysis": lambda a: _analysis_from_dict(a),
        }
        for key, parse in sections.items():
            if key in d:
                if not isinstance(d[key], Mapping):
                    raise ConfigError(f"{key} must be an object", field=key)
                d[key] = parse(d[key])
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _analysis_from_dict(d: Mapping) -> AnalysisConfig:
    unknown = set(d) - set(AnalysisConfig.__dataclass_fields__)
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"unknown analysis field {name!r}", field=f"analysis.{name}")
    return AnalysisConfig(**d)


@dataclass(frozen=True, eq=False)
class Checkpoint:
    epoch: int
    params: ParameterVector
    model: Model
    train_acc: float
    gen_acc: float
    optimizer: str
    run_id: str
    seed: int
    loss: float = float("nan")
    config_hash: str = ""

    @property
    def checkpoint_id(self) -> str:
        return f"{self.run_id}/epoch-{self.epoch:06d}"


@dataclass
class TrainResult:
    checkpoints: list[Checkpoint]
    metrics: list[dict]
    model: Model
    params: ParameterVector
    dataset: SyntheticDataset
    diverged: bool = False


def _reinit(model: Model, params: ParameterVector, names, seed: int) -> ParameterVector:
    if not names:
        return params
    _, fresh = build_model(model.spec, seed + 7919)
    vals = params.values.copy()
    for name in names:
        seg = params.segment(name)
        vals[seg.offset:seg.stop] = fresh.values[seg.offset:seg.stop]
    return params.with_values(vals)


def train(config: RunConfig, init: tuple[Model, ParameterVector] | None = None,
          on_checkpoint: Callable[[Checkpoint], None] | None = None) -> TrainResult:
    """Run the configured optimizer and emit a checkpoint every
    ``checkpoint_every`` epochs.

    ``init`` continues from existing weights (fine-tuning); segments listed in
    ``config.reinit`` are then drawn afresh. A non-finite loss ends the run
    early and keeps the checkpoints already produced.
    """
    cfg = config
    data = make_dataset(cfg.dataset)
    if init is None:
        model, params = build_model(cfg.model, cfg.seed)
    else:
        model, params = init
        model.check(params)
    if cfg.reinit:
        missing = [n for n in cfg.reinit if n not in params.names]
        if missing:
            raise ConfigError(f"reinit segment {missing[0]!r} not in model", field="reinit")
        params = _reinit(model, params, cfg.reinit, cfg.seed)
    if cfg.optimizer.frozen:
        frozen_mask(model.layout, cfg.optimizer.frozen)

    rng = np.random.default_rng([cfg.seed, 1])
    hess_rng = np.random.default_rng([cfg.seed, 2])
    state = OptimizerState()
    w = params.values.copy()
    n = len(data.train)
    bs = n if cfg.batch_size is None else min(cfg.batch_size, n)
    chash = cfg.config_hash()
    checkpoints, metrics = [], []
    diverged = False

    for epoch in range(1, cfg.epochs + 1):
        opt = cfg.optimizer
        if cfg.lr_decay_every:
            opt = replace(opt, lr=opt.lr * cfg.lr_decay_factor ** ((epoch - 1) // cfg.lr_decay_every))
        order = rng.permutation(n) if bs < n else np.arange(n)
        epoch_loss = 0.0
        try:
            for start in range(0, n, bs):
                batch = data.train.subset(order[start:start + bs])
                pv = params.with_values(w)
                stats: dict = {}
                leaves = model.leaves(pv)
                loss = loss_tensor(model, leaves, batch, train=True, stats=stats)
                if not np.isfinite(loss.item()):
                    raise NumericalError(f"loss became {loss.item()} at epoch {epoch}")
                g = np.concatenate([t.data.reshape(-1)
                                    for t in ad.grad(loss, list(leaves.values()))])
                hvp_op = HessianOperator(model, pv, batch) if opt.kind == "adahessian" else None
                w, state = optimizer_step(w, g, state, opt, model.layout, hvp_op, hess_rng)
                model = model.update_buffers(stats)
                epoch_loss += loss.item() * len(batch)
        except NumericalError as exc:
            log.warning("run %s diverged: %s", cfg.run_id, exc)
            diverged = True
            break
        if not np.all(np.isfinite(w)):
            log.warning("run %s diverged: non-finite weights at epoch %d", cfg.run_id, epoch)
            diverged = True
            break
        params = params.with_values(w)
        tr_acc = accuracy(model, params, data.train)
        ge_acc = accuracy(model, params, data.generalization)
        row = {"epoch": epoch, "loss": epoch_loss / n, "train_acc": tr_acc, "gen_acc": ge_acc}
        metrics.append(row)
        if epoch % cfg.checkpoint_every == 0:
            ck = Checkpoint(epoch, params, model, tr_acc, ge_acc, opt.kind, cfg.run_id,
                            cfg.seed, row["loss"], chash)
            checkpoints.append(ck)
            if on_checkpoint is not None:
                on_checkpoint(ck)
    return TrainResult(checkpoints, metrics, model, params, data, diverged)


def analysis_batch(data: SyntheticDataset, tag: str, size: int | None, seed: int) -> Batch:
    """Fixed subset of a split used for every Hessian evaluation."""
    split = data.split(tag)
    if size is None or size >= len(split):
        return split
    idx = np.sort(np.random.default_rng([seed, 3]).choice(len(split), size, replace=False))
    return split.subset(idx)
