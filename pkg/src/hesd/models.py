"""Toy classifiers and the loss/gradient/Hessian-vector-product entry points.

Three architectures are available:

* ``mlp``: dense layers ``sizes[0] -> ... -> sizes[-1]``.
* ``wide-dense``: an MLP whose first hidden layer is a dense block of
  ``width`` units, the stand-in for a transformer hidden dimension.
* ``convnet``: one 1-D convolution (``kernel_size`` taps, ``channels``
  filters) over the input vector, flattened into the dense stack.

Optional batch normalisation sits before every hidden activation. Analysis
always runs in evaluation mode, where the running statistics are constants.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericalError, ParameterCapError, ShapeMismatchError
from .params import ParameterVector, Segment, make_layout

KINDS = ("mlp", "convnet", "wide-dense")
ACTIVATIONS = ("relu", "tanh")
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "mlp"
    sizes: tuple[int, ...] = (2, 16, 2)
    activation: str = "tanh"
    use_batchnorm: bool = False
    width: int = 64
    kernel_size: int = 3
    channels: int = 4
    param_cap: int = 50_000

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}", field="model.kind")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}",
                              field="model.activation")
        if len(self.sizes) < 2 or any(s < 1 for s in self.sizes):
            raise ConfigError("sizes must list >= 2 positive widths", field="model.sizes")
        if self.kind == "mlp" and len(self.sizes) < 3:
            raise ConfigError("an mlp needs at least one hidden layer", field="model.sizes")
        if self.kind == "convnet" and not 1 <= self.kernel_size <= self.sizes[0]:
            raise ConfigError("kernel_size must fit inside the input",
                              field="model.kernel_size")
        if self.width < 1 or self.channels < 1:
            raise ConfigError("width and channels must be positive", field="model.width")

    @property
    def n_classes(self) -> int:
        return self.sizes[-1]

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sizes"] = list(self.sizes)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> ModelSpec:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            name = sorted(unknown)[0]
            raise ConfigError(f"unknown model field {name!r}", field=f"model.{name}")
        return cls(**d)


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int | None = None

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise ShapeMismatchError(f"inputs must be 2-D, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ShapeMismatchError(
                f"{x.shape[0]} inputs but {y.shape[0] if y.ndim else 0} labels")
        if x.shape[0] == 0:
            raise ShapeMismatchError("empty batch")
        if not np.issubdtype(y.dtype, np.integer):
            raise ShapeMismatchError("labels must be integer class indices")
        if y.min() < 0 or (self.n_classes is not None and y.max() >= self.n_classes):
            raise ShapeMismatchError("label outside class range")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y.astype(np.int64))

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx) -> Batch:
        return Batch(self.inputs[idx], self.labels[idx], self.n_classes)


def _layer_plan(spec: ModelSpec) -> list[tuple[str, int, int]]:
    """Dense layers as ``(prefix, fan_in, fan_out)``."""
    if spec.kind == "convnet":
        positions = spec.input_dim - spec.kernel_size + 1
        widths = [positions * spec.channels, *spec.sizes[1:]]
    elif spec.kind == "wide-dense":
        widths = [spec.input_dim, spec.width, *spec.sizes[1:]]
    else:
        widths = list(spec.sizes)
    plan = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        prefix = "wide" if spec.kind == "wide-dense" and i == 0 else f"dense{i}"
        plan.append((prefix, a, b))
    return plan


def _shapes(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    shapes = []
    if spec.kind == "convnet":
        shapes += [("conv.weight", (spec.kernel_size, spec.channels)),
                   ("conv.bias", (spec.channels,))]
    plan = _layer_plan(spec)
    for i, (prefix, a, b) in enumerate(plan):
        shapes += [(f"{prefix}.weight", (a, b)), (f"{prefix}.bias", (b,))]
        if spec.use_batchnorm and i < len(plan) - 1:
            shapes += [(f"bn{i}.gamma", (b,)), (f"bn{i}.beta", (b,))]
    return shapes


def parameter_count(spec: ModelSpec) -> int:
    return sum(int(np.prod(s)) for _, s in _shapes(spec))


@dataclass(frozen=True, eq=False)
class Model:
    """Architecture plus non-trainable buffers (batchnorm running statistics)."""

    spec: ModelSpec
    layout: tuple[Segment, ...]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return self.layout[-1].stop if self.layout else 0

    def with_buffers(self, buffers: Mapping[str, np.ndarray]) -> Model:
        return Model(self.spec, self.layout, {k: np.array(v) for k, v in buffers.items()})

    def check(self, params: ParameterVector) -> None:
        if params.segments == self.layout:
            return
        for want, got in zip(self.layout, params.segments):
            if want != got:
                raise ShapeMismatchError(
                    f"segment {want.name!r} does not match model layout "
                    f"(expected shape {want.shape} at offset {want.offset}, "
                    f"got {got.name!r} {got.shape} at {got.offset})", segment=want.name)
        raise ShapeMismatchError(
            f"model expects {len(self.layout)} segments, params have {len(params.segments)}",
            segment=(self.layout[len(params.segments)].name
                     if len(self.layout) > len(params.segments) else None))

    def leaves(self, params: ParameterVector, requires_grad: bool = True) -> dict[str, Tensor]:
        self.check(params)
        return {s.name: Tensor(params.values[s.offset:s.stop].reshape(s.shape),
                               requires_grad=requires_grad, name=s.name)
                for s in self.layout}

    def logits(self, w: Mapping[str, Tensor], x, train: bool = False,
               stats: dict | None = None) -> Tensor:
        """Forward pass. In ``train`` mode batchnorm uses batch statistics and,
        if ``stats`` is given, records them there."""
        spec = self.spec
        h = ad.as_tensor(x)
        if spec.kind == "convnet":
            k, positions = spec.kernel_size, spec.input_dim - spec.kernel_size + 1
            idx = np.arange(positions)[:, None] + np.arange(k)[None, :]
            patches = ad.gather_cols(h, idx.reshape(-1)).reshape(h.shape[0] * positions, k)
            h = patches @ w["conv.weight"] + w["conv.bias"]
            h = self._act(h).reshape(x.shape[0], positions * spec.channels)
        plan = _layer_plan(spec)
        for i, (prefix, _, _) in enumerate(plan):
            h = h @ w[f"{prefix}.weight"] + w[f"{prefix}.bias"]
            if i == len(plan) - 1:
                break
            if spec.use_batchnorm:
                h = self._batchnorm(i, h, w, train, stats)
            h = self._act(h)
        return h

    def _act(self, h: Tensor) -> Tensor:
        return h.relu() if self.spec.activation == "relu" else h.tanh()

    def _batchnorm(self, i, h, w, train, stats):
        if train:
            mu = h.mean(axis=0, keepdims=True)
            centred = h - mu
            var = (centred * centred).mean(axis=0, keepdims=True)
            if stats is not None:
                n = h.shape[0]
                stats[f"bn{i}.mean"] = mu.data.reshape(-1).copy()
                stats[f"bn{i}.var"] = var.data.reshape(-1) * (n / max(n - 1, 1))
            xhat = centred * (var + BN_EPS) ** -0.5
        else:
            mean = self.buffers[f"bn{i}.mean"]
            scale = 1.0 / np.sqrt(self.buffers[f"bn{i}.var"] + BN_EPS)
            xhat = (h - mean) * scale
        return xhat * w[f"bn{i}.gamma"] + w[f"bn{i}.beta"]

    def update_buffers(self, stats: Mapping[str, np.ndarray]) -> Model:
        if not stats:
            return self
        new = {}
        for k, v in self.buffers.items():
            new[k] = (1 - BN_MOMENTUM) * v + BN_MOMENTUM * stats[k] if k in stats else v
        return self.with_buffers(new)


def build_model(spec: ModelSpec, seed: int) -> tuple[Model, ParameterVector]:
    """Model handle and freshly initialised weights.

    Weights and biases are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in));
    batchnorm starts at gamma=1, beta=0 with unit running variance.
    """
    count = parameter_count(spec)
    if count > spec.param_cap:
        raise ParameterCapError(
            f"model has {count} parameters, cap is {spec.param_cap}", field="model.param_cap")
    layout = make_layout(_shapes(spec))
    rng = np.random.default_rng(seed)
    values = np.empty(count)
    for seg in layout:
        block = values[seg.offset:seg.stop]
        if seg.name.endswith(".gamma"):
            block[:] = 1.0
        elif seg.name.endswith(".beta"):
            block[:] = 0.0
        else:
            fan_in = spec.kernel_size if seg.name.startswith("conv") else _fan_in(layout, seg)
            bound = 1.0 / np.sqrt(fan_in)
            block[:] = rng.uniform(-bound, bound, size=seg.size)
    buffers = {}
    if spec.use_batchnorm:
        for i, (_, _, b) in enumerate(_layer_plan(spec)[:-1]):
            buffers[f"bn{i}.mean"] = np.zeros(b)
            buffers[f"bn{i}.var"] = np.ones(b)
    return Model(spec, layout, buffers), ParameterVector(layout, values)


def _fan_in(layout, seg: Segment) -> int:
    prefix = seg.name.rsplit(".", 1)[0]
    weight = next(s for s in layout if s.name == f"{prefix}.weight")
    return weight.shape[0]


def _cross_entropy(z: Tensor, labels: np.ndarray) -> Tensor:
    onehot = np.zeros(z.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return (ad.logsumexp(z, axis=1) - (z * onehot).sum(axis=1)).mean()


def _check_batch(model: Model, batch: Batch) -> None:
    if batch.inputs.shape[1] != model.spec.input_dim:
        raise ShapeMismatchError(
            f"batch has {batch.inputs.shape[1]} features, model expects {model.spec.input_dim}")
    if batch.labels.max() >= model.spec.n_classes:
        raise ShapeMismatchError("label outside class range")


def loss_tensor(model: Model, w: Mapping[str, Tensor], batch: Batch, train: bool = False,
                stats: dict | None = None) -> Tensor:
    _check_batch(model, batch)
    return _cross_entropy(model.logits(w, batch.inputs, train, stats), batch.labels)


def loss_forward(model: Model, params: ParameterVector, batch: Batch) -> float:
    """Mean cross-entropy of ``batch`` (evaluation mode)."""
    w = model.leaves(params, requires_grad=False)
    return loss_tensor(model, w, batch).item()


def gradient(model: Model, params: ParameterVector, batch: Batch) -> ParameterVector:
    w = model.leaves(params)
    loss = loss_tensor(model, w, batch)
    gs = ad.grad(loss, list(w.values()))
    return params.with_values(np.concatenate([g.data.reshape(-1) for g in gs]))


def predict(model: Model, params: ParameterVector, inputs: np.ndarray) -> np.ndarray:
    w = model.leaves(params, requires_grad=False)
    return model.logits(w, np.asarray(inputs, dtype=np.float64)).data.argmax(axis=1)


def accuracy(model: Model, params: ParameterVector, batch: Batch) -> float:
    return float(np.mean(predict(model, params, batch.inputs) == batch.labels))


class HessianOperator:
    """Exact ``v -> H v`` for the evaluation-mode loss on a fixed batch.

    The first-order graph is recorded once; every product differentiates
    ``<grad, v>`` through it again.
    """

    def __init__(self, model: Model, params: ParameterVector, batch: Batch):
        self.model, self.params, self.batch = model, params, batch
        self._w = model.leaves(params)
        self._leaves = list(self._w.values())
        self.loss = loss_tensor(model, self._w, batch)
        self._grads = ad.grad(self.loss, self._leaves, create_graph=True)
        self.gradient = np.concatenate([g.data.reshape(-1) for g in self._grads])
        self.dim = params.values.size
        self.matvecs = 0

    def __call__(self, v) -> np.ndarray:
        v = v.values if isinstance(v, ParameterVector) else np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ShapeMismatchError(f"vector of length {v.size} for a {self.dim}-dim Hessian")
        inner = None
        for g, seg in zip(self._grads, self.model.layout):
            if not g.requires_grad:
                continue
            term = (g * v[seg.offset:seg.stop].reshape(seg.shape)).sum()
            inner = term if inner is None else inner + term
        if inner is None:
            return np.zeros(self.dim)
        hv = ad.grad(inner, self._leaves)
        out = np.concatenate([h.data.reshape(-1) for h in hv])
        self.matvecs += 1
        if not np.all(np.isfinite(out)):
            raise NumericalError("non-finite value in Hessian-vector product")
        return out

    def dense(self) -> np.ndarray:
        """Full Hessian, one product per basis vector. Small models only."""
        eye = np.eye(self.dim)
        return np.stack([self(eye[i]) for i in range(self.dim)], axis=1)


def hvp(model: Model, params: ParameterVector, batch: Batch, v) -> ParameterVector:
    if isinstance(v, ParameterVector) and not v.same_layout(params):
        raise ShapeMismatchError("v does not share the parameter layout")
    return params.with_values(HessianOperator(model, params, batch)(v))


def dense_hessian(model: Model, params: ParameterVector, batch: Batch) -> np.ndarray:
    return HessianOperator(model, params, batch).dense()
