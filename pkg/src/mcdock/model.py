"""Residual decoder mapping instance features to per-algorithm scores.

Layout for hidden dims (h_1, ..., h_K) and ``blocks_per_stack`` = B::

    x -> Linear(d, h_1) -> B residual blocks at h_1 ─┐
      -> Linear(h_1, h_2) -> B residual blocks at h_2 ─┤ concat -> Linear(sum h, m)
      ...                                              │
      -> Linear(h_{K-1}, h_K) -> B blocks at h_K ─────┘

A residual block is ``h + W2 act(W1 h + b1) + b2``. The plain-MLP variant
drops the ``h +`` skip and keeps every parameter shape. Gradients are
derived by hand; there is no autodiff here.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import CheckpointError, ConfigError, ShapeError, StaleCacheError, ValidationError
from .losses import LossConfig, composite_loss_batch

CHECKPOINT_FORMAT = "mcdock-decoder"
CHECKPOINT_VERSION = 1


class Variant(str, enum.Enum):
    RESIDUAL = "residual"
    PLAIN_MLP = "mlp"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        v = str(value).lower()
        if v in ("residual", "res"):
            return cls.RESIDUAL
        if v in ("mlp", "plain", "plainmlp", "plain_mlp"):
            return cls.PLAIN_MLP
        raise ConfigError(f"unknown decoder variant {value!r}; expected 'residual' or 'mlp'")


def _relu(a):
    return np.maximum(a, 0.0)


def _relu_grad(a):
    return (a > 0).astype(a.dtype)


def _tanh_grad(a):
    return 1.0 - np.tanh(a) ** 2


ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, _tanh_grad),
    "identity": (lambda a: a, np.ones_like),
}


@dataclass(frozen=True)
class ArchitectureSpec:
    input_dim: int
    output_dim: int
    variant: Variant = Variant.RESIDUAL
    hidden_dims: tuple[int, ...] = (256, 128)
    blocks_per_stack: int = 3
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if int(self.input_dim) < 1 or int(self.output_dim) < 1:
            raise ConfigError(f"input_dim and output_dim must be >= 1, "
                              f"got {self.input_dim}, {self.output_dim}")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden_dims must be non-empty and positive, got {self.hidden_dims}")
        if int(self.blocks_per_stack) < 0:
            raise ConfigError(f"blocks_per_stack must be >= 0, got {self.blocks_per_stack}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; "
                              f"expected one of {sorted(ACTIVATIONS)}")
        if int(self.seed) < 0:
            raise ConfigError("seed must be non-negative")

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        """Parameter name -> shape, in canonical (flattening) order."""
        shapes: dict[str, tuple[int, ...]] = {}
        prev = self.input_dim
        for k, h in enumerate(self.hidden_dims):
            shapes[f"proj{k}.W"] = (prev, h)
            shapes[f"proj{k}.b"] = (h,)
            for b in range(self.blocks_per_stack):
                shapes[f"stack{k}.{b}.W1"] = (h, h)
                shapes[f"stack{k}.{b}.b1"] = (h,)
                shapes[f"stack{k}.{b}.W2"] = (h, h)
                shapes[f"stack{k}.{b}.b2"] = (h,)
            prev = h
        shapes["out.W"] = (sum(self.hidden_dims), self.output_dim)
        shapes["out.b"] = (self.output_dim,)
        return shapes

    def n_params(self) -> int:
        return sum(math.prod(s) for s in self.layer_shapes().values())

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "output_dim": self.output_dim,
                "variant": self.variant.value, "hidden_dims": list(self.hidden_dims),
                "blocks_per_stack": self.blocks_per_stack, "activation": self.activation,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        return cls(**{**d, "hidden_dims": tuple(d.get("hidden_dims", (256, 128)))})


@dataclass
class DecoderParams:
    arch: ArchitectureSpec
    tensors: dict[str, np.ndarray]
    version: int = 0

    def __post_init__(self):
        expected = self.arch.layer_shapes()
        if list(self.tensors) != list(expected):
            raise ShapeError(f"parameter names {list(self.tensors)} do not match architecture")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeError(f"{name}: shape {self.tensors[name].shape}, expected {shape}")

    def __getitem__(self, name):
        return self.tensors[name]

    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def to_flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors.values()])

    @classmethod
    def from_flat(cls, arch: ArchitectureSpec, flat) -> "DecoderParams":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (arch.n_params(),):
            raise ShapeError(f"flat parameter vector has {flat.size} entries, "
                             f"architecture needs {arch.n_params()}")
        tensors, pos = {}, 0
        for name, shape in arch.layer_shapes().items():
            size = math.prod(shape)
            tensors[name] = flat[pos:pos + size].reshape(shape).copy()
            pos += size
        return cls(arch, tensors)

    def copy(self) -> "DecoderParams":
        return DecoderParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}


def init_decoder(arch: ArchitectureSpec) -> DecoderParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero. Deterministic in ``arch.seed``."""
    rng = np.random.default_rng(arch.seed)
    tensors = {}
    for name, shape in arch.layer_shapes().items():
        if len(shape) == 2:
            bound = 1.0 / math.sqrt(shape[0])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        else:
            tensors[name] = np.zeros(shape)
    return DecoderParams(arch, tensors)


@dataclass
class ForwardCache:
    params_id: int
    params_version: int
    x: np.ndarray
    # per stack: list of (h_in, pre_activation, activation) per block
    blocks: list[list[tuple[np.ndarray, np.ndarray, np.ndarray]]] = field(default_factory=list)
    stack_inputs: list[np.ndarray] = field(default_factory=list)
    concat: np.ndarray | None = None
    squeeze: bool = False


def forward(params: DecoderParams, features) -> tuple[np.ndarray, ForwardCache]:
    """Raw per-algorithm scores for one feature vector ``(d,)`` or a batch ``(n, d)``."""
    arch = params.arch
    x = np.asarray(features, dtype=float)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise ShapeError(f"features have shape {np.shape(features)}, decoder expects "
                         f"{arch.input_dim} columns")
    if not np.all(np.isfinite(x)):
        raise ValidationError("features contain NaN or infinite values")
    act, _ = ACTIVATIONS[arch.activation]
    residual = arch.variant is Variant.RESIDUAL
    t = params.tensors
    cache = ForwardCache(id(params), params.version, x, squeeze=squeeze)
    h = x
    outs = []
    for k in range(len(arch.hidden_dims)):
        cache.stack_inputs.append(h)
        h = h @ t[f"proj{k}.W"] + t[f"proj{k}.b"]
        blocks = []
        for b in range(arch.blocks_per_stack):
            pre = h @ t[f"stack{k}.{b}.W1"] + t[f"stack{k}.{b}.b1"]
            a = act(pre)
            out = a @ t[f"stack{k}.{b}.W2"] + t[f"stack{k}.{b}.b2"]
            blocks.append((h, pre, a))
            h = h + out if residual else out
        cache.blocks.append(blocks)
        outs.append(h)
    cache.concat = np.concatenate(outs, axis=1)
    y = cache.concat @ t["out.W"] + t["out.b"]
    return (y[0] if squeeze else y), cache


def backward(params: DecoderParams, cache: ForwardCache, grad_scores) -> dict[str, np.ndarray]:
    """Gradients of ``sum(grad_scores * scores)`` with respect to every parameter."""
    if cache.params_id != id(params) or cache.params_version != params.version:
        raise StaleCacheError("forward cache does not belong to these parameters "
                              "(or they were updated since the forward pass)")
    arch = params.arch
    g = np.asarray(grad_scores, dtype=float)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != (cache.x.shape[0], arch.output_dim):
        raise ShapeError(f"grad_scores shape {np.shape(grad_scores)} does not match forward output")
    _, act_grad = ACTIVATIONS[arch.activation]
    residual = arch.variant is Variant.RESIDUAL
    t = params.tensors
    grads: dict[str, np.ndarray] = {}

    grads["out.W"] = cache.concat.T @ g
    grads["out.b"] = g.sum(axis=0)
    dconcat = g @ t["out.W"].T
    offsets = np.cumsum((0,) + arch.hidden_dims)
    carry = None
    for k in reversed(range(len(arch.hidden_dims))):
        dh = dconcat[:, offsets[k]:offsets[k + 1]]
        if carry is not None:
            dh = dh + carry
        for b in reversed(range(arch.blocks_per_stack)):
            h_in, pre, a = cache.blocks[k][b]
            grads[f"stack{k}.{b}.W2"] = a.T @ dh
            grads[f"stack{k}.{b}.b2"] = dh.sum(axis=0)
            dpre = (dh @ t[f"stack{k}.{b}.W2"].T) * act_grad(pre)
            grads[f"stack{k}.{b}.W1"] = h_in.T @ dpre
            grads[f"stack{k}.{b}.b1"] = dpre.sum(axis=0)
            through = dpre @ t[f"stack{k}.{b}.W1"].T
            dh = dh + through if residual else through
        x_in = cache.stack_inputs[k]
        grads[f"proj{k}.W"] = x_in.T @ dh
        grads[f"proj{k}.b"] = dh.sum(axis=0)
        carry = dh @ t[f"proj{k}.W"].T
    return {name: grads[name] for name in arch.layer_shapes()}


def predict(params: DecoderParams, features) -> np.ndarray:
    return forward(params, features)[0]


def select(params: DecoderParams, features):
    """Index of the highest predicted score; ties go to the lowest index.

    Returns an int for a single feature vector, an int array for a batch.
    """
    scores = predict(params, features)
    return select_from_scores(scores)


def select_from_scores(scores):
    scores = np.asarray(scores, dtype=float)
    if scores.ndim == 1:
        return int(np.argmax(scores))
    return np.argmax(scores, axis=1)


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig = LossConfig()
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig.from_dict(self.loss))
        if not (self.learning_rate > 0):
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie strictly between 0 and 1")
        if not (self.adam_epsilon > 0):
            raise ConfigError("adam_epsilon must be > 0")
        if int(self.epochs) < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if int(self.seed) < 0:
            raise ConfigError("seed must be non-negative")

    def to_dict(self) -> dict:
        return {"loss": self.loss.to_dict(), "learning_rate": self.learning_rate,
                "epochs": self.epochs, "batch_size": self.batch_size,
                "adam_beta1": self.adam_beta1, "adam_beta2": self.adam_beta2,
                "adam_epsilon": self.adam_epsilon, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: DecoderParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like())


def adam_step(params: DecoderParams, grads: dict[str, np.ndarray], state: AdamState,
              config: TrainConfig) -> tuple[DecoderParams, AdamState]:
    """One bias-corrected Adam update. Updates ``params`` and ``state`` in place and returns both."""
    if set(grads) != set(params.tensors):
        raise ShapeError("gradient names do not match parameter names")
    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_epsilon, config.learning_rate
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    params.version += 1
    return params, state


def _label_array(labels) -> np.ndarray:
    return np.asarray(getattr(labels, "scores", labels), dtype=float)


def batch_loss_and_grads(params: DecoderParams, x, y, loss_cfg: LossConfig):
    """Mean composite loss over the rows of ``x`` and its parameter gradients."""
    scores, cache = forward(params, x)
    values, dscores = composite_loss_batch(scores, y, loss_cfg)
    n = x.shape[0]
    return float(values.mean()), backward(params, cache, dscores / n), values


def train(features, labels, arch: ArchitectureSpec, config: TrainConfig,
          params: DecoderParams | None = None):
    """Mini-batch Adam on the composite loss.

    Returns ``(params, history)`` where ``history`` holds the mean per-instance
    loss of every epoch. Deterministic given ``arch.seed``, ``config.seed`` and
    the data.
    """
    x = np.asarray(features, dtype=float)
    y = _label_array(labels)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeError(f"features {x.shape} and labels {y.shape} are not row-aligned")
    if x.shape[0] < 1:
        raise ShapeError("need at least one training instance")
    if x.shape[1] != arch.input_dim or y.shape[1] != arch.output_dim:
        raise ShapeError(f"data shapes {x.shape}/{y.shape} do not match architecture "
                         f"({arch.input_dim} -> {arch.output_dim})")
    params = init_decoder(arch) if params is None else params
    state = AdamState.for_params(params)
    rng = np.random.default_rng(config.seed)
    n = x.shape[0]
    history: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            _, grads, values = batch_loss_and_grads(params, x[idx], y[idx], config.loss)
            total += float(values.sum())
            adam_step(params, grads, state, config)
        history.append(total / n)
    return params, history


@dataclass
class Standardizer:
    """Column-wise z-scoring fitted on training rows only."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x) -> "Standardizer":
        x = np.asarray(x, dtype=float)
        std = x.std(axis=0)
        # constant columns pass through centred but unscaled
        return cls(x.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.mean.shape[0]:
            raise ShapeError(f"features have {x.shape[-1]} columns, standardizer expects "
                             f"{self.mean.shape[0]}")
        return (x - self.mean) / self.scale


def save_checkpoint(path, params: DecoderParams, portfolio=None,
                    standardizer: Standardizer | None = None) -> None:
    meta = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "arch": params.arch.to_dict(),
            "portfolio": list(portfolio) if portfolio is not None else None}
    arrays = {"meta": np.array(json.dumps(meta)), "params": params.to_flat()}
    if standardizer is not None:
        arrays["feature_mean"] = standardizer.mean
        arrays["feature_scale"] = standardizer.scale
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


@dataclass
class Checkpoint:
    params: DecoderParams
    portfolio: list[str] | None
    standardizer: Standardizer | None


def load_checkpoint(path) -> Checkpoint:
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            flat = data["params"]
            std = None
            if "feature_mean" in data:
                std = Standardizer(data["feature_mean"], data["feature_scale"])
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a decoder checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {meta.get('version')} is not supported "
                              f"(this build reads version {CHECKPOINT_VERSION})")
    arch = ArchitectureSpec.from_dict(meta["arch"])
    return Checkpoint(DecoderParams.from_flat(arch, flat), meta["portfolio"], std)
