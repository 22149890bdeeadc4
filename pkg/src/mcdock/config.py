"""Run configuration: one JSON document with dotted-key overrides.

Example::

    {
      "data": {"features": "features.csv", "performance": "performance.csv"},
      "score": {"mode": "mul", "tolerance_m": 2.3978952727983707, "alpha": 0.5},
      "loss": {"sigma": 1.0, "weight_bce": 1.0, "weight_pl": 0.0, "weight_ndcg": 0.0},
      "decoder": {"variant": "residual", "hidden_dims": [256, 128], "blocks_per_stack": 3},
      "train": {"learning_rate": 0.001, "epochs": 200, "batch_size": 32, "seed": 0},
      "eval": {"k": 10, "seed": 0, "thresholds": [1.0, 2.0], "portfolio_k": null},
      "variants": [{"variant": "residual", "loss": "bce"}, {"variant": "mlp", "loss": "both"}]
    }

Every section is optional. ``variants`` (when present) replaces the single
method built from ``decoder`` + ``loss``; each entry's ``loss`` is a preset
name (``bce``, ``ndcg``, ``pl``, ``both``) or a full loss dict.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .evaluation import GatedMetricSpec, Method, method_name
from .losses import LossConfig
from .model import ArchitectureSpec, TrainConfig, Variant
from .scoring import ScoreConfig

CONFIG_ENV = "MCDOCK_CONFIG"

TABLE_GRID = [{"variant": v, "loss": l} for v in ("mlp", "residual")
              for l in ("bce", "ndcg", "pl", "both")]


def parse_tolerance(token) -> float:
    """Accept plain numbers and ``ln<n>`` / ``ln <n>`` / ``ln(n)``."""
    if isinstance(token, (int, float)):
        return float(token)
    t = str(token).strip().lower().replace(" ", "")
    if t.startswith("ln"):
        arg = t[2:].strip("()")
        try:
            return math.log(float(arg))
        except ValueError:
            raise ConfigError(f"cannot parse tolerance {token!r}") from None
    try:
        return float(t)
    except ValueError:
        raise ConfigError(f"cannot parse tolerance {token!r}") from None


@dataclass
class DataConfig:
    features: str | None = None
    performance: str | None = None
    ground_truth: str | None = None
    portfolio: list[str] | None = None


@dataclass
class DecoderConfig:
    variant: str = "residual"
    hidden_dims: list[int] = field(default_factory=lambda: [256, 128])
    blocks_per_stack: int = 3
    activation: str = "relu"
    seed: int = 0

    def arch(self, input_dim: int = 1, output_dim: int = 1) -> ArchitectureSpec:
        return ArchitectureSpec(input_dim, output_dim, Variant.parse(self.variant),
                                tuple(self.hidden_dims), self.blocks_per_stack,
                                self.activation, self.seed)


@dataclass
class TrainSection:
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0


@dataclass
class EvalSection:
    k: int = 10
    seed: int = 0
    thresholds: list[float] = field(default_factory=lambda: [1.0, 2.0])
    require_pb_valid: bool = True
    portfolio_k: int | None = None
    significance: str = "wilcoxon"
    jobs: int = 1

    def metric_specs(self) -> list[GatedMetricSpec]:
        return [GatedMetricSpec(float(t), self.require_pb_valid) for t in self.thresholds]


_SECTIONS = {"data": DataConfig, "decoder": DecoderConfig, "train": TrainSection, "eval": EvalSection}


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    variants: list[dict] | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {"data", "score", "loss", "decoder", "train", "eval", "variants"}
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        kw = {}
        for name, klass in _SECTIONS.items():
            if name in d:
                kw[name] = _build(klass, d[name], name)
        if "score" in d:
            sc = dict(d["score"])
            if "tolerance_m" in sc:
                sc["tolerance_m"] = parse_tolerance(sc["tolerance_m"])
            kw["score"] = _build(ScoreConfig, sc, "score")
        if "loss" in d:
            kw["loss"] = _build(LossConfig, d["loss"], "loss")
        if d.get("variants") is not None:
            if not isinstance(d["variants"], list) or not d["variants"]:
                raise ConfigError("variants must be a non-empty list")
            kw["variants"] = [dict(v) for v in d["variants"]]
        cfg = cls(**kw)
        cfg.methods()  # validate early
        return cfg

    def to_dict(self) -> dict:
        out = {
            "data": _plain(self.data), "score": self.score.to_dict(), "loss": self.loss.to_dict(),
            "decoder": _plain(self.decoder), "train": _plain(self.train), "eval": _plain(self.eval),
        }
        if self.variants is not None:
            out["variants"] = self.variants
        return out

    def train_config(self, loss: LossConfig | None = None) -> TrainConfig:
        return TrainConfig(loss=self.loss if loss is None else loss, **_plain(self.train))

    def methods(self) -> list[Method]:
        if not self.variants:
            arch = self.decoder.arch()
            return [Method(method_name(arch.variant, self.loss), arch, self.train_config())]
        out = []
        for v in self.variants:
            extra = set(v) - {"variant", "loss", "name"}
            if extra:
                raise ConfigError(f"unknown keys {sorted(extra)} in variant {v}")
            variant = Variant.parse(v.get("variant", self.decoder.variant))
            loss_spec = v.get("loss", "bce")
            if isinstance(loss_spec, str):
                loss = LossConfig.preset(loss_spec, sigma=self.loss.sigma)
            else:
                loss = _build(LossConfig, loss_spec, "variants.loss")
            arch = replace(self.decoder.arch(), variant=variant)
            out.append(Method(v.get("name") or method_name(variant, loss), arch,
                              self.train_config(loss)))
        return out


def _plain(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _build(klass, values, section):
    if not isinstance(values, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    allowed = {f.name for f in fields(klass)}
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in config section {section!r}")
    try:
        return klass(**values)
    except TypeError as exc:
        raise ConfigError(f"bad config section {section!r}: {exc}") from exc


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings (values parsed as JSON when possible)."""
    d = json.loads(json.dumps(d))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        path, value = item.split("=", 1)
        keys = path.strip().split(".")
        node = d
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a non-object")
        node[keys[-1]] = _parse_value(value)
    return d


def load_config(path=None, overrides=()) -> RunConfig:
    """Read the config file (or ``$MCDOCK_CONFIG``), apply overrides, validate."""
    path = path or os.environ.get(CONFIG_ENV)
    raw: dict = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    base = RunConfig.from_dict(raw).to_dict()
    return RunConfig.from_dict(apply_overrides(base, overrides))


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
