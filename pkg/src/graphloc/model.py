"""The segment classifier: affine embedding -> affinity graph -> graph
convolution -> ReLU -> L2 norm -> dropout -> linear -> tanh."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterator

import numpy as np

from . import numcore as nc
from .errors import ConfigError, EmptyVideoError, InputError, ShapeError
from .graph import AffinityTriplet, build_graph, graph_conv
from .numcore import Tensor

D_CHOICES = (1, 2, 4, 8)


@dataclass(frozen=True)
class DStrategy:
    """How the MIL pooling divisor d is picked: a constant or a per-iteration draw."""

    kind: str = "fixed"
    value: int = 8
    choices: tuple[int, ...] = D_CHOICES

    def __post_init__(self):
        if self.kind not in ("fixed", "random"):
            raise ConfigError(f"unknown d strategy {self.kind!r}")
        if self.kind == "fixed" and self.value < 1:
            raise ConfigError(f"d must be >= 1, got {self.value}")
        if self.kind == "random" and (not self.choices or min(self.choices) < 1):
            raise ConfigError(f"bad random d choices {self.choices}")

    @classmethod
    def parse(cls, text) -> "DStrategy":
        if isinstance(text, DStrategy):
            return text
        if isinstance(text, int):
            return cls("fixed", text)
        if isinstance(text, dict):
            if "fixed" in text:
                return cls("fixed", int(text["fixed"]))
            if "random_choice" in text:
                return cls("random", choices=tuple(int(c) for c in text["random_choice"]))
            raise ConfigError(f"bad d strategy {text!r}")
        s = str(text).strip().lower()
        if s in ("random", "rand"):
            return cls("random")
        try:
            return cls("fixed", int(s.removeprefix("d=")))
        except ValueError:
            raise ConfigError(f"bad d strategy {text!r}") from None

    def to_json(self):
        if self.kind == "fixed":
            return {"fixed": self.value}
        return {"random_choice": list(self.choices)}

    @property
    def eval_d(self) -> int:
        # random-d models are scored at test time with the largest choice
        return self.value if self.kind == "fixed" else max(self.choices)


@dataclass
class ModelConfig:
    num_classes: int
    input_dim: int = 2048
    hidden_dim: int = 1024
    phi_dim: int = 1024
    graph_mode: str = "learned"          # learned | identity
    casl_target: str = "phi_output"      # phi_output | graph_output | off
    use_l1: bool = True
    use_mil: bool = True
    dropout_p: float = 0.5
    d_strategy: DStrategy = field(default_factory=DStrategy)
    drop_edges: bool = True
    signed_drop: bool = False
    signed_row_norm: bool = False
    casl_attention: str = "time"         # time | class
    seed: int = 0

    def __post_init__(self):
        self.d_strategy = DStrategy.parse(self.d_strategy)
        self.validate()

    def validate(self) -> None:
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if self.graph_mode not in ("learned", "identity"):
            raise ConfigError(f"graph_mode must be learned or identity, got {self.graph_mode!r}")
        if self.casl_target not in ("phi_output", "graph_output", "off"):
            raise ConfigError(f"bad casl_target {self.casl_target!r}")
        if self.graph_mode == "identity" and self.casl_target == "phi_output":
            raise ConfigError("an identity graph has no phi embedding to apply CASL to")
        if self.casl_attention not in ("time", "class"):
            raise ConfigError(f"bad casl_attention {self.casl_attention!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p {self.dropout_p} outside [0, 1)")
        for name in ("input_dim", "hidden_dim", "phi_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def to_json(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["d_strategy"] = self.d_strategy.to_json()
        return out

    @classmethod
    def from_json(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


PARAM_ORDER = ("phi_weight", "phi_bias", "graph_weight", "cls_weight", "cls_bias")


@dataclass
class ModelParams:
    graph_weight: Tensor
    cls_weight: Tensor
    cls_bias: Tensor
    phi_weight: Tensor | None = None
    phi_bias: Tensor | None = None

    def named(self) -> dict[str, Tensor]:
        return {name: getattr(self, name) for name in PARAM_ORDER if getattr(self, name) is not None}

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.named().values())

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: nc.parameter(v.value, k) for k, v in self.named().items()})

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ModelParams":
        return cls(**{k: nc.parameter(v, k) for k, v in arrays.items()})


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases.  Identity-graph models have no embedding."""
    phi_w = phi_b = None
    if config.graph_mode == "learned":
        phi_w = nc.parameter(_glorot(rng, config.input_dim, config.phi_dim), "phi_weight")
        phi_b = nc.parameter(np.zeros((1, config.phi_dim)), "phi_bias")
    graph_w = nc.parameter(_glorot(rng, config.input_dim, config.hidden_dim), "graph_weight")
    cls_w = nc.parameter(_glorot(rng, config.hidden_dim, config.num_classes), "cls_weight")
    cls_b = nc.parameter(np.zeros((1, config.num_classes)), "cls_bias")
    return ModelParams(graph_weight=graph_w, cls_weight=cls_w, cls_bias=cls_b,
                       phi_weight=phi_w, phi_bias=phi_b)


def count_params(params: ModelParams) -> int:
    return sum(p.value.size for p in params)


@dataclass
class ForwardOutputs:
    phi_out: Tensor | None
    affinity: AffinityTriplet | None
    z: Tensor
    hidden: Tensor
    scores: Tensor


def _check_input(x, config: ModelConfig) -> np.ndarray:
    xv = x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if xv.ndim != 2 or xv.shape[0] == 0:
        raise EmptyVideoError(f"video has no segments (features shape {xv.shape})")
    if xv.shape[1] != config.input_dim:
        raise ShapeError(f"features have dim {xv.shape[1]}, model expects {config.input_dim}")
    if not np.all(np.isfinite(xv)):
        raise InputError("features contain non-finite values")
    return xv


def forward(x, params: ModelParams, config: ModelConfig, mode: str = "eval",
            rng: np.random.Generator | None = None) -> ForwardOutputs:
    """Run one video (l x input_dim features) through the network.

    Differentiable when called inside a :class:`~graphloc.numcore.Tape`.
    """
    xv = _check_input(x, config)
    xt = nc.constant(xv)

    if config.graph_mode == "identity":
        phi_out, affinity = None, None
        z = nc.matmul(xt, params.graph_weight)
    else:
        phi_out = nc.add(nc.matmul(xt, params.phi_weight), params.phi_bias)
        affinity = build_graph(phi_out, config.drop_edges, config.signed_drop, config.signed_row_norm)
        z = graph_conv(affinity.normalized, xt, params.graph_weight)

    hidden, scores = _head(z, params, config, mode, rng)
    return ForwardOutputs(phi_out, affinity, z, hidden, scores)


def _head(z: Tensor, params: ModelParams, config: ModelConfig, mode: str, rng) -> tuple[Tensor, Tensor]:
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be train or eval, got {mode!r}")
    hidden = nc.l2_normalize_rows(nc.relu(z))
    hidden = nc.dropout(hidden, config.dropout_p, rng, training=(mode == "train"))
    logits = nc.add(nc.matmul(hidden, params.cls_weight), params.cls_bias)
    return hidden, nc.tanh(logits)


def forward_batch(xs, params: ModelParams, config: ModelConfig, mode: str = "train",
                  rng: np.random.Generator | None = None) -> list[ForwardOutputs]:
    """Same network as :func:`forward` for several videos.

    The input projections of all videos share one matrix product; graphs are
    still built per video.
    """
    arrays = [_check_input(x, config) for x in xs]
    bounds = np.cumsum([0] + [a.shape[0] for a in arrays])
    xt = nc.constant(np.concatenate(arrays))
    xw = nc.matmul(xt, params.graph_weight)
    phi = None
    if config.graph_mode == "learned":
        phi = nc.add(nc.matmul(xt, params.phi_weight), params.phi_bias)
    outs = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        a, b = int(a), int(b)
        xw_i = nc.slice_rows(xw, a, b)
        if phi is None:
            phi_i, affinity, z = None, None, xw_i
        else:
            phi_i = nc.slice_rows(phi, a, b)
            affinity = build_graph(phi_i, config.drop_edges, config.signed_drop, config.signed_row_norm)
            z = nc.matmul(affinity.normalized, xw_i)
        hidden, scores = _head(z, params, config, mode, rng)
        outs.append(ForwardOutputs(phi_i, affinity, z, hidden, scores))
    return outs
