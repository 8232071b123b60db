"""Fully connected descriptor encoder with FRN/TLU blocks and dropout."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, maximum
from .errors import ShapeMismatch

FRN_EPS = 1e-6

# named random sub-streams derived from the run seed
STREAM_INIT = 1
STREAM_DROPOUT = 2
STREAM_DATA = 3
STREAM_AUGMENT = 4
STREAM_EVAL = 5


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 256
    widths: tuple = (256, 128)
    output_dim: int = 32
    dropout_rate: float = 0.3
    use_frn: bool = True
    input_norm: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths or any(w <= 0 for w in self.widths):
            raise ValueError("need at least one hidden layer of positive width")
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ValueError("input_dim and output_dim must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")


def dense(x: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.shape[-1] != weights.shape[0]:
        raise ShapeMismatch(f"input width {x.shape[-1]} does not match weights {weights.shape}")
    y = x @ weights
    return y if bias is None else y + bias


def frn(x: Tensor, gamma, beta) -> Tensor:
    """Filter response normalization over each sample's feature vector."""
    nu2 = (x * x).mean(axis=1, keepdims=True)
    return gamma * (x / (nu2 + FRN_EPS).sqrt()) + beta


def frn_tlu(x: Tensor, gamma, beta, tau_act) -> Tensor:
    return maximum(frn(x, gamma, beta), tau_act)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity at inference or when ``rate`` is 0."""
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return x * (keep / (1.0 - rate))


def dropout_rng(seed: int, iteration: int, layer: int) -> np.random.Generator:
    return np.random.default_rng([seed, STREAM_DROPOUT, iteration, layer])


def init_params(cfg: EncoderConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, STREAM_INIT])
    params: dict[str, np.ndarray] = {}
    if cfg.input_norm:
        params["in.gamma"] = np.ones(1)
        params["in.beta"] = np.zeros(1)
    fan_in = cfg.input_dim
    for k, width in enumerate(cfg.widths):
        params[f"h{k}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, width))
        params[f"h{k}.b"] = np.zeros(width)
        if cfg.use_frn:
            params[f"h{k}.gamma"] = np.ones(width)
            params[f"h{k}.beta"] = np.zeros(width)
            params[f"h{k}.tau"] = np.full(width, -1.0)
        fan_in = width
    params["out.w"] = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, cfg.output_dim))
    return params


def param_shapes(cfg: EncoderConfig) -> dict[str, tuple]:
    return {k: v.shape for k, v in init_params(cfg).items()}


def encode(patches, params: dict, cfg: EncoderConfig, training: bool = False,
           iteration: int = 0) -> Tensor:
    """Map flattened patches (rows) to raw descriptors.

    ``params`` values may be arrays or Tensors; pass Tensors that require
    gradients to record the forward pass on the active tape. Dropout masks
    depend only on (seed, iteration, layer).
    """
    p = {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}
    x = patches if isinstance(patches, Tensor) else Tensor(patches)
    if x.data.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ShapeMismatch(f"patches of shape {x.shape}, encoder expects (n, {cfg.input_dim})")
    if cfg.input_norm:
        x = frn(x, p["in.gamma"], p["in.beta"])
    last = len(cfg.widths) - 1
    for k in range(len(cfg.widths)):
        x = dense(x, p[f"h{k}.w"], p[f"h{k}.b"])
        if cfg.use_frn:
            x = frn_tlu(x, p[f"h{k}.gamma"], p[f"h{k}.beta"], p[f"h{k}.tau"])
        else:
            x = maximum(x, 0.0)
        if k == last:
            x = dropout(x, cfg.dropout_rate, dropout_rng(cfg.seed, iteration, k), training)
    return dense(x, p["out.w"])


def encode_patch(patch, params: dict, cfg: EncoderConfig) -> np.ndarray:
    """Inference-mode raw descriptor of a single patch (any shape with
    ``input_dim`` values)."""
    flat = np.asarray(patch, dtype=np.float64).reshape(1, -1)
    return encode(flat, params, cfg).data[0]
