"""Causal language model: embedding, pre-norm transformer blocks, LM head.

The architecture is a plain Llama-family decoder (RMS norm, SiLU-gated MLP,
no biases, untied head) so that the only moving parts across experiment rows
are the attention activation, the position mechanism, and the window.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from . import tensor as T
from .attention import BandMask, RopeParams, SlopeSchedule, banded_attention, slope_schedule
from .errors import ConfigError, ContractError, DataError
from .rng import substream, truncated_normal
from .tensor import Tensor

ACTIVATIONS = ("softmax", "sigmoid")
POS_MODES = ("rope", "alibi", "alirope", "none")
SLOPE_MODES = ("negative", "positive", "balanced", "none")

INIT_STD = 0.02
NORM_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int
    n_heads: int
    n_layers: int
    window: int
    activation: str = "sigmoid"
    pos_mode: str = "alirope"
    slope_mode: str = "balanced"
    rope_theta: float = 10000.0
    mlp_ratio: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(
                f"d_model {self.d_model} must be a positive multiple of n_heads {self.n_heads}"
            )
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.pos_mode not in POS_MODES:
            raise ConfigError(f"pos_mode must be one of {POS_MODES}")
        if self.slope_mode not in SLOPE_MODES:
            raise ConfigError(f"slope_mode must be one of {SLOPE_MODES}")
        if self.pos_mode in ("alibi", "alirope") and self.slope_mode == "none":
            raise ConfigError(f"pos_mode {self.pos_mode} requires a slope_mode")
        if self.pos_mode in ("rope", "none") and self.slope_mode != "none":
            raise ConfigError(f"slope_mode {self.slope_mode} is unused with pos_mode {self.pos_mode}")
        if self.pos_mode in ("rope", "alirope"):
            if self.head_dim % 2:
                raise ConfigError("rotary rotation requires an even head dim (d_model/n_heads)")
            if not self.rope_theta > 1.0:
                raise ConfigError("rope_theta must be > 1")
        if not self.mlp_ratio > 0:
            raise ConfigError("mlp_ratio must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def mlp_dim(self) -> int:
        return int(self.d_model * self.mlp_ratio)


@dataclass
class Model:
    cfg: ModelConfig
    params: dict[str, Tensor]
    slopes: SlopeSchedule | None
    rope: RopeParams | None

    def parameters(self) -> Iterable[tuple[str, Tensor]]:
        return self.params.items()

    def slope_array(self) -> np.ndarray | None:
        return self.slopes.as_array() if self.slopes is not None else None


def parameter_count(cfg: ModelConfig) -> int:
    """Closed form: embed + L*(2 gains + 4 attn mats + 3 mlp mats) + final gain + head."""
    d, m, v = cfg.d_model, cfg.mlp_dim, cfg.vocab_size
    per_layer = 2 * d + 4 * d * d + 3 * d * m
    return v * d + cfg.n_layers * per_layer + d + d * v


def receptive_field(l: int, window: int) -> int:
    """Maximum span of input tokens that can reach one output at layer l: 1+(window-1)*l."""
    if l < 0:
        raise ContractError("layer index must be >= 0")
    if window < 1:
        raise ContractError("window must be >= 1")
    return 1 + (window - 1) * l


def build_model(cfg: ModelConfig) -> Model:
    """Initialize parameters: truncated normal std 0.02, residual projections scaled 1/sqrt(2L)."""
    d, m = cfg.d_model, cfg.mlp_dim
    residual_std = INIT_STD / np.sqrt(2.0 * cfg.n_layers)

    params: dict[str, Tensor] = {}

    def init(name: str, shape: tuple[int, ...], std: float | None) -> None:
        if std is None:
            data = np.ones(shape)
        else:
            data = truncated_normal(substream(cfg.seed, f"param:{name}"), shape, std)
        params[name] = Tensor(data, requires_grad=True)

    init("embed.weight", (cfg.vocab_size, d), INIT_STD)
    for i in range(cfg.n_layers):
        init(f"layers.{i}.attn_norm.gain", (d,), None)
        init(f"layers.{i}.attn.q.weight", (d, d), INIT_STD)
        init(f"layers.{i}.attn.k.weight", (d, d), INIT_STD)
        init(f"layers.{i}.attn.v.weight", (d, d), INIT_STD)
        init(f"layers.{i}.attn.o.weight", (d, d), residual_std)
        init(f"layers.{i}.mlp_norm.gain", (d,), None)
        init(f"layers.{i}.mlp.gate.weight", (d, m), INIT_STD)
        init(f"layers.{i}.mlp.up.weight", (d, m), INIT_STD)
        init(f"layers.{i}.mlp.down.weight", (m, d), residual_std)
    init("norm.gain", (d,), None)
    init("head.weight", (d, cfg.vocab_size), INIT_STD)

    slopes = slope_schedule(cfg.n_heads, cfg.slope_mode) if cfg.slope_mode != "none" else None
    rope = (
        RopeParams(head_dim=cfg.head_dim, theta=cfg.rope_theta)
        if cfg.pos_mode in ("rope", "alirope")
        else None
    )
    if cfg.pos_mode not in ("alibi", "alirope"):
        slopes = None
    return Model(cfg=cfg, params=params, slopes=slopes, rope=rope)


def forward(
    model: Model,
    tokens: np.ndarray,
    mask: BandMask | None = None,
    collect_attn: list | None = None,
    collect_hidden: list | None = None,
    collect_scores: list | None = None,
) -> Tensor:
    """Next-token logits at every position.

    tokens is an int array [N] or [B, N]; logits come back [N, vocab] or
    [B, N, vocab] to match. The mask defaults to the model's own window.
    """
    tokens = np.asarray(tokens)
    if not np.issubdtype(tokens.dtype, np.integer):
        raise DataError("tokens must be integers")
    squeeze = tokens.ndim == 1
    ids = tokens[None, :] if squeeze else tokens
    if ids.ndim != 2:
        raise DataError(f"tokens must be 1-d or 2-d, got shape {tokens.shape}")
    b, n = ids.shape
    if mask is None:
        mask = BandMask(seq_len=n, window=model.cfg.window)
    if mask.seq_len != n:
        raise ContractError(f"mask seq_len {mask.seq_len} != sequence length {n}")

    cfg = model.cfg
    p = model.params
    d, h, d_k = cfg.d_model, cfg.n_heads, cfg.head_dim
    slopes = model.slope_array()

    x = T.embedding(p["embed.weight"], ids)  # [B, N, d]
    for i in range(cfg.n_layers):
        pre = f"layers.{i}"
        normed = T.rms_norm(x, p[f"{pre}.attn_norm.gain"], eps=NORM_EPS)
        flat = T.reshape(normed, (b * n, d))

        def heads(mat: Tensor) -> Tensor:
            return T.transpose(T.reshape(mat, (b, n, h, d_k)), (0, 2, 1, 3))

        q = heads(T.matmul(flat, p[f"{pre}.attn.q.weight"]))
        k = heads(T.matmul(flat, p[f"{pre}.attn.k.weight"]))
        v = heads(T.matmul(flat, p[f"{pre}.attn.v.weight"]))
        attn = banded_attention(
            q,
            k,
            v,
            mask,
            slopes=slopes,
            rope=model.rope,
            activation=cfg.activation,
            collect_weights=collect_attn,
            collect_scores=collect_scores,
        )
        merged = T.reshape(T.transpose(attn, (0, 2, 1, 3)), (b * n, d))
        out = T.reshape(T.matmul(merged, p[f"{pre}.attn.o.weight"]), (b, n, d))
        x = T.add(x, out)

        normed2 = T.rms_norm(x, p[f"{pre}.mlp_norm.gain"], eps=NORM_EPS)
        flat2 = T.reshape(normed2, (b * n, d))
        gate = T.silu(T.matmul(flat2, p[f"{pre}.mlp.gate.weight"]))
        up = T.matmul(flat2, p[f"{pre}.mlp.up.weight"])
        down = T.matmul(T.mul(gate, up), p[f"{pre}.mlp.down.weight"])
        x = T.add(x, T.reshape(down, (b, n, d)))
        if collect_hidden is not None:
            collect_hidden.append(x)

    final = T.rms_norm(x, p["norm.gain"], eps=NORM_EPS)
    logits = T.matmul(T.reshape(final, (b * n, d)), p["head.weight"])
    shape = (n, cfg.vocab_size) if squeeze else (b, n, cfg.vocab_size)
    return T.reshape(logits, shape)


def next_token_loss(model: Model, blocks: np.ndarray, mask: BandMask | None = None) -> Tensor:
    """Mean cross entropy predicting blocks[:, 1:] from blocks[:, :-1]."""
    blocks = np.asarray(blocks)
    if blocks.ndim == 1:
        blocks = blocks[None, :]
    if blocks.shape[1] < 2:
        raise DataError("blocks need at least 2 tokens for a next-token target")
    inputs, targets = blocks[:, :-1], blocks[:, 1:]
    logits = forward(model, inputs, mask=mask)
    b, n, v = logits.shape
    return T.cross_entropy_logits(T.reshape(logits, (b * n, v)), targets.reshape(-1))


def clone_config(cfg: ModelConfig, **overrides) -> ModelConfig:
    return replace(cfg, **overrides)
