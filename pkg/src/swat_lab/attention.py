"""Attention variants on a banded causal mask.

The pieces compose left to right: a slope schedule assigns each head a signed
linear distance bias, a rotary rotation mixes relative position into the
query/key dot product, and the activation is either row-normalized softmax or
elementwise sigmoid (no normalization across keys). The full composition, all
three at once over a sliding band, is `swat_attention`.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor

SLOPE_MODES = ("negative", "positive", "balanced")
ACTIVATIONS = ("softmax", "sigmoid")


@dataclass(frozen=True)
class SlopeSchedule:
    """One signed slope per head; balanced mode puts the negative half first."""

    slopes: tuple[float, ...]
    mode: str

    def as_array(self) -> np.ndarray:
        return np.asarray(self.slopes, dtype=np.float64)


def slope_schedule(n_heads: int, mode: str) -> SlopeSchedule:
    """Per-head slopes with magnitudes 2^-1, 2^-2, ... (ratio 1/2).

    balanced: heads 1..h/2 get -2^-k, heads h/2+1..h get +2^-k, k = 1..h/2.
    negative/positive: all h heads share one sign, k = 1..h.
    """
    if n_heads < 1:
        raise ConfigError("n_heads must be >= 1")
    if mode not in SLOPE_MODES:
        raise ConfigError(f"slope mode must be one of {SLOPE_MODES}, got {mode!r}")
    if mode == "balanced":
        if n_heads % 2:
            raise ConfigError("balanced slope schedule requires an even head count")
        half = [2.0 ** -(k + 1) for k in range(n_heads // 2)]
        slopes = [-m for m in half] + half
    else:
        sign = -1.0 if mode == "negative" else 1.0
        slopes = [sign * 2.0 ** -(k + 1) for k in range(n_heads)]
    return SlopeSchedule(slopes=tuple(slopes), mode=mode)


@dataclass(frozen=True)
class BandMask:
    """Visibility rule: position m attends n iff max(0, m-window+1) <= n <= m."""

    seq_len: int
    window: int

    def __post_init__(self):
        if self.seq_len < 1:
            raise ContractError("seq_len must be >= 1")
        if self.window < 1:
            raise ContractError("window must be >= 1")

    def lower(self, m: int) -> int:
        return max(0, m - self.window + 1)

    def visible(self, m: int) -> range:
        return range(self.lower(m), m + 1)

    @property
    def matrix(self) -> np.ndarray:
        return _band_matrix(self.seq_len, self.window)


@lru_cache(maxsize=64)
def _band_matrix(seq_len: int, window: int) -> np.ndarray:
    m = np.arange(seq_len)[:, None]
    n = np.arange(seq_len)[None, :]
    out = (n <= m) & (m - n < window)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class RopeParams:
    """Rotation base for pairs (x_2i, x_2i+1): angle at position p is p * theta^(-2i/head_dim)."""

    head_dim: int
    theta: float = 10000.0

    def __post_init__(self):
        if self.head_dim < 2 or self.head_dim % 2:
            raise DimensionError("rope head_dim must be a positive even number")
        if not self.theta > 1.0:
            raise ConfigError("rope theta must be > 1")


def alibi_bias(m: int, n: int, s: float) -> float:
    """Linear distance bias s*(m-n) for a visible causal pair."""
    if m < n:
        raise ContractError("alibi bias is defined for m >= n only; the mask must prevent m < n")
    return s * (m - n)


def rope_angles(params: RopeParams, positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(cos, sin) tables of shape [len(positions), head_dim/2]."""
    half = params.head_dim // 2
    inv_freq = params.theta ** (-2.0 * np.arange(half) / params.head_dim)
    ang = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    return np.cos(ang), np.sin(ang)


def rope_rotate(x, pos, params: RopeParams) -> Tensor:
    """Rotate interleaved pairs of the last axis by position-dependent angles.

    ``pos`` is a single absolute position applied to every row, or an integer
    array matched against axis -2 (one position per row). The map is a fixed
    orthonormal rotation, so the backward pass is the rotation by -pos.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[-1] != params.head_dim:
        raise DimensionError(f"last dim {x.shape[-1]} != rope head_dim {params.head_dim}")
    positions = np.atleast_1d(np.asarray(pos))
    if positions.ndim != 1:
        raise DimensionError("pos must be a scalar or a 1-d array of row positions")
    if positions.size == 1:
        positions = np.broadcast_to(positions, (x.shape[-2],)) if x.ndim >= 2 else positions
    elif x.ndim < 2 or positions.size != x.shape[-2]:
        raise DimensionError(f"got {positions.size} positions for {x.shape} input")
    cos, sin = rope_angles(params, positions)
    if x.ndim == 1:
        cos, sin = cos[0], sin[0]

    def apply(arr: np.ndarray, c: np.ndarray, s: np.ndarray) -> np.ndarray:
        even, odd = arr[..., 0::2], arr[..., 1::2]
        out = np.empty_like(arr)
        out[..., 0::2] = even * c - odd * s
        out[..., 1::2] = even * s + odd * c
        return out

    out = Tensor(apply(x.data, cos, sin))

    def backward(g):
        if x.requires_grad:
            T.accumulate(x, apply(g, cos, -sin))

    return T.record_op(out, (x,), backward)


def banded_attention(
    q,
    k,
    v,
    mask: BandMask,
    slopes: np.ndarray | None = None,
    rope: RopeParams | None = None,
    activation: str = "sigmoid",
    positions: np.ndarray | None = None,
    normalize_sigmoid: bool = False,
    collect_weights: list | None = None,
    collect_scores: list | None = None,
) -> Tensor:
    """Shared core for every attention variant.

    q/k/v: [..., N, d_k]; with slopes the axis at -3 must be the head axis h.
    ``positions`` are the absolute positions of the N rows (default 0..N-1);
    rope rotation and the distance bias both use them. ``normalize_sigmoid``
    is the off-by-default escape hatch that divides sigmoid weights by the
    visible count per row (no normalization is the faithful behavior).
    """
    q = q if isinstance(q, Tensor) else Tensor(q)
    k = k if isinstance(k, Tensor) else Tensor(k)
    v = v if isinstance(v, Tensor) else Tensor(v)
    if activation not in ACTIVATIONS:
        raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
    if not (q.shape == k.shape == v.shape) or q.ndim < 2:
        raise DimensionError(f"q/k/v shapes must agree and be >= 2-dim, got {q.shape}")
    n, d_k = q.shape[-2], q.shape[-1]
    if mask.seq_len != n:
        raise DimensionError(f"mask seq_len {mask.seq_len} != sequence length {n}")
    if positions is None:
        positions = np.arange(n)
    if slopes is not None:
        slopes = np.asarray(slopes, dtype=np.float64)
        if q.ndim < 3 or slopes.shape != (q.shape[-3],):
            raise ConfigError(
                f"slope count {slopes.shape} does not match head axis of {q.shape}"
            )
    if rope is not None:
        if rope.head_dim != d_k:
            raise DimensionError(f"rope head_dim {rope.head_dim} != d_k {d_k}")
        q = rope_rotate(q, positions, rope)
        k = rope_rotate(k, positions, rope)

    perm = tuple(range(q.ndim - 2)) + (q.ndim - 1, q.ndim - 2)
    scores = T.scale(T.matmul(q, T.transpose(k, perm)), 1.0 / np.sqrt(d_k))
    if slopes is not None and np.any(slopes):
        dist = positions[:, None] - positions[None, :]
        bias = slopes.reshape((-1,) + (1, 1)) * dist
        scores = T.add(scores, Tensor(bias))

    if collect_scores is not None:
        collect_scores.append(scores)
    band = mask.matrix
    if activation == "softmax":
        weights = T.softmax(scores, axis=-1, mask=band)
    else:
        weights = T.mul(T.sigmoid(scores), Tensor(band.astype(np.float64)))
        if normalize_sigmoid:
            counts = band.sum(axis=-1, keepdims=True).astype(np.float64)
            weights = T.mul(weights, Tensor(1.0 / counts))
    if collect_weights is not None:
        collect_weights.append(weights)
    return T.matmul(weights, v)


def softmax_attention(q, k, v, mask: BandMask) -> Tensor:
    """Row-normalized attention over the masked score set QK^T/sqrt(d_k)."""
    return banded_attention(q, k, v, mask, activation="softmax")


def sigmoid_attention(q, k, v, mask: BandMask, normalize: bool = False) -> Tensor:
    """output_m = sum over visible n of sigmoid(q_m . k_n / sqrt(d_k)) v_n."""
    return banded_attention(q, k, v, mask, activation="sigmoid", normalize_sigmoid=normalize)


def swat_attention(
    q, k, v, mask: BandMask, slopes: SlopeSchedule, rope: RopeParams
) -> Tensor:
    """Sigmoid attention with rotary rotation plus per-head distance bias (the full composition).

    q/k/v are [h, N, d_k] (a leading batch axis is also accepted).
    """
    q = q if isinstance(q, Tensor) else Tensor(q)
    if q.ndim < 3:
        raise DimensionError("swat_attention expects [h, N, d_k] inputs")
    if len(slopes.slopes) != q.shape[-3]:
        raise ConfigError(
            f"schedule has {len(slopes.slopes)} slopes but inputs have {q.shape[-3]} heads"
        )
    return banded_attention(
        q, k, v, mask, slopes=slopes.as_array(), rope=rope, activation="sigmoid"
    )
