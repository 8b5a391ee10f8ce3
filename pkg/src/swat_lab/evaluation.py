"""Sliding-window inference and perplexity measurement.

Two equivalent routes compute the same logits: a per-token incremental pass
over a fixed-capacity ring of cached keys/values (linear in stream length,
constant memory), and a batched forward under a BandMask. Their agreement at
every position is the module's central invariant, and perplexity can be
computed through either route.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace as dc_replace
from pathlib import Path

import numpy as np

from .attention import BandMask, rope_angles
from .data import BOS_ID, BatchSpec, Corpus, anchor_stream
from .errors import ConfigError, ContractError, DataError, ProtocolError
from .model import Model, ModelConfig, build_model, forward
from .tensor import Tensor, _sigmoid_stable


class KVCacheRing:
    """Rolling store of the last `capacity` keys/values with absolute positions."""

    def __init__(self, capacity: int, n_layers: int, n_heads: int, head_dim: int):
        if capacity < 1:
            raise ConfigError("cache capacity must be >= 1")
        self.capacity = capacity
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.head_dim = head_dim
        self.k = np.zeros((n_layers, capacity, n_heads, head_dim))
        self.v = np.zeros((n_layers, capacity, n_heads, head_dim))
        self.pos = np.full(capacity, -1, dtype=np.int64)
        self.next_pos = 0  # count of tokens appended so far

    @classmethod
    def for_model(cls, model: Model, capacity: int | None = None) -> "KVCacheRing":
        cfg = model.cfg
        return cls(
            capacity=capacity if capacity is not None else cfg.window,
            n_layers=cfg.n_layers,
            n_heads=cfg.n_heads,
            head_dim=cfg.head_dim,
        )

    def occupancy(self) -> int:
        return min(self.next_pos, self.capacity)

    def positions(self) -> np.ndarray:
        """Absolute positions currently held, ascending."""
        return np.sort(self.pos[: self.occupancy()])


def _rms_np(x: np.ndarray, gain: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    return x * gain / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)


def _silu_np(x: np.ndarray) -> np.ndarray:
    return x * _sigmoid_stable(x)


def incremental_forward(model: Model, cache: KVCacheRing, token: int) -> np.ndarray:
    """Logits for one appended token; equals the banded batch forward over the
    whole history at this position to 1e-8."""
    cfg = model.cfg
    if (
        cache.n_layers != cfg.n_layers
        or cache.n_heads != cfg.n_heads
        or cache.head_dim != cfg.head_dim
    ):
        raise ConfigError("cache geometry does not match the model")
    token = int(token)
    if not 0 <= token < cfg.vocab_size:
        raise DataError(f"token id {token} outside vocab {cfg.vocab_size}")

    p = model.params
    h, d_k, d = cfg.n_heads, cfg.head_dim, cfg.d_model
    m = cache.next_pos
    slot = m % cache.capacity
    slopes = model.slope_array()
    if model.rope is not None:
        cos_m, sin_m = rope_angles(model.rope, np.array([m]))
        cos_m, sin_m = cos_m[0], sin_m[0]

    def rotate(vec_heads: np.ndarray) -> np.ndarray:
        even, odd = vec_heads[..., 0::2], vec_heads[..., 1::2]
        out = np.empty_like(vec_heads)
        out[..., 0::2] = even * cos_m - odd * sin_m
        out[..., 1::2] = even * sin_m + odd * cos_m
        return out

    x = p["embed.weight"].data[token].copy()
    for i in range(cfg.n_layers):
        pre = f"layers.{i}"
        normed = _rms_np(x, p[f"{pre}.attn_norm.gain"].data)
        q = (normed @ p[f"{pre}.attn.q.weight"].data).reshape(h, d_k)
        k = (normed @ p[f"{pre}.attn.k.weight"].data).reshape(h, d_k)
        v = (normed @ p[f"{pre}.attn.v.weight"].data).reshape(h, d_k)
        if model.rope is not None:
            q, k = rotate(q), rotate(k)
        cache.k[i, slot] = k
        cache.v[i, slot] = v

        occ = min(m + 1, cache.capacity)
        keys = cache.k[i, :occ]  # [occ, h, d_k]
        values = cache.v[i, :occ]
        positions = cache.pos[:occ].copy()
        positions[slot] = m  # the new token is visible to itself before pos commits
        scores = np.einsum("hd,nhd->hn", q, keys) / math.sqrt(d_k)
        if slopes is not None:
            scores = scores + slopes[:, None] * (m - positions)[None, :]
        if cfg.activation == "softmax":
            scores -= scores.max(axis=1, keepdims=True)
            e = np.exp(scores)
            w = e / e.sum(axis=1, keepdims=True)
        else:
            w = _sigmoid_stable(scores)
        att = np.einsum("hn,nhd->hd", w, values).reshape(d)
        x = x + att @ p[f"{pre}.attn.o.weight"].data

        normed2 = _rms_np(x, p[f"{pre}.mlp_norm.gain"].data)
        gate = _silu_np(normed2 @ p[f"{pre}.mlp.gate.weight"].data)
        up = normed2 @ p[f"{pre}.mlp.up.weight"].data
        x = x + (gate * up) @ p[f"{pre}.mlp.down.weight"].data

    cache.pos[slot] = m
    cache.next_pos = m + 1
    final = _rms_np(x, p["norm.gain"].data)
    return final @ p["head.weight"].data


def _nll_from_logits(logits: np.ndarray, target: int) -> float:
    m = logits.max()
    return float(np.log(np.exp(logits - m).sum()) + m - logits[target])


def _stream_nll_incremental(model: Model, tokens: np.ndarray, window: int) -> float:
    cache = KVCacheRing.for_model(model, capacity=window)
    total = 0.0
    for t in range(tokens.size - 1):
        logits = incremental_forward(model, cache, int(tokens[t]))
        total += _nll_from_logits(logits, int(tokens[t + 1]))
    return total


def _stream_nll_banded(model: Model, tokens: np.ndarray, window: int) -> float:
    mask = BandMask(seq_len=tokens.size - 1, window=window)
    logits = forward(model, tokens[:-1], mask=mask).data
    m = logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(logits - m).sum(axis=1)) + m[:, 0]
    picked = logits[np.arange(tokens.size - 1), tokens[1:]]
    return float((lse - picked).sum())


def _stream_nll_chunked(model: Model, tokens: np.ndarray, window: int) -> tuple[float, int]:
    """Independent anchored chunks of up to `window` content tokens each.

    Every content token is scored, but chunks share no context with each
    other, a documented bias of this mode relative to the sliding routes."""
    total, count = 0.0, 0
    for start in range(0, tokens.size, window):
        seq = anchor_stream(tokens[start : start + window])
        if seq.size < 2:
            break
        mask = BandMask(seq_len=seq.size - 1, window=seq.size)
        logits = forward(model, seq[:-1], mask=mask).data
        m = logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(logits - m).sum(axis=1)) + m[:, 0]
        picked = logits[np.arange(seq.size - 1), seq[1:]]
        total += float((lse - picked).sum())
        count += seq.size - 1
    return total, count

# Streams at or below this length use the batched route under "auto".
_AUTO_BANDED_MAX = 1024


def perplexity(model: Model, tokens: np.ndarray, eval_window: int, method: str = "auto") -> float:
    """exp(mean next-token NLL) over a stream, under sliding-window inference.

    The stream is anchored with the start-of-sequence id (the shape every
    training block takes), so each of the `tokens` is scored exactly once and
    the anchor itself is never a target.
    """
    tokens = np.asarray(tokens)
    if tokens.size < 2:
        raise DataError("perplexity needs at least 2 tokens")
    if eval_window < 1:
        raise ContractError("eval_window must be >= 1")
    if model.cfg.vocab_size <= BOS_ID:
        raise ConfigError(
            f"vocab {model.cfg.vocab_size} has no room for the start marker {BOS_ID}"
        )
    if method == "auto":
        method = "banded" if tokens.size <= _AUTO_BANDED_MAX else "incremental"
    if method == "incremental":
        nll = _stream_nll_incremental(model, anchor_stream(tokens), eval_window)
        count = tokens.size
    elif method == "banded":
        nll = _stream_nll_banded(model, anchor_stream(tokens), eval_window)
        count = tokens.size
    elif method == "chunked":
        nll, count = _stream_nll_chunked(model, tokens, eval_window)
    else:
        raise ConfigError(f"unknown perplexity method {method!r}")
    return math.exp(nll / count)


@dataclass
class EvalGrid:
    """Perplexity over (eval length x window); NaN cells mark 'not enough tokens'."""

    windows: list[int]
    lengths: list[int]
    ppl: np.ndarray  # [len(lengths), len(windows)]
    token_counts: np.ndarray  # scored tokens per cell
    metadata: dict = field(default_factory=dict)

    @property
    def log10_ppl(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.log10(self.ppl)

    def cell(self, length: int, window: int) -> float:
        return float(self.ppl[self.lengths.index(length), self.windows.index(window)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["eval_length"] + [f"w{win}" for win in self.windows])
            for i, length in enumerate(self.lengths):
                row = [
                    "" if math.isnan(self.ppl[i, j]) else repr(float(self.ppl[i, j]))
                    for j in range(len(self.windows))
                ]
                w.writerow([length] + row)

    def to_json(self, path) -> None:
        doc = {
            "windows": self.windows,
            "lengths": self.lengths,
            "ppl": [[None if math.isnan(x) else x for x in row] for row in self.ppl.tolist()],
            "log10_ppl": [
                [None if math.isnan(x) else x for x in row] for row in self.log10_ppl.tolist()
            ],
            "token_counts": self.token_counts.tolist(),
            "metadata": self.metadata,
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def eval_grid(
    model: Model,
    tokens: np.ndarray,
    windows: list[int],
    lengths: list[int],
    budget: int | None = None,
    method: str = "auto",
    metadata: dict | None = None,
) -> EvalGrid:
    """Aggregate stream perplexity for each (window, eval length) cell.

    Each cell splits the same token prefix into consecutive length-l streams
    and scores each stream independently, so cells differ only in the axis
    under study. A cell with no complete stream is marked absent (NaN).
    """
    tokens = np.asarray(tokens)
    if not windows or not lengths:
        raise ContractError("windows and lengths must be non-empty")
    if budget is None:
        budget = tokens.size
    budget = min(budget, tokens.size)
    ppl = np.full((len(lengths), len(windows)), np.nan)
    counts = np.zeros((len(lengths), len(windows)), dtype=np.int64)
    for i, length in enumerate(lengths):
        if length < 2:
            raise ContractError("eval lengths must be >= 2")
        n_streams = budget // length
        for j, window in enumerate(windows):
            if n_streams == 0:
                continue
            total_nll, total_count = 0.0, 0
            for s in range(n_streams):
                stream = tokens[s * length : (s + 1) * length]
                p = perplexity(model, stream, eval_window=window, method=method)
                total_nll += math.log(p) * stream.size
                total_count += stream.size
            ppl[i, j] = math.exp(total_nll / total_count)
            counts[i, j] = total_count
    return EvalGrid(
        windows=list(windows),
        lengths=list(lengths),
        ppl=ppl,
        token_counts=counts,
        metadata=metadata or {},
    )


@dataclass(frozen=True)
class RegimeSpec:
    train_window: int
    train_length: int

    @property
    def label(self) -> str:
        return "vanilla" if self.train_length == self.train_window else "sliding"


@dataclass
class RegimeRow:
    label: str
    train_window: int
    train_length: int
    ppl_by_length: dict[int, float]


@dataclass
class RegimeReport:
    rows: list[RegimeRow]
    eval_lengths: list[int]
    metadata: dict = field(default_factory=dict)

    def best_by_length(self) -> dict[int, int]:
        """Index of the minimum-ppl row per eval length (Table layout: bold the min per column)."""
        out = {}
        for length in self.eval_lengths:
            vals = [r.ppl_by_length.get(length, math.inf) for r in self.rows]
            out[length] = int(np.argmin(vals))
        return out

    def to_markdown(self) -> str:
        best = self.best_by_length()
        head = "| model | window | length | " + " | ".join(f"ppl@{l}" for l in self.eval_lengths) + " |"
        sep = "|" + "---|" * (3 + len(self.eval_lengths))
        lines = [head, sep]
        for idx, r in enumerate(self.rows):
            cells = []
            for length in self.eval_lengths:
                v = r.ppl_by_length.get(length)
                s = "" if v is None else f"{v:.4f}"
                if v is not None and best[length] == idx:
                    s = f"**{s}**"
                cells.append(s)
            lines.append(
                f"| {r.label} | {r.train_window} | {r.train_length} | " + " | ".join(cells) + " |"
            )
        return "\n".join(lines)

    def to_json(self, path) -> None:
        doc = {
            "eval_lengths": self.eval_lengths,
            "rows": [
                {
                    "label": r.label,
                    "train_window": r.train_window,
                    "train_length": r.train_length,
                    "ppl_by_length": {str(k): v for k, v in r.ppl_by_length.items()},
                }
                for r in self.rows
            ],
            "best_by_length": {str(k): v for k, v in self.best_by_length().items()},
            "metadata": self.metadata,
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def compare_training_regimes(
    model_cfg: ModelConfig,
    corpus: Corpus,
    regimes: list[RegimeSpec],
    train_cfgs,
    batch_size_tokens: int,
    eval_lengths: list[int],
    eval_tokens: np.ndarray | None = None,
    method: str = "auto",
) -> RegimeReport:
    """Train one model per regime under a matched budget and tabulate ppl per eval length.

    Each model is evaluated with its own training window (the comparison is
    about how training length interacts with that window). `train_cfgs` is a
    single shared TrainConfig or one per regime; budgets must match.
    """
    from .train import TrainConfig, train  # local import to avoid a cycle

    if isinstance(train_cfgs, TrainConfig):
        train_cfgs = [train_cfgs] * len(regimes)
    if len(train_cfgs) != len(regimes):
        raise ProtocolError("need one train config per regime (or one shared)")
    budgets = {(tc.steps, batch_size_tokens) for tc in train_cfgs}
    if len(budgets) != 1:
        raise ProtocolError(f"mismatched training budgets across regimes: {budgets}")

    if eval_tokens is None:
        eval_tokens = corpus.test
    rows = []
    for spec_r, tc in zip(regimes, train_cfgs):
        cfg = dc_replace(model_cfg, window=spec_r.train_window)
        m = build_model(cfg)
        bs = BatchSpec(
            batch_size_tokens=batch_size_tokens,
            train_length=spec_r.train_length,
            train_window=spec_r.train_window,
        )
        m, _ = train(m, corpus, bs, tc)
        ppl_by_length: dict[int, float] = {}
        for length in eval_lengths:
            n_streams = eval_tokens.size // length
            if n_streams == 0:
                continue
            total_nll, total_count = 0.0, 0
            for s in range(n_streams):
                stream = eval_tokens[s * length : (s + 1) * length]
                p = perplexity(m, stream, eval_window=spec_r.train_window, method=method)
                total_nll += math.log(p) * stream.size
                total_count += stream.size
            ppl_by_length[length] = math.exp(total_nll / total_count)
        rows.append(
            RegimeRow(
                label=spec_r.label,
                train_window=spec_r.train_window,
                train_length=spec_r.train_length,
                ppl_by_length=ppl_by_length,
            )
        )
    return RegimeReport(rows=rows, eval_lengths=list(eval_lengths))
