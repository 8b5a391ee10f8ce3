"""Diagnostics behind the attention-sink story.

Four small instruments, each executable on a laptop:

* sparsity_demo: the exact ratio law that makes softmax winner-takes-most.
* evt_sim / evt_sweep: Monte-Carlo mean of the max of L iid Gaussians against
  the mu + sigma*sqrt(2 ln L) prediction.
* density_check: effective support of sigmoid rows vs softmax rows on the
  same scores.
* sink_report: first-token attention share and hidden-state variance of a
  model, layer by layer.
* cost_model / measure_delta / measure_linearity: the N*w*(1+delta) cost
  account with a measured delta and a wall-time linearity fit.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import BandMask, banded_attention
from .data import anchor_stream
from .errors import ContractError, DataError
from .model import Model, forward
from .rng import substream
from .tensor import Tensor, _sigmoid_stable


# ---------------------------------------------------------------- sparsity

@dataclass
class SparsityDemo:
    scores: np.ndarray
    softmax_weights: np.ndarray
    sigmoid_weights: np.ndarray
    ratios: np.ndarray        # alpha_i / alpha_1
    predicted_ratios: np.ndarray  # exp(E_i - E_1)
    max_ratio_err: float


def sparsity_demo(scores) -> SparsityDemo:
    """Softmax and sigmoid weights for one score vector, plus the exact
    identity alpha_i / alpha_1 = exp(E_i - E_1) checked to 1e-12."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ContractError("sparsity_demo expects a non-empty score vector")
    if not np.all(np.isfinite(scores)):
        raise ContractError("scores must be finite")
    shifted = scores - scores.max()
    e = np.exp(shifted)
    soft = e / e.sum()
    sig = _sigmoid_stable(scores)
    ratios = soft / soft[0]
    predicted = np.exp(scores - scores[0])
    err = float(np.max(np.abs(ratios - predicted)))
    return SparsityDemo(
        scores=scores,
        softmax_weights=soft,
        sigmoid_weights=sig,
        ratios=ratios,
        predicted_ratios=predicted,
        max_ratio_err=err,
    )


# ---------------------------------------------------------------- extreme values

@dataclass(frozen=True)
class EvtSample:
    """Mean of max(L iid N(mu, sigma^2)) against the sqrt(2 ln L) prediction."""

    L: int
    mu: float
    sigma: float
    trials: int
    mean_max: float

    def __post_init__(self):
        if self.L < 1:
            raise ContractError("L must be >= 1")
        if self.sigma <= 0:
            raise ContractError("sigma must be positive")
        if self.trials < 1000:
            raise ContractError("need at least 1000 trials for a stable mean")

    @property
    def predicted(self) -> float:
        return self.mu + self.sigma * math.sqrt(2.0 * math.log(self.L))

    @property
    def ratio(self) -> float:
        """Empirical over predicted; NaN when the prediction is zero (L=1, mu=0)."""
        return self.mean_max / self.predicted if self.predicted != 0 else math.nan


_EVT_CHUNK = 256


def _standard_max_means(max_L: int, Ls: list[int], trials: int, seed: int) -> dict[int, float]:
    """Mean prefix-max of standard normals at each requested L.

    One pool of max_L draws per trial serves every L as a prefix, so the
    estimates share randomness and the sweep inherits the sample-wise
    monotonicity of prefix maxima.
    """
    rng = substream(seed, f"evt:{max_L}:{trials}")
    sums = {L: 0.0 for L in Ls}
    done = 0
    while done < trials:
        chunk = min(_EVT_CHUNK, trials - done)
        z = rng.standard_normal((chunk, max_L))
        running = np.maximum.accumulate(z, axis=1)
        for L in Ls:
            sums[L] += float(running[:, L - 1].sum())
        done += chunk
    return {L: s / trials for L, s in sums.items()}


def evt_sim(L: int, mu: float = 0.0, sigma: float = 1.0, trials: int = 10000, seed: int = 0) -> EvtSample:
    means = _standard_max_means(L, [L], trials, seed)
    return EvtSample(L=L, mu=mu, sigma=sigma, trials=trials, mean_max=mu + sigma * means[L])


def evt_sweep(
    Ls: list[int], mu: float = 0.0, sigma: float = 1.0, trials: int = 10000, seed: int = 0
) -> list[EvtSample]:
    """One EvtSample per L, all drawn from shared nested pools."""
    if not Ls:
        raise ContractError("Ls must be non-empty")
    Ls = sorted(set(int(L) for L in Ls))
    means = _standard_max_means(max(Ls), Ls, trials, seed)
    return [
        EvtSample(L=L, mu=mu, sigma=sigma, trials=trials, mean_max=mu + sigma * means[L])
        for L in Ls
    ]


# ---------------------------------------------------------------- density

DENSITY_THRESHOLDS = (0.001, 0.01, 0.05)
# The support comparison is asserted at this threshold and reported at all.
DEFAULT_SUPPORT_THRESHOLD = 0.01


@dataclass
class DensityReport:
    scores: np.ndarray
    softmax_weights: np.ndarray
    sigmoid_weights: np.ndarray
    thresholds: tuple
    softmax_support: dict[float, int]
    sigmoid_support: dict[float, int]
    softmax_max_weight: float
    sigmoid_max_weight: float


def effective_support(weights: np.ndarray, threshold: float) -> int:
    return int(np.count_nonzero(weights > threshold))


def density_check(scores, thresholds: tuple = DENSITY_THRESHOLDS) -> DensityReport:
    """Effective support of sigmoid vs softmax weights on identical scores.

    Supports at every threshold are reported as computed, with no rounding in
    either function's favor. A sigmoid row that keeps strictly fewer entries
    above the default 0.01 threshold than softmax would contradict the density
    claim, so that case raises; ties (constant scores, untrained models whose
    rows are near uniform) pass through and are simply reported.
    """
    demo = sparsity_demo(scores)
    soft_sup = {t: effective_support(demo.softmax_weights, t) for t in thresholds}
    sig_sup = {t: effective_support(demo.sigmoid_weights, t) for t in thresholds}
    t0 = DEFAULT_SUPPORT_THRESHOLD
    if t0 in thresholds and sig_sup[t0] < soft_sup[t0]:
        raise ContractError(
            f"sigmoid support {sig_sup[t0]} smaller than softmax "
            f"{soft_sup[t0]} at threshold {t0}"
        )
    return DensityReport(
        scores=demo.scores,
        softmax_weights=demo.softmax_weights,
        sigmoid_weights=demo.sigmoid_weights,
        thresholds=tuple(thresholds),
        softmax_support=soft_sup,
        sigmoid_support=sig_sup,
        softmax_max_weight=float(demo.softmax_weights.max()),
        sigmoid_max_weight=float(demo.sigmoid_weights.max()),
    )


def density_check_model(model: Model, tokens, thresholds: tuple = DENSITY_THRESHOLDS) -> list[DensityReport]:
    """Density reports for the last-layer score rows of a real forward pass.

    Each report covers one full-window query row (one head), comparing what
    softmax and sigmoid would do with the scores the model actually produced.
    The stream is anchored like every other model input.
    """
    collected: list[Tensor] = []
    forward(model, anchor_stream(tokens), collect_scores=collected)
    scores = collected[-1].data[0]  # [h, N, N]
    n = scores.shape[-1]
    m = n - 1  # the query with the most visible context
    lo = max(0, m - model.cfg.window + 1)
    reports = []
    for h in range(scores.shape[0]):
        row = scores[h, m, lo : m + 1]
        reports.append(density_check(row, thresholds=thresholds))
    return reports


# ---------------------------------------------------------------- attention sink

@dataclass
class SinkReport:
    """Per-layer first-token statistics under full visibility.

    Shares average over heads and over queries in the second half of the
    sequence, so every averaged query sees the first token across a span
    where a uniform attention row would give it roughly 1/N. For sigmoid
    models the share is the renormalized row mass (labeled); raw sigmoid
    masses are kept alongside.
    """

    n_tokens: int
    activation: str
    first_share: np.ndarray       # [layers] renormalized share of token 0
    first_mass_raw: np.ndarray    # [layers] raw mass of token 0 (== share for softmax)
    var_token0: np.ndarray        # [layers] feature variance of hidden state at token 0
    var_rest: np.ndarray          # [layers] mean feature variance over tokens 1..N-1
    entropy: np.ndarray           # [layers] mean row entropy of renormalized weights
    attention_maps: list = field(default_factory=list)  # [layers] mean-over-heads [N, N]

    def __post_init__(self):
        if self.activation == "softmax" and (
            np.any(self.first_share < 0) or np.any(self.first_share > 1)
        ):
            raise ContractError("softmax shares must lie in [0, 1]")
        if np.any(self.var_token0 < 0) or np.any(self.var_rest < 0):
            raise ContractError("variances must be nonnegative")

    @property
    def uniform_share(self) -> float:
        return 1.0 / self.n_tokens

    def to_json(self, path) -> None:
        doc = {
            "n_tokens": self.n_tokens,
            "activation": self.activation,
            "uniform_share": self.uniform_share,
            "first_share": self.first_share.tolist(),
            "first_mass_raw": self.first_mass_raw.tolist(),
            "var_token0": self.var_token0.tolist(),
            "var_rest": self.var_rest.tolist(),
            "entropy": self.entropy.tolist(),
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))

    def to_csv_dir(self, out_dir) -> None:
        """One row-major CSV heatmap per layer (mean over heads)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, amap in enumerate(self.attention_maps):
            with open(out / f"attention_layer{i}.csv", "w", newline="") as f:
                w = csv.writer(f)
                for row in amap:
                    w.writerow([repr(float(x)) for x in row])


def sink_report(model: Model, tokens) -> SinkReport:
    """First-token attention share and hidden-state variance per layer.

    The stream is anchored with the start-of-sequence id, so "first token"
    means the same thing it does during training. Attention is evaluated with
    every earlier token visible regardless of the model's training window;
    the question is what the learned score geometry does with the first token
    when it can be seen at all.
    """
    tokens = np.asarray(tokens)
    if tokens.ndim != 1:
        raise DataError("sink_report expects a single token stream")
    seq = anchor_stream(tokens)
    n = seq.size
    if n < 8:
        raise DataError("need at least 8 tokens for variance statistics")
    full = BandMask(seq_len=n, window=n)
    weights_per_layer: list[Tensor] = []
    hidden_per_layer: list[Tensor] = []
    forward(model, seq, mask=full, collect_attn=weights_per_layer, collect_hidden=hidden_per_layer)

    half = n // 2
    shares, raws, var0s, var_rests, entropies, maps = [], [], [], [], [], []
    for w_t, h_t in zip(weights_per_layer, hidden_per_layer):
        w = w_t.data[0]  # [h, N, N]
        rowsum = w.sum(axis=-1, keepdims=True)
        renorm = w / np.maximum(rowsum, 1e-30)
        shares.append(float(renorm[:, half:, 0].mean()))
        raws.append(float(w[:, half:, 0].mean()))
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(renorm > 0, renorm * np.log(renorm), 0.0)
        entropies.append(float(-plogp[:, half:, :].sum(axis=-1).mean()))
        hid = h_t.data[0]  # [N, d]
        var = hid.var(axis=-1)
        var0s.append(float(var[0]))
        var_rests.append(float(var[1:].mean()))
        maps.append(w.mean(axis=0))
    return SinkReport(
        n_tokens=n,
        activation=model.cfg.activation,
        first_share=np.array(shares),
        first_mass_raw=np.array(raws),
        var_token0=np.array(var0s),
        var_rest=np.array(var_rests),
        entropy=np.array(entropies),
        attention_maps=maps,
    )


# ---------------------------------------------------------------- cost model

@dataclass(frozen=True)
class CostEstimate:
    """Windowed-inference cost N*w*(1+delta) in score-unit operations."""

    n_tokens: int
    window: int
    delta: float
    softmax_full_per_token: float | None = None
    swat_windowed_per_token: float | None = None

    def __post_init__(self):
        if not 0 <= self.delta < 0.5:
            raise ContractError("delta must lie in [0, 0.5)")

    @property
    def predicted_cost(self) -> float:
        return self.n_tokens * self.window * (1.0 + self.delta)


def cost_model(n_tokens: int, window: int, delta: float) -> CostEstimate:
    if not (n_tokens >= window >= 1):
        raise ContractError("need n_tokens >= window >= 1")
    return CostEstimate(n_tokens=n_tokens, window=window, delta=delta)


def _time_banded(q, k, v, mask, slopes, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        banded_attention(
            Tensor(q), Tensor(k), Tensor(v), mask,
            slopes=slopes, activation="sigmoid",
        )
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def measure_delta(
    n_tokens: int = 1024,
    window: int = 128,
    n_heads: int = 4,
    head_dim: int = 32,
    repeats: int = 5,
    seed: int = 0,
) -> float:
    """Fractional extra cost of the linear position bias.

    Times the banded sigmoid attention with and without slopes on identical
    shapes, median of `repeats` runs each, and clamps at zero so timer noise
    cannot produce a negative overhead.
    """
    if repeats < 5:
        raise ContractError("need at least 5 repeats for a stable median")
    if n_heads < 2 or n_heads % 2:
        raise ContractError("delta timing uses balanced slopes; n_heads must be even")
    rng = substream(seed, "delta-timing")
    shape = (n_heads, n_tokens, head_dim)
    q, k, v = (rng.standard_normal(shape) for _ in range(3))
    mask = BandMask(seq_len=n_tokens, window=window)
    slopes = np.array([2.0 ** -(i % (n_heads // 2) + 1) * (1 if i >= n_heads // 2 else -1)
                       for i in range(n_heads)])
    _time_banded(q, k, v, mask, None, 1)  # warm the caches once
    t_plain = _time_banded(q, k, v, mask, None, repeats)
    t_bias = _time_banded(q, k, v, mask, slopes, repeats)
    return max(0.0, (t_bias - t_plain) / t_plain)


@dataclass
class LinearityReport:
    lengths: list[int]
    seconds: list[float]
    slope: float
    intercept: float
    r_squared: float


def measure_linearity(model: Model, lengths: list[int], repeats: int = 1, seed: int = 0) -> LinearityReport:
    """Wall time of incremental windowed inference across stream lengths,
    with a least-squares linear fit and its R^2."""
    from .evaluation import KVCacheRing, incremental_forward

    if len(lengths) < 3:
        raise ContractError("need at least 3 lengths for a meaningful fit")
    lengths = sorted(lengths)
    rng = substream(seed, "linearity-tokens")
    tokens = rng.integers(0, model.cfg.vocab_size, size=max(lengths))
    secs = []
    for n in lengths:
        best = math.inf
        for _ in range(repeats):
            cache = KVCacheRing.for_model(model)
            t0 = time.perf_counter()
            for t in range(n):
                incremental_forward(model, cache, int(tokens[t]))
            best = min(best, time.perf_counter() - t0)
        secs.append(best)
    xs = np.array(lengths, dtype=np.float64)
    ys = np.array(secs)
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(((ys - pred) ** 2).sum())
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return LinearityReport(
        lengths=list(lengths),
        seconds=[float(s) for s in secs],
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r2,
    )
