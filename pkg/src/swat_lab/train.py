"""Training loop: banded-mask attention over long sequences, AdamW, cosine schedule.

Window-restricted training is realized as one batched forward over
train_length tokens under a BandMask rather than literally re-sliding a
window; the eval module's ring-cache equivalence test is what certifies the
two views identical. Determinism contract: identical (config, seed, corpus)
produce bit-identical loss series.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import BandMask
from .data import BatchSpec, Corpus, make_batches
from .errors import ConfigError, ContractError, NumericsError
from .model import Model, next_token_loss
from .tensor import Tape


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    lr_peak: float = 3e-4
    lr_min: float = 3e-5
    warmup_steps: int | None = None  # None: 2% of steps, at least 1
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.1
    grad_clip: float = 1.0
    log_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.lr_peak < 0 or self.lr_min < 0 or self.lr_min > self.lr_peak:
            raise ConfigError("need 0 <= lr_min <= lr_peak")
        if self.warmup_steps is not None and not 0 <= self.warmup_steps <= max(self.steps, 1):
            raise ConfigError("warmup_steps must lie within the step budget")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.eps <= 0 or self.grad_clip <= 0 or self.log_every < 1:
            raise ConfigError("eps, grad_clip must be positive and log_every >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")

    @property
    def resolved_warmup(self) -> int:
        if self.warmup_steps is not None:
            return self.warmup_steps
        return max(1, round(0.02 * self.steps))


def lr_at(cfg: TrainConfig, step: int) -> float:
    """Learning rate for 0-based step: linear warmup then cosine to lr_min."""
    warmup = cfg.resolved_warmup
    if step < warmup:
        return cfg.lr_peak * (step + 1) / warmup
    if cfg.steps <= warmup:
        return cfg.lr_peak
    progress = (step - warmup) / (cfg.steps - warmup)
    return cfg.lr_min + 0.5 * (cfg.lr_peak - cfg.lr_min) * (1.0 + math.cos(math.pi * progress))


@dataclass(frozen=True)
class TrainRecord:
    step: int
    loss: float
    lr: float
    grad_norm: float
    tokens_seen: int
    wall_ms: float


@dataclass
class TrainLog:
    records: list[TrainRecord] = field(default_factory=list)

    def append(self, rec: TrainRecord) -> None:
        if self.records and rec.step <= self.records[-1].step:
            raise ContractError("train log steps must be strictly increasing")
        if not math.isfinite(rec.loss):
            raise NumericsError(f"non-finite loss at step {rec.step}")
        self.records.append(rec)

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "loss", "lr", "grad_norm", "tokens_seen", "wall_ms"])
            for r in self.records:
                w.writerow([r.step, repr(r.loss), repr(r.lr), repr(r.grad_norm), r.tokens_seen, f"{r.wall_ms:.3f}"])

    def to_json(self, path, extra: dict | None = None) -> None:
        doc = {"records": [vars(r) for r in self.records]}
        if extra:
            doc.update(extra)
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))

    def content_hash(self) -> str:
        """Hash of the deterministic fields only (wall_ms varies run to run)."""
        h = hashlib.sha256()
        for r in self.records:
            h.update(
                f"{r.step},{r.loss!r},{r.lr!r},{r.grad_norm!r},{r.tokens_seen}\n".encode()
            )
        return h.hexdigest()


@dataclass(frozen=True)
class AdamWHyper:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init_like(cls, params: dict[str, np.ndarray]) -> "AdamWState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    hyper: AdamWHyper,
) -> tuple[dict[str, np.ndarray], AdamWState]:
    """One decoupled-weight-decay Adam update, in place, bias-corrected moments."""
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ContractError("params/grads/state must hold the same names")
    state.t += 1
    bc1 = 1.0 - hyper.beta1 ** state.t
    bc2 = 1.0 - hyper.beta2 ** state.t
    for name in sorted(params):
        p, g = params[name], grads[name]
        if p.shape != g.shape or p.shape != state.m[name].shape:
            raise ContractError(f"shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)
        p -= hyper.lr * (update + hyper.weight_decay * p)
    return params, state


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for name in sorted(grads):
        g = grads[name]
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    return math.sqrt(total)


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale grads in place to global norm <= max_norm; returns the pre-clip norm."""
    norm = global_grad_norm(grads)
    if norm > max_norm:
        factor = max_norm / norm
        for name in sorted(grads):
            grads[name] *= factor
    return norm


def _nonfinite_diagnostic(step: int, model: Model, grads: dict | None) -> str:
    groups = [("param", {k: t.data for k, t in model.params.items()})]
    if grads:
        groups.append(("grad", grads))
    for kind, arrays in groups:
        for name in sorted(arrays):
            a = arrays[name]
            if not np.all(np.isfinite(a)):
                bad = int(np.size(a) - np.isfinite(a).sum())
                return (
                    f"step {step}: non-finite {kind} {name} "
                    f"({bad}/{a.size} entries, max|finite|="
                    f"{np.max(np.abs(a[np.isfinite(a)])) if np.isfinite(a).any() else 'n/a'})"
                )
    return f"step {step}: non-finite loss"


def train(
    model: Model, corpus: Corpus, spec: BatchSpec, cfg: TrainConfig
) -> tuple[Model, TrainLog]:
    """Run the training loop; mutates the model's parameters in place.

    A non-finite loss or gradient aborts with a diagnostic naming the step and
    the first offending parameter. This is the instability signal that
    sigmoid attention without position information is known to produce.
    """
    if model.cfg.window > spec.train_length:
        raise ContractError(
            f"model window {model.cfg.window} exceeds train_length {spec.train_length}"
        )
    if model.cfg.window != spec.train_window:
        raise ContractError(
            f"batch spec window {spec.train_window} != model window {model.cfg.window}"
        )
    log = TrainLog()
    if cfg.steps == 0:
        return model, log

    mask = BandMask(seq_len=spec.train_length, window=model.cfg.window)
    batches = make_batches(corpus, spec, cfg.seed)
    raw_params = {k: t.data for k, t in model.params.items()}
    state = AdamWState.init_like(raw_params)
    tokens_per_step = spec.blocks_per_batch * spec.train_length

    for step in range(cfg.steps):
        t0 = time.perf_counter()
        block = next(batches)
        try:
            with Tape() as tape:
                loss = next_token_loss(model, block, mask=mask)
            tape.backward(loss)
        except NumericsError as e:
            raise NumericsError(_nonfinite_diagnostic(step, model, None)) from e

        grads = {}
        for name, p in model.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            grads[name] = g
            p.grad = None
        for name in sorted(grads):
            if not np.all(np.isfinite(grads[name])):
                raise NumericsError(_nonfinite_diagnostic(step, model, grads))

        norm = clip_grads(grads, cfg.grad_clip)
        lr = lr_at(cfg, step)
        hyper = AdamWHyper(
            lr=lr,
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            eps=cfg.eps,
            weight_decay=cfg.weight_decay,
        )
        adamw_step(raw_params, grads, state, hyper)
        wall_ms = (time.perf_counter() - t0) * 1000.0

        if (step + 1) % cfg.log_every == 0 or step == cfg.steps - 1 or step == 0:
            log.append(
                TrainRecord(
                    step=step + 1,
                    loss=loss.item(),
                    lr=lr,
                    grad_norm=norm,
                    tokens_seen=(step + 1) * tokens_per_step,
                    wall_ms=wall_ms,
                )
            )
    return model, log
