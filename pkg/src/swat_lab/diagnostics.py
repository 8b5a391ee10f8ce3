"""Named finite-difference batteries over every differentiable primitive.

The CLI gradcheck command and the gradient test suite both run these, so a
check that fails in CI fails identically at the terminal. Each case projects
its output through a fixed random weighting to produce the scalar that
gradcheck differentiates; a plain sum would give constant gradients and hide
transposition mistakes.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .attention import BandMask, RopeParams, banded_attention, rope_rotate, slope_schedule
from .model import ModelConfig, build_model, next_token_loss
from .rng import substream
from .tensor import (
    GradcheckReport,
    Tensor,
    add,
    cross_entropy_logits,
    embedding,
    gradcheck,
    matmul,
    mean,
    mul,
    reshape,
    rms_norm,
    scale,
    sigmoid,
    silu,
    softmax,
    sub,
    sum as tsum,
    transpose,
)

PRIMITIVE_TOL = 1e-5
END_TO_END_TOL = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_err: float
    tol: float
    n_coords: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _wrap(name: str, report: GradcheckReport) -> CheckResult:
    return CheckResult(name=name, max_rel_err=report.max_rel_err, tol=report.tol,
                       n_coords=report.n_coords)


def _projector(rng, shape):
    w = Tensor(rng.standard_normal(shape))

    def project(t: Tensor) -> Tensor:
        return tsum(mul(t, w))

    return project


def primitive_checks(seed: int = 0) -> list[CheckResult]:
    """One gradcheck per differentiable primitive, deterministic in seed."""
    results = []

    def run(name, f, x, tol=PRIMITIVE_TOL):
        results.append(_wrap(name, gradcheck(f, x, tol=tol)))

    def rng_for(name):
        return substream(seed, f"gradcheck:{name}")

    r = rng_for("add")
    b = Tensor(r.standard_normal((3, 4)))
    run("add", lambda x, p=_projector(r, (3, 4)): p(add(x, b)), Tensor(r.standard_normal((3, 4))))

    r = rng_for("add_broadcast")
    bb = Tensor(r.standard_normal((1, 4)))
    run("add_broadcast", lambda x, p=_projector(r, (3, 4)): p(add(x, bb)),
        Tensor(r.standard_normal((3, 4))))

    r = rng_for("sub")
    c = Tensor(r.standard_normal((3, 4)))
    run("sub", lambda x, p=_projector(r, (3, 4)): p(sub(x, c)), Tensor(r.standard_normal((3, 4))))

    r = rng_for("sub_rhs")
    c2 = Tensor(r.standard_normal((3, 4)))
    run("sub_rhs", lambda x, p=_projector(r, (3, 4)): p(sub(c2, x)),
        Tensor(r.standard_normal((3, 4))))

    r = rng_for("mul")
    d = Tensor(r.standard_normal((3, 4)))
    run("mul", lambda x, p=_projector(r, (3, 4)): p(mul(x, d)), Tensor(r.standard_normal((3, 4))))

    r = rng_for("scale")
    run("scale", lambda x, p=_projector(r, (3, 4)): p(scale(x, -1.7)),
        Tensor(r.standard_normal((3, 4))))

    r = rng_for("matmul")
    m2 = Tensor(r.standard_normal((4, 5)))
    run("matmul", lambda x, p=_projector(r, (3, 5)): p(matmul(x, m2)),
        Tensor(r.standard_normal((3, 4))))

    r = rng_for("matmul_rhs")
    m2l = Tensor(r.standard_normal((3, 4)))
    run("matmul_rhs", lambda x, p=_projector(r, (3, 5)): p(matmul(m2l, x)),
        Tensor(r.standard_normal((4, 5))))

    r = rng_for("matmul_batched")
    m3 = Tensor(r.standard_normal((2, 4, 5)))
    run("matmul_batched", lambda x, p=_projector(r, (2, 3, 5)): p(matmul(x, m3)),
        Tensor(r.standard_normal((2, 3, 4))))

    r = rng_for("transpose")
    run("transpose", lambda x, p=_projector(r, (4, 2, 3)): p(transpose(x, (2, 0, 1))),
        Tensor(r.standard_normal((2, 3, 4))))

    r = rng_for("reshape")
    run("reshape", lambda x, p=_projector(r, (6, 2)): p(reshape(x, (6, 2))),
        Tensor(r.standard_normal((3, 4))))

    r = rng_for("sum_axis")
    run("sum_axis", lambda x, p=_projector(r, (3,)): p(tsum(x, axis=1)),
        Tensor(r.standard_normal((3, 4))))

    r = rng_for("mean")
    run("mean", lambda x, p=_projector(r, (4,)): p(mean(x, axis=0)),
        Tensor(r.standard_normal((3, 4))))

    r = rng_for("sigmoid")
    run("sigmoid", lambda x, p=_projector(r, (3, 4)): p(sigmoid(x)),
        Tensor(r.standard_normal((3, 4)) * 3))

    r = rng_for("silu")
    run("silu", lambda x, p=_projector(r, (3, 4)): p(silu(x)),
        Tensor(r.standard_normal((3, 4)) * 3))

    r = rng_for("softmax")
    run("softmax", lambda x, p=_projector(r, (5, 5)): p(softmax(x, axis=-1)),
        Tensor(r.standard_normal((5, 5))))

    r = rng_for("softmax_banded")
    band = BandMask(seq_len=5, window=3).matrix
    run("softmax_banded", lambda x, p=_projector(r, (5, 5)): p(softmax(x, axis=-1, mask=band)),
        Tensor(r.standard_normal((5, 5))))

    r = rng_for("rms_norm_x")
    gain = Tensor(1.0 + 0.1 * r.standard_normal(6))
    run("rms_norm_x", lambda x, p=_projector(r, (4, 6)): p(rms_norm(x, gain)),
        Tensor(r.standard_normal((4, 6))))

    r = rng_for("rms_norm_gain")
    xs = Tensor(r.standard_normal((4, 6)))
    run("rms_norm_gain", lambda g, p=_projector(r, (4, 6)): p(rms_norm(xs, g)),
        Tensor(1.0 + 0.1 * r.standard_normal(6)))

    r = rng_for("embedding")
    ids = r.integers(0, 7, size=(2, 5))
    run("embedding", lambda w, p=_projector(r, (2, 5, 3)): p(embedding(w, ids)),
        Tensor(r.standard_normal((7, 3))))

    r = rng_for("cross_entropy")
    targets = r.integers(0, 6, size=4)
    run("cross_entropy", lambda x: cross_entropy_logits(x, targets),
        Tensor(r.standard_normal((4, 6))))

    r = rng_for("rope_rotate")
    rope = RopeParams(head_dim=4)
    pos = np.arange(5)
    run("rope_rotate", lambda x, p=_projector(r, (2, 5, 4)): p(rope_rotate(x, pos, rope)),
        Tensor(r.standard_normal((2, 5, 4))))

    rope = RopeParams(head_dim=4)
    mask = BandMask(seq_len=6, window=3)
    slopes = slope_schedule(2, "balanced").as_array()
    r = rng_for("swat_attention")
    qd, kd, vd = (r.standard_normal((2, 6, 4)) for _ in range(3))
    for arg, fixed in (("q", (kd, vd)), ("k", (qd, vd)), ("v", (qd, kd))):
        proj = _projector(r, (2, 6, 4))

        def f(x, arg=arg, fixed=fixed, proj=proj):
            a, b2 = (Tensor(t) for t in fixed)
            if arg == "q":
                out = banded_attention(x, a, b2, mask, slopes=slopes, rope=rope)
            elif arg == "k":
                out = banded_attention(a, x, b2, mask, slopes=slopes, rope=rope)
            else:
                out = banded_attention(a, b2, x, mask, slopes=slopes, rope=rope)
            return proj(out)

        run(f"swat_attention_{arg}", f, Tensor(r.standard_normal((2, 6, 4))))

    return results


_E2E_CONFIG = ModelConfig(
    vocab_size=11,
    d_model=8,
    n_heads=2,
    n_layers=2,
    window=3,
    activation="sigmoid",
    pos_mode="alirope",
    slope_mode="balanced",
)


def end_to_end_param_names() -> list[str]:
    return sorted(build_model(_E2E_CONFIG).params)


def end_to_end_check(seed: int = 0, param_name: str | None = None) -> CheckResult:
    """Loss-vs-one-parameter finite-difference check on a two-layer model.

    The checked parameter rotates with the seed so a sweep of seeds covers
    the whole parameter list.
    """
    model = build_model(dataclasses.replace(_E2E_CONFIG, seed=seed))
    names = sorted(model.params)
    name = param_name if param_name is not None else names[seed % len(names)]
    if name not in model.params:
        raise KeyError(f"unknown parameter {name!r}")
    rng = substream(seed, "gradcheck:end_to_end")
    t_len = 6
    blocks = rng.integers(0, model.cfg.vocab_size, size=(2, t_len + 1))
    mask = BandMask(seq_len=t_len, window=model.cfg.window)

    def f(x: Tensor) -> Tensor:
        original = model.params[name]
        model.params[name] = x
        try:
            return next_token_loss(model, blocks, mask)
        finally:
            model.params[name] = original

    report = gradcheck(f, model.params[name], tol=END_TO_END_TOL)
    return _wrap(f"end_to_end[{name}]", report)
