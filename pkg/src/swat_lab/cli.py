"""Command-line surface: train, evaluate, diagnose, demo, gradcheck, bench.

Every command resolves one ExperimentConfig (from --config, --preset, or a
built-in toy default where that makes sense), writes machine-readable output
under a timestamped run directory, and prints a short human summary. Exit
codes are a stable contract: 0 success, 2 validation failure, 3 numeric
failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis
from .checkpoint import load_checkpoint, model_content_hash, save_checkpoint
from .config import (
    ExperimentConfig,
    apply_overrides,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
)
from .data import Corpus, corpus_from_bytes, load_corpus, synthetic_text
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    IntegrityError,
    NumericsError,
    ProtocolError,
)
from .evaluation import RegimeSpec, compare_training_regimes, eval_grid
from .model import ModelConfig, build_model
from .train import TrainConfig, train

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

_VALIDATION_ERRORS = (ConfigError, ContractError, DataError, DimensionError, ProtocolError)


# ---------------------------------------------------------------- plumbing

def _presets_root():
    return resources.files("swat_lab") / "presets"


def preset_names() -> list[str]:
    return sorted(p.name[: -len(".json")] for p in _presets_root().iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    entry = _presets_root() / f"{name}.json"
    if not entry.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return json.loads(entry.read_text())


def _toy_doc() -> dict:
    return load_preset("toy")


def resolve_config(args, default_toy: bool = False) -> ExperimentConfig:
    if getattr(args, "config", None) and getattr(args, "preset", None):
        raise ConfigError("pass either --config or --preset, not both")
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text()) if Path(args.config).exists() else None
        if doc is None:
            raise ConfigError(f"config file not found: {args.config}")
    elif getattr(args, "preset", None):
        doc = load_preset(args.preset)
    elif default_toy:
        doc = _toy_doc()
    else:
        raise ConfigError("need --config PATH or --preset NAME")
    doc = apply_overrides(doc, getattr(args, "set", None) or [])
    return config_from_dict(doc)


def output_root(args, cfg: ExperimentConfig | None) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get("SWAT_LAB_OUT")
    if env:
        return Path(env)
    return Path(cfg.output_dir if cfg else "runs")


def make_run_dir(root: Path, command: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    base = root / f"{command}-{stamp}"
    run = base
    k = 1
    while run.exists():
        run = Path(f"{base}-{k}")
        k += 1
    run.mkdir(parents=True)
    return run


def corpus_for(cfg: ExperimentConfig) -> Corpus:
    if cfg.data.corpus is not None:
        return load_corpus(cfg.data.corpus, seed=cfg.seed)
    text = synthetic_text(cfg.data.synthetic_bytes, seed=cfg.seed)
    return corpus_from_bytes(text, name=f"<synthetic:{cfg.seed}>", seed=cfg.seed)


def corpus_hash(corpus: Corpus) -> str:
    h = hashlib.sha256()
    for split in (corpus.train, corpus.val, corpus.test):
        h.update(split.astype(np.uint8).tobytes())
    return h.hexdigest()


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(run_dir: Path, command: str, cfg: ExperimentConfig, extra: dict) -> None:
    outputs = {
        p.name: _sha256_file(p)
        for p in sorted(run_dir.iterdir())
        if p.is_file() and p.name != "manifest.json"
    }
    doc = {
        "command": command,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "seed": cfg.seed,
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "outputs": outputs,
    }
    doc.update(extra)
    (run_dir / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    cfg = resolve_config(args)
    corpus = corpus_for(cfg)  # resolved before any output exists
    run_dir = make_run_dir(output_root(args, cfg), "train")
    model = build_model(cfg.model)
    model, log = train(model, corpus, cfg.batch_spec(), cfg.train)
    ckpt = run_dir / "checkpoint.swat"
    save_checkpoint(model, ckpt)
    log.to_csv(run_dir / "train_log.csv")
    log.to_json(run_dir / "train_log.json")
    write_manifest(
        run_dir,
        "train",
        cfg,
        {
            "corpus_hash": corpus_hash(corpus),
            "train_log_hash": log.content_hash(),
            "checkpoint_hash": model_content_hash(model),
        },
    )
    last = log.records[-1] if log.records else None
    print(f"run dir: {run_dir}")
    if last is not None:
        print(f"final step {last.step}: loss {last.loss:.4f}, {last.tokens_seen} tokens seen")
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def cmd_eval_grid(args) -> int:
    cfg = resolve_config(args)
    model = load_checkpoint(args.checkpoint)
    corpus = corpus_for(cfg)
    run_dir = make_run_dir(output_root(args, cfg), "eval-grid")
    grid = eval_grid(
        model,
        corpus.test,
        windows=list(cfg.eval.windows),
        lengths=list(cfg.eval.lengths),
        method=cfg.eval.method,
        metadata={
            "seed": cfg.seed,
            "checkpoint": str(args.checkpoint),
            "checkpoint_hash": model_content_hash(model),
            "corpus_hash": corpus_hash(corpus),
            "config_hash": config_hash(cfg),
        },
    )
    grid.to_csv(run_dir / "grid.csv")
    grid.to_json(run_dir / "grid.json")
    write_manifest(run_dir, "eval-grid", cfg, {"corpus_hash": corpus_hash(corpus)})
    print(f"run dir: {run_dir}")
    header = "length  " + "  ".join(f"w={w:<6}" for w in grid.windows)
    print(header)
    for i, length in enumerate(grid.lengths):
        cells = "  ".join(
            f"{grid.ppl[i, j]:<8.4f}" if not np.isnan(grid.ppl[i, j]) else "-       "
            for j in range(len(grid.windows))
        )
        print(f"{length:<7} {cells}")
    return EXIT_OK


def cmd_compare_regimes(args) -> int:
    cfg = resolve_config(args)
    corpus = corpus_for(cfg)
    run_dir = make_run_dir(output_root(args, cfg), "compare-regimes")
    w = cfg.model.window
    sliding_len = cfg.data.train_length if cfg.data.train_length > w else 4 * w
    regimes = [RegimeSpec(train_window=w, train_length=w),
               RegimeSpec(train_window=w, train_length=sliding_len)]
    report = compare_training_regimes(
        cfg.model,
        corpus,
        regimes,
        cfg.train,
        batch_size_tokens=cfg.data.batch_size_tokens,
        eval_lengths=list(cfg.eval.lengths),
        method=cfg.eval.method,
    )
    report.metadata = {"seed": cfg.seed, "config_hash": config_hash(cfg), "corpus_hash": corpus_hash(corpus)}
    (run_dir / "regimes.md").write_text(report.to_markdown() + "\n")
    report.to_json(run_dir / "regimes.json")
    write_manifest(run_dir, "compare-regimes", cfg, {"corpus_hash": corpus_hash(corpus)})
    print(f"run dir: {run_dir}")
    print(report.to_markdown())
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = resolve_config(args)
    model = load_checkpoint(args.checkpoint)
    corpus = corpus_for(cfg)
    n = args.tokens
    if corpus.test.size < n:
        raise DataError(f"test split has {corpus.test.size} tokens, need {n}")
    run_dir = make_run_dir(output_root(args, cfg), "diagnose")
    report = analysis.sink_report(model, corpus.test[:n])
    report.to_json(run_dir / "sink.json")
    report.to_csv_dir(run_dir / "heatmaps")
    write_manifest(run_dir, "diagnose", cfg, {"checkpoint_hash": model_content_hash(model)})
    print(f"run dir: {run_dir}")
    print(f"activation {report.activation}, N={report.n_tokens}, uniform share {report.uniform_share:.5f}")
    for i, (s, raw, v0, vr, ent) in enumerate(
        zip(report.first_share, report.first_mass_raw, report.var_token0, report.var_rest, report.entropy)
    ):
        print(
            f"layer {i}: first-token share {s:.5f} ({s / report.uniform_share:.2f}x uniform), "
            f"raw mass {raw:.5f}, var[0] {v0:.4f} vs rest {vr:.4f}, entropy {ent:.3f}"
        )
    return EXIT_OK


_EQ1_SCORES = [1.5, 5.0, 2.4, 0.5, 1.3]


def cmd_demo(args) -> int:
    cfg = resolve_config(args, default_toy=True)
    run_dir = make_run_dir(output_root(args, cfg), f"demo-{args.what}")
    if args.what == "sparsity":
        demo = analysis.sparsity_demo(_EQ1_SCORES)
        doc = {
            "scores": demo.scores.tolist(),
            "softmax_weights": demo.softmax_weights.tolist(),
            "sigmoid_weights": demo.sigmoid_weights.tolist(),
            "max_ratio_err": demo.max_ratio_err,
        }
        print("scores          " + "  ".join(f"{x:7.4f}" for x in demo.scores))
        print("softmax weights " + "  ".join(f"{x:7.4f}" for x in demo.softmax_weights))
        print("sigmoid weights " + "  ".join(f"{x:7.4f}" for x in demo.sigmoid_weights))
        print(f"ratio-law max abs err: {demo.max_ratio_err:.2e}")
        delta = np.sqrt(2 * np.log(1024.0))
        print(f"runner-up/winner ratio at gap sqrt(2 ln 1024): exp(-{delta:.4f}) = {np.exp(-delta):.4f}")
    elif args.what == "evt":
        samples = analysis.evt_sweep([2**6, 2**8, 2**10, 2**12, 2**14], trials=args.trials, seed=cfg.seed)
        doc = [
            {"L": s.L, "mean_max": s.mean_max, "predicted": s.predicted, "ratio": s.ratio}
            for s in samples
        ]
        print("L       empirical  predicted  ratio")
        for s in samples:
            print(f"{s.L:<7} {s.mean_max:9.4f}  {s.predicted:9.4f}  {s.ratio:.4f}")
    else:
        report = analysis.density_check(_EQ1_SCORES)
        doc = {
            "scores": report.scores.tolist(),
            "softmax_support": {str(t): c for t, c in report.softmax_support.items()},
            "sigmoid_support": {str(t): c for t, c in report.sigmoid_support.items()},
        }
        print("threshold  softmax support  sigmoid support")
        for t in report.thresholds:
            print(f"{t:<10} {report.softmax_support[t]:<16} {report.sigmoid_support[t]}")
    (run_dir / "demo.json").write_text(
        json.dumps({"demo": args.what, "seed": cfg.seed, "result": doc}, indent=2, sort_keys=True) + "\n"
    )
    write_manifest(run_dir, f"demo-{args.what}", cfg, {})
    print(f"run dir: {run_dir}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .diagnostics import end_to_end_check, primitive_checks

    cfg = resolve_config(args, default_toy=True)
    run_dir = make_run_dir(output_root(args, cfg), "gradcheck")
    results = primitive_checks(seed=cfg.seed)
    results.append(end_to_end_check(seed=cfg.seed))
    all_pass = all(r.passed for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<28} max rel err {r.max_rel_err:.3e} (tol {r.tol:g})")
    doc = [
        {"name": r.name, "passed": r.passed, "max_rel_err": r.max_rel_err, "tol": r.tol}
        for r in results
    ]
    (run_dir / "gradcheck.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write_manifest(run_dir, "gradcheck", cfg, {})
    print(f"run dir: {run_dir}")
    print("all checks passed" if all_pass else "some checks FAILED")
    return EXIT_OK if all_pass else EXIT_NUMERIC


def cmd_bench(args) -> int:
    cfg = resolve_config(args, default_toy=True)
    run_dir = make_run_dir(output_root(args, cfg), "bench-cost")
    delta = analysis.measure_delta(seed=cfg.seed)
    est = analysis.cost_model(8192, 512, delta)
    print(f"measured delta: {delta:.4f}")
    print(f"cost_model(N=8192, w=512, delta={delta:.4f}) = {est.predicted_cost:,.1f} score-unit ops")
    doc = {"delta": delta, "example_cost": est.predicted_cost}
    if args.sweep:
        model = build_model(
            ModelConfig(vocab_size=259, d_model=64, n_heads=4, n_layers=1, window=args.window)
        )
        lengths = [1000, 2000, 4000, 8000, 16000]
        fit = analysis.measure_linearity(model, lengths, seed=cfg.seed)
        print("N        seconds")
        for n, s in zip(fit.lengths, fit.seconds):
            print(f"{n:<8} {s:.4f}")
        print(f"linear fit: {fit.slope:.3e} s/token + {fit.intercept:.4f} s, R^2 = {fit.r_squared:.4f}")
        doc["linearity"] = {
            "lengths": fit.lengths,
            "seconds": fit.seconds,
            "slope": fit.slope,
            "intercept": fit.intercept,
            "r_squared": fit.r_squared,
        }
    (run_dir / "bench.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write_manifest(run_dir, "bench-cost", cfg, {})
    print(f"run dir: {run_dir}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swat-lab",
        description="Desk-scale laboratory for sliding-window attention training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_checkpoint=False):
        p.add_argument("--config", help="path to an experiment config JSON")
        p.add_argument("--preset", help="name of a shipped preset")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config leaf via dotted path")
        p.add_argument("--out", help="output root (overrides SWAT_LAB_OUT and config)")
        if needs_checkpoint:
            p.add_argument("--checkpoint", required=True, help="path to a .swat checkpoint")

    p = sub.add_parser("train", help="train a model and write checkpoint, logs, manifest")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-grid", help="perplexity over (window x eval length)")
    common(p, needs_checkpoint=True)
    p.set_defaults(func=cmd_eval_grid)

    p = sub.add_parser("compare-regimes", help="train the vanilla/sliding pair and tabulate ppl")
    common(p)
    p.set_defaults(func=cmd_compare_regimes)

    p = sub.add_parser("diagnose", help="attention-sink report for a checkpoint")
    common(p, needs_checkpoint=True)
    p.add_argument("--tokens", type=int, default=64, help="stream length for the report")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("demo", help="small printable demonstrations")
    p.add_argument("what", choices=["sparsity", "evt", "density"])
    p.add_argument("--trials", type=int, default=10000, help="Monte-Carlo trials (evt)")
    common(p)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("gradcheck", help="finite-difference checks for all primitives")
    common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="cost-model measurements")
    p.add_argument("what", choices=["cost"])
    p.add_argument("--sweep", action="store_true", help="time windowed inference across N")
    p.add_argument("--window", type=int, default=128, help="window for the sweep model")
    common(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericsError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IntegrityError, OSError) as e:
        print(f"i/o failure: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
