#!/usr/bin/env python3
"""Train every ablation-row preset and tabulate final loss and perplexity.

Runs each activation x position x slope preset (the shipped matrix minus the
toy and regime entries), then evaluates each checkpoint on its own eval
settings.  Expect roughly the advertised per-run budget times eight.

    python scripts/run_ablation_rows.py --out runs/ablation
"""
import argparse
import json
import sys
from pathlib import Path

from swat_lab.cli import main as cli_main, preset_names

SKIP = {"toy", "regime-vanilla", "regime-sliding"}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/ablation", help="output root")
    ap.add_argument("--rows", nargs="*", default=None,
                    help="subset of preset names (default: all ablation rows)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="forwarded config overrides (applied to every row)")
    args = ap.parse_args()

    rows = args.rows if args.rows else [n for n in preset_names() if n not in SKIP]
    results = []
    for name in rows:
        out = Path(args.out) / name
        argv = ["train", "--preset", name, "--out", str(out)]
        for item in args.set:
            argv += ["--set", item]
        code = cli_main(argv)
        if code != 0:
            print(f"{name}: train exited {code}", file=sys.stderr)
            return code
        run_dir = next(p for p in sorted(out.iterdir()) if p.is_dir())
        log = json.loads((run_dir / "train_log.json").read_text())
        final = log["records"][-1]["loss"] if log["records"] else float("nan")
        results.append((name, final, run_dir))

    width = max(len(n) for n, _, _ in results)
    print(f"\n{'row':<{width}}  final loss  run dir")
    for name, final, run_dir in results:
        print(f"{name:<{width}}  {final:10.4f}  {run_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
