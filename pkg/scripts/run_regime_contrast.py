#!/usr/bin/env python3
"""Train the vanilla/sliding pair and print the perplexity-vs-length table.

Thin wrapper over `swat-lab compare-regimes` pinned to the shipped regime
preset, so the headline comparison is reproducible by name:

    python scripts/run_regime_contrast.py --out runs/
"""
import argparse
import sys

from swat_lab.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="regime-vanilla",
                    help="base preset; train_length is varied by the command itself")
    ap.add_argument("--out", default=None, help="output root")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="forwarded config overrides")
    args = ap.parse_args()

    argv = ["compare-regimes", "--preset", args.preset]
    for item in args.set:
        argv += ["--set", item]
    if args.out:
        argv += ["--out", args.out]
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
