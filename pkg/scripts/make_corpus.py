#!/usr/bin/env python3
"""Write a deterministic synthetic corpus to a text file.

The repository's corpora/tiny.txt sample was produced by this script with its
default arguments; regenerate it (or larger variants) with:

    python scripts/make_corpus.py --bytes 200000 --seed 11 --out corpora/tiny.txt
"""
import argparse
from pathlib import Path

from swat_lab.data import synthetic_text


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bytes", type=int, default=200_000, help="corpus size in bytes")
    ap.add_argument("--seed", type=int, default=11, help="generator seed")
    ap.add_argument("--out", default="corpora/tiny.txt", help="output path")
    args = ap.parse_args()

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(synthetic_text(args.bytes, seed=args.seed))
    print(f"wrote {args.bytes} bytes (seed {args.seed}) to {out}")


if __name__ == "__main__":
    main()
