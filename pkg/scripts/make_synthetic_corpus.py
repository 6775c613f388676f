"""Write the synthetic sentiment corpus (train/valid/test .tsv) used by the desk-scale runs."""

import argparse
from pathlib import Path

from tegru.synth import write_splits


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "data" / "synthetic")
    ap.add_argument("--train", type=int, default=3500)
    ap.add_argument("--valid", type=int, default=500)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    write_splits(args.out, args.train, args.valid, args.test, args.seed)
    print(f"wrote {args.train}/{args.valid}/{args.test} samples to {args.out}")


if __name__ == "__main__":
    main()
