"""Preprocess the synthetic corpus and run one ablation sweep at desk scale.

The shipped ablation configs use the full-size model; ``--desk`` shrinks the
model and schedule (keeping the [sweep] grid) so a sweep finishes in minutes.

    python3 scripts/run_ablation.py configs/ablation_recurrent.ini --desk --jobs 4
"""

import argparse
import configparser
import tempfile
from pathlib import Path

from tegru import cli

ROOT = Path(__file__).resolve().parents[1]
DESK = {"model": {"d_model": "32", "d_ff": "64", "recurrent_hidden": "32", "max_len": "24"},
        "train": {"batch_size": "32", "epochs": "10", "lr": "0.5", "decay_every": "8"},
        "preprocess": {"max_len": "24", "vocab_size": "1000"}}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config", type=Path)
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--desk", action="store_true", help="shrink model and schedule to desk scale")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = args.out or ROOT / "runs" / args.config.stem

    config = args.config
    if args.desk:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        parser.optionxform = str
        parser.read(config, encoding="utf-8")
        for section, values in DESK.items():
            for key, value in values.items():
                if key == "d_ff" and parser.has_option("sweep", "d_ff"):
                    continue
                parser[section][key] = value
        if parser.has_option("sweep", "n_heads"):
            parser["sweep"]["n_heads"] = "1, 2, 4"  # divisors of the desk d_model
        with tempfile.NamedTemporaryFile("w", suffix=".ini", delete=False, encoding="utf-8") as fh:
            parser.write(fh)
        config = Path(fh.name)

    data = out / "synthetic"
    corpora = [str(ROOT / "data" / "synthetic" / f"{s}.tsv") for s in ("train", "valid", "test")]
    if cli.main(["preprocess", *corpora, "--config", str(config), "--out", str(data)]) != 0:
        raise SystemExit("preprocess failed")
    raise SystemExit(cli.main(["ablate", "--data", str(data), "--config", str(config), "--out", str(out),
                               "--jobs", str(args.jobs), "--seed", str(args.seed)]))


if __name__ == "__main__":
    main()
