"""Train T-E-GRU and the baselines on the synthetic corpus under one TrainConfig and print a results table.

Goes through the CLI end to end: preprocess, train each kind, evaluate on the test split.

    python3 scripts/desk_scale_comparison.py --out runs/desk --kinds TEGRU GRU BiGRU LSTMAtt
"""

import argparse
import json
import tempfile
from pathlib import Path

from tegru import cli
from tegru.model import ModelKind

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=ROOT / "runs" / "desk")
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "desk_tegru.ini",
                    help="supplies [preprocess], [train] and every [model] key except kind")
    ap.add_argument("--kinds", nargs="+", default=["TEGRU", "GRU"])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = args.out / "synthetic"
    corpora = [str(ROOT / "data" / "synthetic" / f"{s}.tsv") for s in ("train", "valid", "test")]
    if cli.main(["preprocess", *corpora, "--config", str(args.config), "--out", str(data)]) != 0:
        raise SystemExit("preprocess failed")

    template = args.config.read_text(encoding="utf-8")
    rows = []
    for name in args.kinds:
        kind = ModelKind.parse(name)
        lines = [f"kind = {kind.value}" if ln.strip().startswith("kind") else ln for ln in template.splitlines()]
        with tempfile.NamedTemporaryFile("w", suffix=".ini", delete=False, encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        run = args.out / kind.value
        if cli.main(["train", "--data", str(data), "--config", fh.name, "--out", str(run),
                     "--seed", str(args.seed)]) != 0:
            raise SystemExit(f"training {kind.value} failed")
        cli.main(["eval", "--checkpoint", str(run / "checkpoint.ckpt"), "--data", str(data / "test.ids"),
                  "--out", str(run), "--latency-limit", "200"])
        report = json.loads((run / "report.json").read_text())
        rows.append((kind.display, report["accuracy"], report["f1"], report["latency_ms"]))

    print(f"\n{'Method':<20}{'Accuracy':>10}{'F1':>10}{'Test Time(ms)':>15}")
    for method, acc, f1, ms in rows:
        print(f"{method:<20}{acc * 100:>9.2f}%{f1 * 100:>9.2f}%{ms:>15.4f}")


if __name__ == "__main__":
    main()
