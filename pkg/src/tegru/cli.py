"""Command line: ``preprocess``, ``train``, ``eval`` and ``ablate``."""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import logging
import shlex
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import model as M
from . import textpipe as tp
from .config import ConfigFile, ConfigFileError, PreprocessConfig, SweepSpec, render_resolved
from .model import ConfigError, ModelConfig, ModelKind
from .train import EvalReport, TrainConfig, TrainingDiverged, evaluate, fit

log = logging.getLogger("tegru")


class CLIError(Exception):
    pass


# -- preprocess -----------------------------------------------------------------------


def _length_stats(lengths: list[int], max_len: int) -> dict:
    if not lengths:
        return {}
    arr = np.asarray(lengths)
    return {
        "min": int(arr.min()),
        "max": int(arr.max()),
        "mean": round(float(arr.mean()), 4),
        "percentiles": {str(p): float(np.percentile(arr, p)) for p in (50, 90, 95, 99)},
        "frac_within_max_len": round(float(np.mean(arr <= max_len)), 6),
    }


def cmd_preprocess(
    corpora: list[Path],
    out_dir: Path,
    cfg: PreprocessConfig,
    emb_path: Path | None = None,
    vocab_path: Path | None = None,
    segmenter: str | None = None,
) -> dict:
    """Encode each corpus; the vocabulary comes from ``vocab_path`` or the first corpus."""
    out_dir.mkdir(parents=True, exist_ok=True)
    rules = tp.FilterRules(frozenset(cfg.retained))
    tokenizer = tp.ExternalTokenizer(shlex.split(segmenter)) if segmenter else tp.WhitespaceTokenizer(rules.retained)

    tokenized, stats = {}, {"corpora": {}}
    for path in corpora:
        if not path.exists():
            raise CLIError(f"corpus not found: {path}")
        report = tp.CorpusReport()
        with open(path, encoding="utf-8") as fh:
            samples = tp.read_corpus(fh, report)
        if report.malformed:
            print(f"{path}: skipped {len(report.malformed)} malformed line(s): "
                  f"{', '.join(map(str, report.malformed))}", file=sys.stderr)
        tokenized[path] = tp.tokenize_corpus(samples, rules, tokenizer, report)
        stats["corpora"][path.stem] = {
            "samples": len(tokenized[path]),
            "malformed_lines": report.malformed,
            "malformed_count": len(report.malformed),
            "dropped_empty": report.empty_after_filter,
            "token_length": _length_stats([len(t) for _, t in tokenized[path]], cfg.max_len),
        }

    if vocab_path is not None:
        vocab = tp.Vocabulary.load(vocab_path)
    else:
        first = tokenized[corpora[0]]
        vocab = tp.build_vocab((tok for _, toks in first for tok in toks), cfg.vocab_size)
    vocab.save(out_dir / "vocab.tsv")
    stats["vocab_size"] = len(vocab)
    stats["max_len"] = cfg.max_len

    for path, samples in tokenized.items():
        batch = tp.encode_samples(samples, vocab, cfg.max_len)
        batch.save(out_dir / f"{path.stem}.ids")
        total = sum(len(t) for _, t in samples)
        known = sum(tok in vocab for _, toks in samples for tok in toks)
        stats["corpora"][path.stem]["token_coverage"] = round(known / total, 6) if total else 0.0

    if emb_path is not None:
        table = tp.load_embeddings(emb_path, vocab, seed=cfg.seed)
        np.save(out_dir / "embeddings.npy", table.vectors)
        stats["embedding_dim"] = table.dim
        stats["embedding_coverage"] = round(table.coverage, 6)

    (out_dir / "stats.json").write_text(json.dumps(stats, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
    return stats


# -- train ----------------------------------------------------------------------------


@dataclasses.dataclass
class DataDir:
    root: Path
    vocab: tp.Vocabulary
    train: tp.EncodedBatch
    valid: tp.EncodedBatch
    test: tp.EncodedBatch | None
    embeddings: np.ndarray | None

    @classmethod
    def open(cls, root: Path) -> "DataDir":
        for name in ("vocab.tsv", "train.ids", "valid.ids"):
            if not (root / name).exists():
                raise CLIError(f"{root}: missing {name} (run 'preprocess' on train/valid corpora first)")
        test = tp.EncodedBatch.load(root / "test.ids") if (root / "test.ids").exists() else None
        emb = np.load(root / "embeddings.npy") if (root / "embeddings.npy").exists() else None
        return cls(root, tp.Vocabulary.load(root / "vocab.tsv"), tp.EncodedBatch.load(root / "train.ids"),
                   tp.EncodedBatch.load(root / "valid.ids"), test, emb)

    def embedding_table(self, cfg: ModelConfig) -> tp.EmbeddingTable:
        if self.embeddings is not None:
            return tp.EmbeddingTable(self.embeddings, coverage=float("nan"))
        return tp.random_embeddings(len(self.vocab), cfg.d_model, seed=cfg.seed)


def resolve_model_config(cf: ConfigFile, data: DataDir, seed: int | None) -> ModelConfig:
    cfg = cf.model_config()
    width = data.train.max_len
    if "max_len" not in cf.model:
        cfg.max_len = width
    elif cfg.max_len != width:
        raise CLIError(f"model max_len={cfg.max_len} but the encoded data has rows of length {width}")
    if data.embeddings is not None:
        dim = data.embeddings.shape[1]
        if "d_model" not in cf.model:
            cfg.d_model = dim
        elif cfg.d_model != dim:
            raise CLIError(f"model d_model={cfg.d_model} but embeddings.npy has dimension {dim}")
    if seed is not None:
        cfg.seed = seed
    return cfg.validate()


def train_one(model_cfg: ModelConfig, train_cfg: TrainConfig, data: DataDir, on_epoch=None):
    mdl = M.build(model_cfg, data.embedding_table(model_cfg))
    mdl.vocab_hash = data.vocab.fingerprint()
    result = fit(mdl, data.train, data.valid, train_cfg, on_epoch=on_epoch)
    mdl.load_state_dict(result.best_state)
    return mdl, result


def cmd_train(data_dir: Path, config_path: Path, out_dir: Path, seed: int | None = None) -> Path:
    cf = ConfigFile.read(config_path)
    data = DataDir.open(data_dir)
    model_cfg = resolve_model_config(cf, data, seed)
    train_cfg = cf.train_config()
    if seed is not None:
        train_cfg.seed = seed
    train_cfg.validate()

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved.ini").write_text(render_resolved(model_cfg, train_cfg), encoding="utf-8")
    mdl, result = train_one(
        model_cfg, train_cfg, data,
        on_epoch=lambda r: log.info("epoch %d lr %g loss %.4f valid acc %.4f", r.epoch, r.lr, r.train_loss, r.valid_acc),
    )
    (out_dir / "history.jsonl").write_text(result.history_text(), encoding="utf-8")
    ckpt = out_dir / "checkpoint.ckpt"
    M.save(mdl, ckpt)
    best = result.history[result.best_epoch]
    print(f"best epoch {best.epoch}: valid acc {best.valid_acc:.4f} f1 {best.valid_f1:.4f}; checkpoint {ckpt}")
    return ckpt


# -- eval -----------------------------------------------------------------------------


def cmd_eval(checkpoint: Path, data_path: Path, out_dir: Path | None = None,
             latency_limit: int | None = None) -> EvalReport:
    if not checkpoint.exists():
        raise CLIError(f"checkpoint not found: {checkpoint}")
    if not data_path.exists():
        raise CLIError(f"test set not found: {data_path}")
    vocab_file = data_path.parent / "vocab.tsv"
    vocab_hash = tp.Vocabulary.load(vocab_file).fingerprint() if vocab_file.exists() else None
    mdl = M.load(checkpoint, vocab_hash=vocab_hash)
    data = tp.EncodedBatch.load(data_path)
    report = evaluate(mdl, data, latency=True, latency_limit=latency_limit)
    print(report.render(mdl.config.kind.display))
    print(report.to_json())
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    return report


# -- ablate ---------------------------------------------------------------------------

TABLE_FIELDS = ("dataset", "method", "kind", "d_ff", "n_heads", "dropout", "accuracy", "f1",
                "test_time_ms", "status", "error")


def sweep_cells(base: ModelConfig, spec: SweepSpec) -> list[ModelConfig]:
    axes = {
        "kind": spec.kinds or [base.kind],
        "d_ff": spec.d_ff or [base.d_ff],
        "n_heads": spec.n_heads or [base.n_heads],
        "dropout": spec.dropout or [base.dropout],
    }
    return [dataclasses.replace(base, kind=k, d_ff=f, n_heads=h, dropout=p)
            for k, f, h, p in itertools.product(*axes.values())]


def _run_cell(args) -> dict:
    cell, train_cfg, data_dir, latency_limit = args
    data = DataDir.open(data_dir)
    row = {"dataset": data_dir.name, "method": cell.kind.display, "kind": cell.kind.value,
           "d_ff": cell.d_ff, "n_heads": cell.n_heads, "dropout": cell.dropout,
           "accuracy": None, "f1": None, "test_time_ms": None, "status": "ok", "error": ""}
    try:
        cell.validate()
        mdl, _ = train_one(cell, train_cfg, data)
    except (ConfigError, ValueError) as err:
        row.update(status="failed", error=str(err))
        return row
    report = evaluate(mdl, data.test if data.test is not None else data.valid, latency_limit=latency_limit)
    row.update(accuracy=report.accuracy, f1=report.f1, test_time_ms=report.latency_ms)
    return row


def render_table(rows: list[dict]) -> str:
    head = f"{'Dataset':<14}{'Method':<20}{'d_ff':>6}{'heads':>6}{'drop':>6}{'Accuracy':>10}{'F1':>9}{'Test Time(ms)':>15}"
    lines = [head, "-" * len(head)]
    for r in rows:
        if r["status"] != "ok":
            lines.append(f"{r['dataset']:<14}{r['method']:<20}{r['d_ff']:>6}{r['n_heads']:>6}{r['dropout']:>6}"
                         f"  FAILED: {r['error']}")
            continue
        lines.append(f"{r['dataset']:<14}{r['method']:<20}{r['d_ff']:>6}{r['n_heads']:>6}{r['dropout']:>6}"
                     f"{r['accuracy'] * 100:>9.2f}%{r['f1'] * 100:>8.2f}%{r['test_time_ms']:>15.4f}")
    return "\n".join(lines) + "\n"


def cmd_ablate(data_dir: Path, config_path: Path, out_dir: Path, seed: int | None = None,
               jobs: int = 1, latency_limit: int | None = 200) -> list[dict]:
    cf = ConfigFile.read(config_path)
    data = DataDir.open(data_dir)
    base = cf.model_config()
    if "max_len" not in cf.model:
        base.max_len = data.train.max_len
    if data.embeddings is not None and "d_model" not in cf.model:
        base.d_model = data.embeddings.shape[1]
    if seed is not None:
        base.seed = seed
    train_cfg = cf.train_config()
    if seed is not None:
        train_cfg.seed = seed
    train_cfg.validate()
    cells = sweep_cells(base, cf.sweep_spec())
    work = [(c, train_cfg, data_dir, latency_limit) for c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell, work))
    else:
        rows = []
        for item in work:
            rows.append(_run_cell(item))
            log.info("cell %s: %s", rows[-1]["method"], rows[-1]["status"])

    out_dir.mkdir(parents=True, exist_ok=True)
    table = render_table(rows)
    (out_dir / "table.txt").write_text(table, encoding="utf-8")
    (out_dir / "table.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows),
                                         encoding="utf-8")
    print(table, end="")
    return rows


def read_table(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]


# -- entry point ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tegru", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="filter, tokenize and encode label<TAB>text corpora")
    p.add_argument("corpora", nargs="+", type=Path, help="first corpus builds the vocabulary")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path, help="reads its [preprocess] section")
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--retain", help="retained punctuation characters")
    p.add_argument("--embeddings", type=Path, help="word-vector text file ('count dim' header)")
    p.add_argument("--vocab", type=Path, help="reuse an exported vocabulary instead of building one")
    p.add_argument("--segmenter", help="external segmenter command (text on stdin, one token per line out)")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--data", type=Path, required=True, help="preprocess output directory")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("eval", help="accuracy, F1 and per-comment test time")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="encoded .ids file")
    p.add_argument("--out", type=Path)
    p.add_argument("--latency-limit", type=int, help="time at most this many samples")

    p = sub.add_parser("ablate", help="train every cell of the [sweep] grid")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--latency-limit", type=int, default=200)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "preprocess":
            cfg = ConfigFile.read(args.config).preprocess_config() if args.config else PreprocessConfig()
            for key, value in (("vocab_size", args.vocab_size), ("max_len", args.max_len),
                               ("retained", args.retain), ("seed", args.seed)):
                if value is not None:
                    setattr(cfg, key, value)
            stats = cmd_preprocess(args.corpora, args.out, cfg, args.embeddings, args.vocab, args.segmenter)
            print(json.dumps(stats, ensure_ascii=False, sort_keys=True))
        elif args.command == "train":
            cmd_train(args.data, args.config, args.out, args.seed)
        elif args.command == "eval":
            cmd_eval(args.checkpoint, args.data, args.out, args.latency_limit)
        elif args.command == "ablate":
            cmd_ablate(args.data, args.config, args.out, args.seed, args.jobs, args.latency_limit)
    except (CLIError, ConfigFileError, ConfigError, M.CheckpointError, tp.EmbeddingFormatError,
            TrainingDiverged, FileNotFoundError, ValueError) as err:
        print(f"tegru {args.command}: error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
