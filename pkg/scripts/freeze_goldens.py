"""Regenerate the frozen preprocessing goldens and the golden checkpoint under tests/fixtures.

Only run this when a format change is intended; the tests compare against the
committed files byte for byte.
"""

import json
from pathlib import Path

import numpy as np

from tegru import model as M
from tegru import textpipe as tp

FIX = Path(__file__).resolve().parents[1] / "tests" / "fixtures"
MAX_LEN = 6
VOCAB_SIZE = 24


def preprocess_goldens() -> None:
    rules = tp.FilterRules()
    report = tp.CorpusReport()
    with open(FIX / "corpus.tsv", encoding="utf-8") as fh:
        samples = tp.read_corpus(fh, report)
    (FIX / "golden_filtered.txt").write_text(
        "".join(f"{lab}\t{tp.filter_text(txt, rules)}\n" for lab, txt in samples), encoding="utf-8")
    tokenized = tp.tokenize_corpus(samples, rules, tp.WhitespaceTokenizer(rules.retained), report)
    (FIX / "golden_tokens.txt").write_text(
        "".join(f"{lab}\t{' '.join(toks)}\n" for lab, toks in tokenized), encoding="utf-8")
    vocab = tp.build_vocab((t for _, toks in tokenized for t in toks), VOCAB_SIZE)
    vocab.save(FIX / "golden_vocab.tsv")
    tp.encode_samples(tokenized, vocab, MAX_LEN).save(FIX / "golden_encoded.ids")


def checkpoint_golden() -> None:
    cfg = M.ModelConfig(kind=M.ModelKind.TEGRU, d_model=8, max_len=6, n_heads=2, d_ff=16,
                        recurrent_hidden=8, dropout=0.0, seed=11)
    model = M.build(cfg, tp.random_embeddings(12, 8, seed=11))
    M.save(model, FIX / "golden_tegru.ckpt")
    probe = np.array([[0, 0, 2, 3, 4, 5], [6, 7, 8, 9, 10, 11]])
    out = model.forward(probe).data
    (FIX / "golden_probe.json").write_text(
        json.dumps({"ids": probe.tolist(), "log_probs": out.tolist()}, indent=1) + "\n", encoding="utf-8")


if __name__ == "__main__":
    preprocess_goldens()
    checkpoint_golden()
