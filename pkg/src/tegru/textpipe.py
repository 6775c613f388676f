"""Raw comment text to fixed-length index rows.

filter -> tokenize -> vocabulary lookup -> front pad/truncate, plus loading of
pretrained word vectors in the usual ``count dim`` / ``word v1 .. vd`` text format.
"""

from __future__ import annotations

import hashlib
import logging
import subprocess
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Protocol, Sequence

import numpy as np

from .tensor import Rng

logger = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1

# Clause-capable marks: full-width and their ASCII twins.
DEFAULT_RETAINED = frozenset("。！？；，…" + ".!?;,")


class CorpusFormatError(ValueError):
    """A corpus line is not ``label<TAB>text`` with a 0/1 label."""


class EmbeddingFormatError(ValueError):
    """The word-vector file is malformed."""


@dataclass(frozen=True)
class FilterRules:
    retained: frozenset = DEFAULT_RETAINED

    def __post_init__(self):
        object.__setattr__(self, "retained", frozenset(self.retained))


def _is_punct_or_symbol(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "PS"


def filter_text(raw: str, rules: FilterRules = FilterRules()) -> str:
    """Delete every punctuation/symbol character that is not a retained mark."""
    return "".join(ch for ch in raw if ch in rules.retained or not _is_punct_or_symbol(ch))


# -- tokenization ---------------------------------------------------------------


class Tokenizer(Protocol):
    def __call__(self, text: str) -> list[str]: ...


@dataclass(frozen=True)
class WhitespaceTokenizer:
    """Default tokenizer for corpora segmented offline.

    Splits on whitespace and additionally splits every retained mark into its
    own token, so ``"好看！！"`` becomes ``["好看", "！", "！"]``.
    """

    marks: frozenset = DEFAULT_RETAINED

    def __call__(self, text: str) -> list[str]:
        tokens: list[str] = []
        for chunk in text.split():
            word = []
            for ch in chunk:
                if ch in self.marks:
                    if word:
                        tokens.append("".join(word))
                        word = []
                    tokens.append(ch)
                else:
                    word.append(ch)
            if word:
                tokens.append("".join(word))
        return tokens


@dataclass(frozen=True)
class ExternalTokenizer:
    """Hook for an external segmenter.

    ``command`` receives the text on stdin and must print one token per line.
    Blank lines in its output are ignored.
    """

    command: Sequence[str]
    timeout: float = 30.0

    def __call__(self, text: str) -> list[str]:
        if not text:
            return []
        proc = subprocess.run(
            list(self.command), input=text, capture_output=True, text=True,
            encoding="utf-8", timeout=self.timeout, check=True,
        )
        return parse_token_lines(proc.stdout)


def parse_token_lines(output: str) -> list[str]:
    """Tokens from one-token-per-line segmenter output."""
    return [line.strip() for line in output.splitlines() if line.strip()]


def tokenize(text: str, tokenizer: Tokenizer | None = None) -> list[str]:
    return (tokenizer or WhitespaceTokenizer())(text)


# -- vocabulary -------------------------------------------------------------------


@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.tokens[:2] != [PAD, UNK]:
            raise ValueError("vocabulary must start with the PAD and UNK entries")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def export_text(self) -> str:
        return "".join(f"{tok}\t{i}\n" for i, tok in enumerate(self.tokens))

    def save(self, path) -> None:
        Path(path).write_text(self.export_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            tok, _, idx = line.rpartition("\t")
            if not _ or not idx.isdigit() or int(idx) != lineno - 1:
                raise ValueError(f"{path}:{lineno}: expected 'token<TAB>{lineno - 1}'")
            tokens.append(tok)
        return cls(tokens)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.export_text().encode("utf-8")).hexdigest()


def build_vocab(stream: Iterable[str], max_size: int) -> Vocabulary:
    """Frequency-ranked vocabulary; ties go to the token seen first."""
    if max_size < 2:
        raise ValueError(f"max_size must leave room for PAD and UNK, got {max_size}")
    counts: Counter = Counter()
    first_seen: dict[str, int] = {}
    for pos, tok in enumerate(stream):
        if tok in (PAD, UNK):
            continue
        counts[tok] += 1
        first_seen.setdefault(tok, pos)
    ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
    return Vocabulary([PAD, UNK] + ranked[: max_size - 2])


def align(ids: Sequence[int], max_len: int, pad_id: int = PAD_ID) -> list[int]:
    """Fix the length by padding or truncating at the front; the tail survives."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    ids = list(ids)
    if len(ids) >= max_len:
        return ids[len(ids) - max_len:]
    return [pad_id] * (max_len - len(ids)) + ids


# -- embeddings -------------------------------------------------------------------


@dataclass
class EmbeddingTable:
    vectors: np.ndarray  # [vocab_size, dim]
    coverage: float

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


def random_embeddings(vocab_size: int, dim: int, seed: int = 0) -> EmbeddingTable:
    vectors = Rng(seed).uniform((vocab_size, dim), -0.1, 0.1, dtype=np.float64)
    vectors[PAD_ID] = 0.0
    return EmbeddingTable(vectors, coverage=0.0)


def load_embeddings(path, vocab: Vocabulary, seed: int = 0) -> EmbeddingTable:
    """Vocabulary-aligned vectors from a word-vector text file.

    Tokens missing from the file get uniform(-0.1, 0.1) rows; the PAD row is
    zero. Coverage counts non-reserved vocabulary tokens found in the file.
    """
    found: dict[int, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or not all(h.isdigit() for h in header):
            raise EmbeddingFormatError(f"{path}:1: header must be 'count dim'")
        count, dim = int(header[0]), int(header[1])
        seen = 0
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if parts == [""]:
                continue
            seen += 1
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected word plus {dim} values, got {len(parts) - 1} values"
                )
            try:
                vec = np.array([float(v) for v in parts[1:]])
            except ValueError as err:
                raise EmbeddingFormatError(f"{path}:{lineno}: non-numeric value ({err})") from None
            if not np.all(np.isfinite(vec)):
                raise EmbeddingFormatError(f"{path}:{lineno}: non-finite value")
            idx = vocab.index.get(parts[0])
            if idx is not None and idx > UNK_ID:
                found.setdefault(idx, vec)
        if seen != count:
            raise EmbeddingFormatError(f"{path}: header declares {count} vectors, file has {seen}")

    table = random_embeddings(len(vocab), dim, seed)
    for idx, vec in found.items():
        table.vectors[idx] = vec
    table.vectors[PAD_ID] = 0.0
    n_words = len(vocab) - 2
    table.coverage = len(found) / n_words if n_words else 0.0
    return table


# -- corpora and encoded batches ---------------------------------------------------


@dataclass
class EncodedBatch:
    ids: np.ndarray  # [batch, max_len] int64
    labels: np.ndarray  # [batch] int64, 0 negative / 1 positive
    lengths: np.ndarray  # [batch] token counts before alignment

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(len(self.labels), -1)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.lengths = np.asarray(self.lengths, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def max_len(self) -> int:
        return self.ids.shape[1]

    def subset(self, rows) -> "EncodedBatch":
        return EncodedBatch(self.ids[rows], self.labels[rows], self.lengths[rows])

    def batches(self, size: int, order=None) -> Iterator["EncodedBatch"]:
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(self), size):
            yield self.subset(order[start:start + size])

    def to_text(self) -> str:
        return "".join(
            f"{lab}\t{n}\t{' '.join(map(str, row))}\n"
            for lab, n, row in zip(self.labels.tolist(), self.lengths.tolist(), self.ids.tolist())
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EncodedBatch":
        ids, labels, lengths = [], [], []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            try:
                lab, n, row = line.split("\t")
                ids.append([int(v) for v in row.split()])
                labels.append(int(lab))
                lengths.append(int(n))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 'label<TAB>length<TAB>ids'") from None
        if len({len(r) for r in ids}) > 1:
            raise ValueError(f"{path}: rows have differing lengths")
        return cls(np.array(ids, dtype=np.int64).reshape(len(ids), -1), labels, lengths)


@dataclass
class CorpusReport:
    samples: int = 0
    malformed: list[int] = field(default_factory=list)
    empty_after_filter: int = 0


def read_corpus(lines: Iterable[str], report: CorpusReport | None = None) -> list[tuple[int, str]]:
    """Parse ``label<TAB>text`` lines; malformed lines are skipped and recorded."""
    report = report if report is not None else CorpusReport()
    samples = []
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\n").rstrip("\r")
        if not line:
            continue
        label, sep, text = line.partition("\t")
        if not sep or label not in ("0", "1"):
            report.malformed.append(lineno)
            logger.info("line %d: expected 'label<TAB>text' with label 0 or 1", lineno)
            continue
        samples.append((int(label), text))
    report.samples = len(samples)
    return samples


def tokenize_corpus(
    samples: Sequence[tuple[int, str]],
    rules: FilterRules = FilterRules(),
    tokenizer: Tokenizer | None = None,
    report: CorpusReport | None = None,
) -> list[tuple[int, list[str]]]:
    """Filter and tokenize; samples left empty are dropped with a logged count."""
    tokenizer = tokenizer or WhitespaceTokenizer(rules.retained)
    out, dropped = [], 0
    for label, text in samples:
        tokens = tokenizer(filter_text(text, rules))
        if tokens:
            out.append((label, tokens))
        else:
            dropped += 1
    if dropped:
        logger.info("dropped %d samples that were empty after filtering", dropped)
    if report is not None:
        report.empty_after_filter += dropped
    return out


def encode_samples(samples: Sequence[tuple[int, list[str]]], vocab: Vocabulary, max_len: int) -> EncodedBatch:
    ids = [align(vocab.encode(toks), max_len) for _, toks in samples]
    return EncodedBatch(
        np.array(ids, dtype=np.int64).reshape(len(ids), max_len),
        [lab for lab, _ in samples],
        [len(toks) for _, toks in samples],
    )
