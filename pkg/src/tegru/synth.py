"""Synthetic pre-segmented Chinese comments with order-dependent sentiment.

Each comment is one or two clauses. A clause may carry a sentiment word,
optionally negated by a negator placed *immediately* before it; a negator
anywhere else is a distractor. The label is the polarity of the last polar
clause, so "好看 ， 但是 无聊" and "无聊 ， 但是 好看" share a bag of words but
not a label. Raw lines also carry noise symbols that the punctuation filter
must strip.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

POSITIVE = ["好看", "精彩", "感人", "喜欢", "推荐", "满意", "不错", "优秀", "温暖", "惊喜"]
NEGATIVE = ["难看", "无聊", "失望", "糟糕", "垃圾", "差劲", "后悔", "拖沓", "尴尬", "乏味"]
NEGATORS = ["不", "没有", "并不"]
CONTRAST = ["但是", "可是", "不过"]
FILLERS = [
    "电影", "演员", "剧情", "今天", "我们", "觉得", "这个", "导演", "画面", "音乐",
    "故事", "朋友", "周末", "一起", "真的", "有点", "还是", "其实", "结局", "开头",
    "特效", "配乐", "角色", "台词", "节奏", "看完", "知道", "影院", "票价", "观众",
]
NOISE = ["~", "@", "#", "*", "【", "】", "^_^", "~~", "😀", "、", "《", "》", "“", "”"]
CLAUSE_END = ["，", "。", "！", "？", "；"]


def _clause(rng: np.random.Generator, polarity: int | None) -> tuple[list[str], int | None]:
    """A clause of fillers; with ``polarity`` it also holds a (maybe negated) sentiment word."""
    words = list(rng.choice(FILLERS, size=int(rng.integers(2, 6))))
    if rng.random() < 0.3:
        # distractor negator not followed by a sentiment word
        words.insert(int(rng.integers(0, len(words))), str(rng.choice(NEGATORS)))
        words.insert(len(words), str(rng.choice(FILLERS)))
    if polarity is None:
        return words, None
    negate = rng.random() < 0.35
    surface = polarity if not negate else 1 - polarity
    phrase = [str(rng.choice(POSITIVE if surface == 1 else NEGATIVE))]
    if negate:
        phrase.insert(0, str(rng.choice(NEGATORS)))
    pos = int(rng.integers(0, len(words) + 1))
    # a sentiment word directly after a distractor negator would be negated by it
    while pos > 0 and words[pos - 1] in NEGATORS:
        pos -= 1
    return words[:pos] + phrase + words[pos:], polarity


def make_comment(rng: np.random.Generator) -> tuple[int, list[str]]:
    label = int(rng.integers(0, 2))
    kind = rng.random()
    if kind < 0.4:
        clauses = [_clause(rng, label)]
        if rng.random() < 0.5:
            clauses.insert(int(rng.integers(0, 2)), _clause(rng, None))
        tokens = []
        for i, (words, _) in enumerate(clauses):
            tokens += words + ([str(rng.choice(CLAUSE_END))] if i < len(clauses) - 1 else [])
    elif kind < 0.75:
        first, _ = _clause(rng, 1 - label)
        second, _ = _clause(rng, label)
        tokens = first + ["，", str(rng.choice(CONTRAST))] + second
    else:
        first, _ = _clause(rng, label)
        second, _ = _clause(rng, label)
        tokens = first + [str(rng.choice(CLAUSE_END))] + second
    if rng.random() < 0.7:
        tokens.append(str(rng.choice(CLAUSE_END)))
    return label, tokens


def _noisy(rng: np.random.Generator, tokens: list[str]) -> str:
    out = []
    for tok in tokens:
        out.append(tok)
        if rng.random() < 0.1:
            out[-1] = tok + str(rng.choice(NOISE))
    return " ".join(out)


def generate(n: int, seed: int = 0) -> list[tuple[int, str]]:
    rng = np.random.default_rng(seed)
    return [(label, _noisy(rng, tokens)) for label, tokens in (make_comment(rng) for _ in range(n))]


def write_splits(out_dir, n_train: int = 3500, n_valid: int = 500, n_test: int = 1000, seed: int = 0) -> None:
    """Write ``train.tsv``, ``valid.tsv`` and ``test.tsv`` in ``label<TAB>text`` format."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = generate(n_train + n_valid + n_test, seed)
    cuts = {"train": samples[:n_train], "valid": samples[n_train:n_train + n_valid],
            "test": samples[n_train + n_valid:]}
    for name, rows in cuts.items():
        (out / f"{name}.tsv").write_text("".join(f"{lab}\t{txt}\n" for lab, txt in rows), encoding="utf-8")
