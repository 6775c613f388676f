import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tegru import textpipe as tp
from toy import FIXTURES

RULES = tp.FilterRules()
MARKS = sorted(tp.DEFAULT_RETAINED) + list("~@#*【】《》“”、!%&()")


# -- filter ---------------------------------------------------------------------------


def test_filter_examples():
    fullwidth = tp.FilterRules(frozenset("！，。？；"))
    assert tp.filter_text("好看！！！~~~@@", fullwidth) == "好看！！！"
    assert tp.filter_text("电影 很 好看", RULES) == "电影 很 好看"
    assert tp.filter_text("，。？；", RULES) == "，。？；"
    assert tp.filter_text("", RULES) == ""


def test_default_retained_set_is_exact():
    assert tp.DEFAULT_RETAINED == frozenset("。！？；，….!?;,")


@given(st.text(alphabet=st.sampled_from(MARKS + list("好看电影 abc123")), max_size=40))
def test_filter_idempotent(text):
    once = tp.filter_text(text, RULES)
    assert tp.filter_text(once, RULES) == once
    assert all(ch in RULES.retained or not tp._is_punct_or_symbol(ch) for ch in once)


# -- tokenize -------------------------------------------------------------------------


def test_tokenize_examples():
    assert tp.tokenize("电影 很 好看 。") == ["电影", "很", "好看", "。"]
    assert tp.tokenize("") == []
    assert tp.tokenize("好看！！") == ["好看", "！", "！"]


def test_external_tokenizer_hook():
    seg = tp.ExternalTokenizer([sys.executable, "-c",
                                "import sys; [print(c) for c in sys.stdin.read().strip()]"])
    assert seg("好看吗") == ["好", "看", "吗"]
    assert seg("") == []
    assert tp.parse_token_lines("电影\n\n好看\n") == ["电影", "好看"]


# -- vocabulary -----------------------------------------------------------------------


def test_build_vocab_examples():
    v = tp.build_vocab(["a", "b", "a"], 4)
    assert v.index == {tp.PAD: 0, tp.UNK: 1, "a": 2, "b": 3}
    v2 = tp.build_vocab(["a", "b", "a"], 2)
    assert len(v2) == 2 and v2.encode(["a", "b"]) == [1, 1]
    v3 = tp.build_vocab(["y", "x", "x", "y", "z"], 10)
    assert v3.encode(["y", "x", "z"]) == [2, 3, 4]
    with pytest.raises(ValueError):
        tp.build_vocab(["a"], 1)


def test_vocab_export_roundtrip(tmp_path):
    v = tp.build_vocab("c a b a c a".split(), 10)
    v.save(tmp_path / "v.tsv")
    assert tp.Vocabulary.load(tmp_path / "v.tsv") == v
    assert v.export_text().splitlines()[:3] == ["<pad>\t0", "<unk>\t1", "a\t2"]


tokens = st.lists(st.sampled_from(list("abcdefghij")), max_size=60)


@given(tokens, st.integers(2, 12))
def test_vocab_roundtrip_property(stream, size):
    v = tp.build_vocab(stream, size)
    assert sorted(v.index.values()) == list(range(len(v)))
    for i in range(2, len(v)):
        assert v.encode(v.decode([i])) == [i]
    for tok in v.decode(v.encode(stream)):
        assert tok in v


@given(tokens, st.integers(2, 10), st.integers(0, 5))
def test_vocab_monotone_in_size(stream, size, extra):
    small = set(tp.build_vocab(stream, size).index)
    assert small <= set(tp.build_vocab(stream, size + extra).index)


# -- align ----------------------------------------------------------------------------


def test_align_examples():
    assert tp.align([11, 12, 13, 14, 15], 3) == [13, 14, 15]
    assert tp.align([11, 12], 4) == [0, 0, 11, 12]
    assert tp.align([11, 12, 13], 3) == [11, 12, 13]
    assert tp.align([11, 12, 13], 1) == [13]


@given(st.integers(1, 8).flatmap(lambda m: st.tuples(st.just(m), st.lists(st.integers(2, 99), max_size=3 * m))))
def test_align_keeps_tail(case):
    max_len, ids = case
    out = tp.align(ids, max_len)
    keep = min(len(ids), max_len)
    assert len(out) == max_len
    assert out[max_len - keep:] == ids[len(ids) - keep:]
    assert all(v == tp.PAD_ID for v in out[:max_len - keep])


# -- embeddings -----------------------------------------------------------------------


def _four_word_vocab():
    return tp.Vocabulary([tp.PAD, tp.UNK, "好看", "电影", "剧情", "演员"])


def test_embedding_fixture_coverage():
    table = tp.load_embeddings(FIXTURES / "embeddings.txt", _four_word_vocab(), seed=3)
    assert table.coverage == 0.75
    assert table.dim == 3 and len(table) == 6
    assert not table.vectors[0].any()
    assert np.allclose(table.vectors[3], [-0.5, 0.25, 1.0])
    assert np.all(np.abs(table.vectors[5]) <= 0.1)


def test_embedding_no_overlap(tmp_path):
    path = tmp_path / "e.txt"
    path.write_text("2 2\n甲 1 1\n乙 2 2\n", encoding="utf-8")
    table = tp.load_embeddings(path, _four_word_vocab())
    assert table.coverage == 0.0
    assert not table.vectors[0].any()
    assert np.all(np.abs(table.vectors[1:]) <= 0.1)


@pytest.mark.parametrize("body, where", [
    ("2 3\n好看 1 2 3\n电影 1 2\n", ":3:"),
    ("1 3\n好看 1 x 3\n", ":2:"),
    ("1 2\n好看 1 nan\n", ":2:"),
    ("3 2\n好看 1 2\n", "declares 3"),
    ("garbage\n", ":1:"),
])
def test_embedding_format_errors(tmp_path, body, where):
    path = tmp_path / "bad.txt"
    path.write_text(body, encoding="utf-8")
    with pytest.raises(tp.EmbeddingFormatError, match=where):
        tp.load_embeddings(path, _four_word_vocab())


# -- corpus ---------------------------------------------------------------------------


def test_read_corpus_reports_malformed_lines():
    report = tp.CorpusReport()
    samples = tp.read_corpus(["1\t好\n", "oops\n", "3\tbad\n", "0\t差\n"], report)
    assert samples == [(1, "好"), (0, "差")]
    assert report.malformed == [2, 3]


def test_encoded_batch_text_roundtrip(tmp_path):
    b = tp.EncodedBatch(np.array([[0, 2, 3], [4, 5, 6]]), [1, 0], [2, 5])
    b.save(tmp_path / "x.ids")
    back = tp.EncodedBatch.load(tmp_path / "x.ids")
    assert np.array_equal(back.ids, b.ids) and back.labels.tolist() == [1, 0]
    assert back.lengths.tolist() == [2, 5]
