from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csrlab.corpus import (
    BASE_SPECIALS,
    Corpus,
    LanguageTag,
    ParallelPair,
    Sentence,
    Vocabulary,
    build_vocab,
    frequency_bucket,
    gen_cipher_pair,
    load_parallel,
    save_parallel,
)
from csrlab.errors import CorpusAlignmentError, CorpusDecodeError, EmptyCorpusError, ParameterError

EN, ZH = LanguageTag("EN"), LanguageTag("ZH")


def make_corpus(src_lines, tgt_lines, src=EN, tgt=ZH):
    return Corpus(tuple(ParallelPair(Sentence.from_text(s, src), Sentence.from_text(t, tgt))
                        for s, t in zip(src_lines, tgt_lines)))


def write(path, text, encoding="utf-8"):
    path.write_bytes(text.encode(encoding) if isinstance(text, str) else text)
    return path


def test_language_tag_rendering():
    assert str(EN) == "[EN]"
    assert LanguageTag.parse("[ZH]") == ZH
    assert LanguageTag.parse("ZH") == ZH
    for bad in ("", "en", "E N", "[]"):
        with pytest.raises(ParameterError):
            LanguageTag.parse(bad)


def test_sentence_from_text_counts_tokens():
    s = Sentence.from_text("Bush held a talk with Sharon .", EN)
    assert len(s) == 7
    assert s.tagged() == "Bush held a talk with Sharon . [EN]"


def test_sentence_rejects_whitespace_tokens():
    with pytest.raises(ParameterError):
        Sentence(("a b",), EN)


def test_pair_requires_distinct_languages():
    with pytest.raises(ParameterError):
        ParallelPair(Sentence(("a",), EN), Sentence(("b",), EN))


def test_load_parallel_preserves_order(tmp_path):
    src = write(tmp_path / "a.en", "one\ntwo words\n")
    tgt = write(tmp_path / "a.zh", "一\n二 个\n")
    corpus = load_parallel(src, tgt, EN, ZH)
    assert len(corpus) == 2
    assert corpus.pairs[1].source.tokens == ("two", "words")
    assert corpus.pairs[1].target.tokens == ("二", "个")
    assert corpus.src_lang == EN and corpus.tgt_lang == ZH


def test_load_parallel_errors(tmp_path):
    three = write(tmp_path / "3", "a\nb\nc\n")
    four = write(tmp_path / "4", "a\nb\nc\nd\n")
    with pytest.raises(CorpusAlignmentError):
        load_parallel(three, four, EN, ZH)
    empty = write(tmp_path / "e", "")
    with pytest.raises(EmptyCorpusError):
        load_parallel(empty, empty, EN, ZH)
    bad = write(tmp_path / "bad", b"ok\n\xff\xfe\n")
    with pytest.raises(CorpusDecodeError):
        load_parallel(bad, four, EN, ZH)


def test_dedup_is_exact_and_optional(tmp_path):
    src = write(tmp_path / "s", "a b\na b\nc\n")
    tgt = write(tmp_path / "t", "x\nx\ny\n")
    assert len(load_parallel(src, tgt, EN, ZH)) == 3
    assert len(load_parallel(src, tgt, EN, ZH, dedup=True)) == 2


@pytest.mark.parametrize("lines", [["hello world", "a b c"], ["布什 与 沙龙 举行 了 会谈", "ünïcödé ✓", "x"]])
def test_save_load_roundtrip_is_bit_exact(tmp_path, lines):
    src = write(tmp_path / "s", "\n".join(lines) + "\n")
    tgt = write(tmp_path / "t", "\n".join(reversed(lines)) + "\n")
    corpus = load_parallel(src, tgt, EN, ZH)
    save_parallel(corpus, tmp_path / "s2", tmp_path / "t2")
    assert (tmp_path / "s2").read_bytes() == src.read_bytes()
    assert (tmp_path / "t2").read_bytes() == tgt.read_bytes()


def test_build_vocab_counts_and_tie_order():
    corpus = make_corpus(["a b a", "b"], ["x", "y"])
    vocab = build_vocab(corpus, side="source")
    assert vocab.counts == {"a": 2, "b": 2}
    assert vocab.words == ("a", "b")
    both = build_vocab(corpus, side="both")
    assert set(both.words) == {"a", "b", "x", "y"}


def test_specials_occupy_lowest_indices():
    corpus = make_corpus(["z z z z"], ["q"])
    vocab = build_vocab(corpus)
    assert vocab.specials == BASE_SPECIALS + ("[EN]", "[ZH]")
    assert [vocab.index(s) for s in vocab.specials] == list(range(len(vocab.specials)))
    assert vocab.index("z") == len(vocab.specials)


def test_build_vocab_rejects_empty():
    with pytest.raises(EmptyCorpusError):
        build_vocab(Corpus(()))


def test_vocab_tsv_roundtrip(tmp_path):
    vocab = build_vocab(make_corpus(["a b a", "c"], ["x y", "y"]))
    vocab.to_tsv(tmp_path / "v.tsv")
    again = Vocabulary.from_tsv(tmp_path / "v.tsv")
    assert again == vocab
    assert again.n_specials == vocab.n_specials
    first = (tmp_path / "v.tsv").read_text(encoding="utf-8").splitlines()[0]
    assert first == "<pad>\t0\t0"


def test_encode_maps_unknown_words():
    vocab = build_vocab(make_corpus(["a"], ["x"]))
    assert vocab.encode(["a", "never"]) == [vocab.index("a"), vocab.index("<unk>")]


@pytest.mark.parametrize("count,bucket", [(99, "low"), (100, "mid"), (1000, "mid"), (1001, "high")])
def test_frequency_bucket_boundaries(count, bucket):
    vocab = Vocabulary(("w",), {"w": count}, 0)
    assert frequency_bucket(vocab, "w", 100, 1000) == bucket
    assert frequency_bucket(vocab, "missing") == "unknown"


def test_frequency_bucket_threshold_order():
    with pytest.raises(ParameterError):
        frequency_bucket(Vocabulary((), {}, 0), "w", 10, 5)


def test_cipher_pair_is_deterministic_and_consistent():
    c1, gold = gen_cipher_pair(7, vocab_size=50, n_sentences=2000)
    c2, gold2 = gen_cipher_pair(7, vocab_size=50, n_sentences=2000)
    assert c1 == c2 and gold == gold2
    assert sorted(gold.values()) == sorted(f"t{k}" for k in range(50))
    seen = set()
    for pair in c1.pairs:
        assert pair.target.tokens == tuple(gold[w] for w in pair.source.tokens)
        assert 4 <= len(pair.source) <= 12
        seen.update(pair.source.tokens)
    assert seen == set(gold)


def test_cipher_pair_rejects_degenerate_parameters():
    with pytest.raises(ParameterError):
        gen_cipher_pair(0, vocab_size=5)
    with pytest.raises(ParameterError):
        gen_cipher_pair(0, len_range=(5, 2))
    with pytest.raises(ParameterError):
        gen_cipher_pair(0, n_sentences=0)


def test_cipher_context_knob_adds_structure():
    corpus, _ = gen_cipher_pair(1, context_strength=0.8)
    bigrams = Counter((a, b) for p in corpus.pairs for a, b in zip(p.source.tokens, p.source.tokens[1:]))
    # with fixed successors the most frequent bigrams dominate far beyond unigram chance
    top = sum(c for _, c in bigrams.most_common(50)) / sum(bigrams.values())
    assert top > 0.5


words = st.sampled_from(["a", "b", "c", "dd", "é", "字"])
sentences = st.lists(st.lists(words, min_size=1, max_size=6), min_size=1, max_size=8)


@settings(max_examples=50, deadline=None)
@given(sentences, st.sampled_from(["source", "target", "both"]))
def test_vocab_counts_match_brute_force(lines, side):
    corpus = make_corpus([" ".join(s) for s in lines], [" ".join(reversed(s)) for s in lines])
    vocab = build_vocab(corpus, side=side)
    tally = Counter()
    for s in lines:
        if side in ("source", "both"):
            tally.update(s)
        if side in ("target", "both"):
            tally.update(s)
    assert vocab.counts == dict(tally)
    buckets = [frequency_bucket(vocab, w, 2, 4) for w in vocab.words]
    assert all(b in ("low", "mid", "high") for b in buckets)
