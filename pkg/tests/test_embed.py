import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from csrlab.corpus import LanguageTag, Sentence
from csrlab.embed import (
    EmbeddingMatrix,
    SgnsConfig,
    load_embeddings,
    normalize,
    save_embeddings,
    sgns_grads,
    sgns_loss,
    skipgram_pairs,
    train_sgns,
)
from csrlab.errors import DegenerateCorpusError, FormatError, NormalizationError, ParameterError, ParseError

XX = LanguageTag("XX")


def sents(lines):
    return [Sentence.from_text(line, XX) for line in lines]


def interchangeable_corpus(n=1000, seed=0):
    """'a' and 'b' share every context distribution; the rest are filler."""
    rng = np.random.default_rng(seed)
    left = [f"l{i}" for i in range(8)]
    right = [f"r{i}" for i in range(8)]
    lines = []
    for _ in range(n):
        mid = "a" if rng.random() < 0.5 else "b"
        lines.append(" ".join([rng.choice(left), rng.choice(left), mid, rng.choice(right), rng.choice(right)]))
    return sents(lines)


def cosine(u, v):
    return float(u @ v / np.linalg.norm(u) / np.linalg.norm(v))


def test_sgns_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    h = 1e-6
    for _ in range(10):
        center, context = rng.normal(size=6), rng.normal(size=6)
        negs = rng.normal(size=(4, 6))
        analytic = sgns_grads(center, context, negs)
        params = [center, context, negs]
        for p, g in zip(params, analytic):
            num = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = sgns_loss(*params)
                p[idx] = old - h
                down = sgns_loss(*params)
                p[idx] = old
                num[idx] = (up - down) / (2 * h)
            rel = np.abs(g - num) / np.maximum(np.maximum(np.abs(g), np.abs(num)), 1e-8)
            assert rel.max() < 1e-4


def test_skipgram_pairs_window():
    pairs = skipgram_pairs([[0, 1, 2]], window=1)
    assert sorted(map(tuple, pairs)) == [(0, 1), (1, 0), (1, 2), (2, 1)]


def test_similar_contexts_give_similar_vectors():
    emb = train_sgns(interchangeable_corpus(), SgnsConfig(dim=16, window=2, epochs=5, seed=0))
    assert cosine(emb["a"], emb["b"]) > 0.9


def test_training_is_deterministic_and_loss_decreases():
    corpus = interchangeable_corpus(300)
    history = []
    e1 = train_sgns(corpus, SgnsConfig(dim=8, epochs=4, seed=5), loss_history=history)
    e2 = train_sgns(corpus, SgnsConfig(dim=8, epochs=4, seed=5))
    assert np.array_equal(e1.vectors, e2.vectors)
    assert e1.words == e2.words
    assert len(history) == 4 and history[-1] < history[0]


def test_unshuffled_training_depends_on_sentence_order_only_via_pairs():
    corpus = interchangeable_corpus(100)
    cfg = SgnsConfig(dim=4, epochs=1, seed=2, shuffle=False)
    assert np.array_equal(train_sgns(corpus, cfg).vectors, train_sgns(list(corpus), cfg).vectors)


def test_min_count_filtering_can_empty_vocabulary():
    with pytest.raises(DegenerateCorpusError):
        train_sgns(sents(["a b", "c"]), SgnsConfig(min_count=5))


def test_config_validation():
    with pytest.raises(ParameterError):
        SgnsConfig(dim=1)
    with pytest.raises(ParameterError):
        SgnsConfig(min_count=0)


def test_load_small_file(tmp_path):
    p = tmp_path / "e.vec"
    p.write_text("2 2\na 1 0\nb 0 1\n", encoding="utf-8")
    emb = load_embeddings(p)
    assert emb.words == ("a", "b")
    assert np.array_equal(emb.vectors, np.eye(2))


def test_save_load_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    emb = EmbeddingMatrix(("x", "字", "y"), rng.normal(size=(3, 5)))
    save_embeddings(emb, tmp_path / "e.vec")
    again = load_embeddings(tmp_path / "e.vec")
    assert again.words == emb.words
    assert np.array_equal(again.vectors, emb.vectors)


@pytest.mark.parametrize("text,error", [
    ("2 2\na 1 0 5\nb 0 1\n", FormatError),
    ("3 2\na 1 0\nb 0 1\n", FormatError),
    ("2\na 1 0\n", FormatError),
    ("2 2\na 1 zero\nb 0 1\n", ParseError),
])
def test_load_rejects_malformed(tmp_path, text, error):
    p = tmp_path / "bad.vec"
    p.write_text(text, encoding="utf-8")
    with pytest.raises(error):
        load_embeddings(p)


def test_normalize_examples():
    e = EmbeddingMatrix(("a", "b"), [[3.0, 4.0], [1.0, 0.0]])
    assert np.allclose(normalize(e, ["unit"]).vectors[0], [0.6, 0.8])
    c = normalize(EmbeddingMatrix(("a", "b"), [[1.0, 0.0], [3.0, 0.0]]), ["center"])
    assert np.allclose(c.vectors, [[-1, 0], [1, 0]])
    with pytest.raises(NormalizationError):
        normalize(EmbeddingMatrix(("a", "b"), [[0.0, 0.0], [1.0, 1.0]]), ["unit"])
    with pytest.raises(ParameterError):
        normalize(e, ["whiten"])


matrices = arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(2, 6)),
                  elements=st.floats(-10, 10, allow_nan=False).filter(lambda x: abs(x) > 1e-3))


@settings(max_examples=60, deadline=None)
@given(matrices)
def test_normalize_properties(M):
    emb = EmbeddingMatrix(tuple(f"w{i}" for i in range(len(M))), M)
    unit = normalize(emb, ["unit"])
    assert np.allclose(np.linalg.norm(unit.vectors, axis=1), 1.0, atol=1e-9)
    assert np.allclose(normalize(unit, ["unit"]).vectors, unit.vectors, atol=1e-12)
    centered = normalize(emb, ["center"])
    assert np.allclose(centered.vectors.mean(axis=0), 0.0, atol=1e-9)
    try:
        full = normalize(emb, ["unit", "center", "unit"])
    except NormalizationError:
        return  # centering can legitimately zero a row, e.g. two identical unit rows
    assert np.allclose(np.linalg.norm(full.vectors, axis=1), 1.0, atol=1e-9)
