"""Parallel corpora, vocabularies and the synthetic cipher corpus."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CorpusAlignmentError,
    CorpusDecodeError,
    EmptyCorpusError,
    ParameterError,
)

PAD = "<pad>"
BOS = "<s>"
EOS = "</s>"
MASK = "⟨mask⟩"
UNK = "<unk>"
BASE_SPECIALS = (PAD, BOS, EOS, MASK, UNK)

_TAG_CODE = re.compile(r"^[A-Z][A-Z0-9_]*$")


@dataclass(frozen=True, order=True)
class LanguageTag:
    code: str

    def __post_init__(self):
        if not _TAG_CODE.match(self.code or ""):
            raise ParameterError(f"invalid language code {self.code!r}")

    def __str__(self) -> str:
        return f"[{self.code}]"

    @classmethod
    def parse(cls, text: str) -> "LanguageTag":
        text = text.strip()
        if text.startswith("[") and text.endswith("]"):
            text = text[1:-1]
        return cls(text)


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]
    lang: LanguageTag

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        for tok in self.tokens:
            if not tok or any(ch.isspace() for ch in tok):
                raise ParameterError(f"token {tok!r} is empty or contains whitespace")

    @classmethod
    def from_text(cls, line: str, lang: LanguageTag) -> "Sentence":
        return cls(tuple(line.split()), lang)

    def __len__(self) -> int:
        return len(self.tokens)

    def text(self) -> str:
        return " ".join(self.tokens)

    def tagged(self) -> str:
        """Surface form with the language tag appended, e.g. ``"a b [EN]"``."""
        return " ".join(self.tokens + (str(self.lang),))


@dataclass(frozen=True)
class ParallelPair:
    source: Sentence
    target: Sentence

    def __post_init__(self):
        if self.source.lang == self.target.lang:
            raise ParameterError("source and target languages must differ")


@dataclass(frozen=True)
class Corpus:
    pairs: tuple[ParallelPair, ...]
    id: str = "corpus"

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        langs = {(p.source.lang, p.target.lang) for p in self.pairs}
        if len(langs) > 1:
            raise ParameterError(f"mixed language pairs in corpus: {sorted(langs)}")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def src_lang(self) -> LanguageTag:
        return self._first().source.lang

    @property
    def tgt_lang(self) -> LanguageTag:
        return self._first().target.lang

    def _first(self) -> ParallelPair:
        if not self.pairs:
            raise EmptyCorpusError(f"corpus {self.id!r} is empty")
        return self.pairs[0]

    def sources(self) -> list[Sentence]:
        return [p.source for p in self.pairs]

    def targets(self) -> list[Sentence]:
        return [p.target for p in self.pairs]

    def dedup(self) -> "Corpus":
        """Drop exact duplicate pairs, keeping the first occurrence."""
        seen = set()
        kept = []
        for pair in self.pairs:
            key = (pair.source.tokens, pair.target.tokens)
            if key not in seen:
                seen.add(key)
                kept.append(pair)
        return Corpus(tuple(kept), self.id)


def _read_lines(path: Path) -> list[str]:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusDecodeError(f"{path}: invalid UTF-8 ({exc.reason} at byte {exc.start})") from exc
    if not text:
        raise EmptyCorpusError(f"{path} is empty")
    return text.split("\n")[:-1] if text.endswith("\n") else text.split("\n")


def load_parallel(src_path, tgt_path, src_lang: LanguageTag, tgt_lang: LanguageTag,
                  corpus_id: str | None = None, dedup: bool = False) -> Corpus:
    src_lines = _read_lines(src_path)
    tgt_lines = _read_lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise CorpusAlignmentError(
            f"line counts differ: {src_path} has {len(src_lines)}, {tgt_path} has {len(tgt_lines)}")
    pairs = tuple(
        ParallelPair(Sentence.from_text(s, src_lang), Sentence.from_text(t, tgt_lang))
        for s, t in zip(src_lines, tgt_lines)
    )
    corpus = Corpus(pairs, corpus_id or Path(src_path).stem)
    return corpus.dedup() if dedup else corpus


def save_parallel(corpus: Corpus, src_path, tgt_path) -> None:
    for path, sents in ((src_path, corpus.sources()), (tgt_path, corpus.targets())):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for sent in sents:
                fh.write(sent.text() + "\n")


@dataclass(frozen=True)
class Vocabulary:
    """Dense word index with training-corpus counts.

    ``itos[:n_specials]`` holds the reserved symbols (pad, bos, eos, mask and
    one tag per language); they carry no count.
    """

    itos: tuple[str, ...]
    counts: dict[str, int]
    n_specials: int = len(BASE_SPECIALS)
    stoi: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "stoi", {w: i for i, w in enumerate(self.itos)})
        if len(self.stoi) != len(self.itos):
            raise ParameterError("duplicate entries in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, word: str) -> bool:
        return word in self.stoi

    def index(self, word: str) -> int:
        return self.stoi[word]

    def count(self, word: str) -> int:
        return self.counts.get(word, 0)

    @property
    def specials(self) -> tuple[str, ...]:
        return self.itos[: self.n_specials]

    @property
    def words(self) -> tuple[str, ...]:
        return self.itos[self.n_specials:]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        """Word ids; unknown words map to ``<unk>`` when the vocabulary has one."""
        unk = self.stoi.get(UNK)
        if unk is None:
            return [self.stoi[t] for t in tokens]
        return [self.stoi.get(t, unk) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def to_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i, word in enumerate(self.itos):
                fh.write(f"{word}\t{i}\t{self.count(word)}\n")

    @classmethod
    def from_tsv(cls, path) -> "Vocabulary":
        itos, counts, n_specials = [], {}, 0
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            word, idx, cnt = line.split("\t")
            if int(idx) != len(itos):
                raise ParameterError(f"{path}: non-dense index {idx}")
            itos.append(word)
            if int(cnt) > 0:
                counts[word] = int(cnt)
            elif len(counts) == 0:
                n_specials += 1
        return cls(tuple(itos), counts, n_specials)


def ranked_words(counter: Counter) -> list[str]:
    """Descending count, ties broken lexicographically."""
    return sorted(counter, key=lambda w: (-counter[w], w))


def build_vocab(corpus: Corpus, side: str = "both",
                specials: Sequence[str] | None = None) -> Vocabulary:
    if side not in ("source", "target", "both"):
        raise ParameterError(f"side must be source, target or both, not {side!r}")
    if len(corpus) == 0:
        raise EmptyCorpusError(f"corpus {corpus.id!r} is empty")
    counter: Counter = Counter()
    for pair in corpus.pairs:
        if side in ("source", "both"):
            counter.update(pair.source.tokens)
        if side in ("target", "both"):
            counter.update(pair.target.tokens)
    if specials is None:
        specials = BASE_SPECIALS + (str(corpus.src_lang), str(corpus.tgt_lang))
    specials = tuple(specials)
    words = [w for w in ranked_words(counter) if w not in specials]
    return Vocabulary(specials + tuple(words), {w: counter[w] for w in words}, len(specials))


def frequency_bucket(vocab: Vocabulary, word: str, low_threshold: int = 100,
                     high_threshold: int = 1000) -> str:
    if low_threshold > high_threshold:
        raise ParameterError("low_threshold must not exceed high_threshold")
    count = vocab.counts.get(word)
    if count is None:
        return "unknown"
    if count < low_threshold:
        return "low"
    if count > high_threshold:
        return "high"
    return "mid"


SYNTH_SRC = LanguageTag("SRC")
SYNTH_TGT = LanguageTag("TGT")


def gen_cipher_pair(seed: int, vocab_size: int = 50, n_sentences: int = 2000,
                    len_range: tuple[int, int] = (4, 12), zipf_exponent: float = 1.0,
                    context_strength: float = 0.0, n_successors: int = 3,
                    max_attempts: int = 100) -> tuple[Corpus, dict[str, str]]:
    """Synthetic parallel corpus whose target side is a word cipher of the source.

    Source words ``s0..s{V-1}`` follow a Zipf-like unigram law; the target
    sentence substitutes every token through a fixed random bijection
    ``sK -> t{perm[K]}``.  Draws are repeated (same generator) until every
    cipher key occurs at least once.

    With ``context_strength > 0`` each next word is, with that probability,
    one of ``n_successors`` fixed successors of the previous word instead of
    a fresh unigram draw.  Pure unigram text has no distributional signal
    beyond sampling noise, so this knob is what makes alignment from
    independently seeded embeddings possible.
    """
    lo, hi = len_range
    if (vocab_size < 10 or n_sentences < 1 or lo < 1 or hi < lo
            or not 0.0 <= context_strength <= 1.0 or n_successors < 1):
        raise ParameterError(
            f"degenerate generator parameters: vocab_size={vocab_size}, "
            f"n_sentences={n_sentences}, len_range={len_range}, "
            f"context_strength={context_strength}")
    rng = np.random.default_rng(seed)
    probs = 1.0 / np.arange(1, vocab_size + 1) ** zipf_exponent
    probs /= probs.sum()
    perm = rng.permutation(vocab_size)
    gold = {f"s{k}": f"t{perm[k]}" for k in range(vocab_size)}
    successors = rng.choice(vocab_size, size=(vocab_size, n_successors), p=probs)
    for _ in range(max_attempts):
        lengths = rng.integers(lo, hi + 1, size=n_sentences)
        ids = rng.choice(vocab_size, size=int(lengths.sum()), p=probs)
        if context_strength > 0:
            follow = rng.random(len(ids)) < context_strength
            pick = rng.integers(n_successors, size=len(ids))
            starts = set(np.cumsum(lengths)[:-1].tolist()) | {0}
            for i in range(len(ids)):
                if follow[i] and i not in starts:
                    ids[i] = successors[ids[i - 1], pick[i]]
        if len(np.unique(ids)) == vocab_size:
            break
    else:
        raise ParameterError(f"could not cover {vocab_size} words with {n_sentences} sentences")
    pairs = []
    offset = 0
    for n in lengths:
        chunk = ids[offset:offset + n]
        offset += n
        src = tuple(f"s{k}" for k in chunk)
        pairs.append(ParallelPair(Sentence(src, SYNTH_SRC),
                                  Sentence(tuple(gold[w] for w in src), SYNTH_TGT)))
    return Corpus(tuple(pairs), f"cipher-{seed}"), gold
