"""Corruption functions: Poisson span masking, sentence permutation and
lexicon-driven code-switching, plus the alternating restore stream."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .align import TranslationLexicon
from .corpus import MASK, Corpus, Sentence
from .errors import CoverageWarning, ParameterError


@dataclass(frozen=True)
class NoiseConfig:
    ratio: float = 0.35
    poisson_lambda: float = 3.5
    k: int = 4
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.ratio <= 1.0:
            raise ParameterError(f"ratio must be in (0, 1], got {self.ratio}")
        if self.poisson_lambda <= 0:
            raise ParameterError("poisson_lambda must be positive")
        if self.k < 1:
            raise ParameterError("k must be at least 1")


@dataclass(frozen=True)
class RestorePair:
    input: Sentence
    target: Sentence
    side: str
    replaced_positions: frozenset[int] = frozenset()

    def tsv_row(self) -> str:
        return f"{self.side}\t{self.input.tagged()}\t{self.target.tagged()}"


def budget(n: int, ratio: float) -> int:
    """max(1, round-half-up(ratio * n)), capped at n."""
    return min(n, max(1, math.floor(ratio * n + 0.5)))


def poisson_lengths(rng: np.random.Generator, lam: float, size=None):
    """Raw span lengths before clamping/truncation."""
    return rng.poisson(lam, size=size)


def _free_runs(free: np.ndarray) -> list[tuple[int, int]]:
    runs, start = [], None
    for i, f in enumerate(free):
        if f and start is None:
            start = i
        elif not f and start is not None:
            runs.append((start, i - start))
            start = None
    if start is not None:
        runs.append((start, len(free) - start))
    return runs


def sample_spans(n: int, config: NoiseConfig, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Disjoint spans covering exactly ``budget(n, ratio)`` positions, sorted by start.

    Each span length is a Poisson draw clamped to at least 1 and cut to the
    remaining budget.  When no free stretch is long enough the length shrinks
    to the longest free stretch, so spans may fragment.
    """
    if n < 1:
        raise ParameterError("cannot sample spans in an empty sentence")
    free = np.ones(n, dtype=bool)
    remaining = budget(n, config.ratio)
    spans = []
    while remaining > 0:
        length = min(max(1, int(poisson_lengths(rng, config.poisson_lambda))), remaining)
        runs = _free_runs(free)
        length = min(length, max(r for _, r in runs))
        starts = [s + o for s, r in runs for o in range(r - length + 1)]
        start = starts[int(rng.integers(len(starts)))]
        free[start:start + length] = False
        spans.append((start, length))
        remaining -= length
    return sorted(spans)


def span_mask(sent: Sentence, config: NoiseConfig, rng: np.random.Generator,
              spans: Sequence[tuple[int, int]] | None = None, side: str = "source") -> RestorePair:
    """Collapse every span to one mask token.  ``spans`` overrides sampling."""
    if len(sent) == 0:
        raise ParameterError("cannot mask an empty sentence")
    if spans is None:
        spans = sample_spans(len(sent), config, rng)
    starts = {s: l for s, l in spans}
    out, masked, i = [], set(), 0
    while i < len(sent):
        if i in starts:
            out.append(MASK)
            masked.update(range(i, i + starts[i]))
            i += starts[i]
        else:
            out.append(sent.tokens[i])
            i += 1
    return RestorePair(Sentence(tuple(out), sent.lang), sent, side, frozenset(masked))


def permute_sentences(doc: Sequence[Sentence], rng: np.random.Generator) -> list[Sentence]:
    if len(doc) < 1:
        raise ParameterError("document must contain at least one sentence")
    return [doc[i] for i in rng.permutation(len(doc))]


def code_switch(sent: Sentence, lexicon: TranslationLexicon, config: NoiseConfig,
                rng: np.random.Generator, side: str = "source",
                spans: Sequence[tuple[int, int]] | None = None, warn: bool = True) -> RestorePair:
    """Replace words inside Poisson-length spans by a random top-k lexicon neighbour.

    Spans start at a uniformly chosen not-yet-considered position.  Words
    without lexicon entries are skipped and do not consume budget; the loop
    stops once the budget is met or every position has been considered.
    ``spans`` fixes the visiting order explicitly (then no span sampling
    happens, only the neighbour choices draw from ``rng``).
    """
    n = len(sent)
    if n == 0:
        raise ParameterError("cannot code-switch an empty sentence")
    if lexicon.src_lang != sent.lang:
        raise ParameterError(f"lexicon direction {lexicon.src_lang}->{lexicon.tgt_lang} "
                             f"does not start at {sent.lang}")
    target_count = budget(n, config.ratio)
    tokens = list(sent.tokens)
    replaced: set[int] = set()
    considered = np.zeros(n, dtype=bool)

    def visit(pos: int) -> None:
        considered[pos] = True
        if len(replaced) >= target_count:
            return
        choices = lexicon.neighbors(sent.tokens[pos], config.k)
        if choices:
            tokens[pos] = choices[int(rng.integers(len(choices)))] if len(choices) > 1 else choices[0]
            replaced.add(pos)

    if spans is not None:
        for start, length in spans:
            for pos in range(start, min(n, start + length)):
                if not considered[pos]:
                    visit(pos)
    else:
        while len(replaced) < target_count and not considered.all():
            length = max(1, int(poisson_lengths(rng, config.poisson_lambda)))
            open_positions = np.flatnonzero(~considered)
            start = int(open_positions[int(rng.integers(len(open_positions)))])
            for pos in range(start, min(n, start + length)):
                if not considered[pos]:
                    visit(pos)
    if not replaced and warn:
        warnings.warn(f"no word of a {n}-token sentence is covered by the lexicon", CoverageWarning,
                      stacklevel=2)
    return RestorePair(Sentence(tuple(tokens), sent.lang), sent, side, frozenset(replaced))


def sentence_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream per (seed, epoch, side, sentence index)."""
    return np.random.default_rng([seed, *keys])


def make_restore_stream(corpus: Corpus, lex_src: TranslationLexicon, lex_tgt: TranslationLexicon,
                        config: NoiseConfig, batch_size: int = 32,
                        epochs: int | None = None) -> Iterator[list[RestorePair]]:
    """Batches alternating source side and target side restore pairs.

    Each epoch visits every source and every target sentence once, in an
    order shuffled from ``config.seed`` and the epoch number.  ``epochs=None``
    streams forever.
    """
    if batch_size < 1:
        raise ParameterError("batch_size must be positive")
    if len(corpus) == 0:
        return
    sides = (("source", corpus.sources(), lex_src), ("target", corpus.targets(), lex_tgt))
    epoch = 0
    while epochs is None or epoch < epochs:
        order_rng = sentence_rng(config.seed, epoch)
        orders = [order_rng.permutation(len(corpus)) for _ in sides]
        n_batches = -(-len(corpus) // batch_size)
        for b in range(n_batches):
            for side_id, ((side, sents, lex), order) in enumerate(zip(sides, orders)):
                idx = order[b * batch_size:(b + 1) * batch_size]
                yield [code_switch(sents[i], lex, config, sentence_rng(config.seed, epoch, side_id, int(i)),
                                   side=side, warn=False) for i in idx]
        epoch += 1


def write_restore_tsv(pairs: Sequence[RestorePair], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            fh.write(pair.tsv_row() + "\n")
