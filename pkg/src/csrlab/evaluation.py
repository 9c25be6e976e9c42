"""Corpus BLEU, frequency-bucketed word F-measure, cross-lingual sentence
representation distance and convergence comparison."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .corpus import Sentence, Vocabulary, frequency_bucket
from .errors import PairingError, ParameterError
from .pipeline import TrainLog, steps_to_threshold

BUCKETS = ("all", "high", "mid", "low")
MAX_DISTANCE_SUBSET = 20000


def _tokens(s) -> tuple[str, ...]:
    return s.tokens if isinstance(s, Sentence) else tuple(s)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hypotheses, references, max_n: int = 4) -> tuple[list[int], list[int], int, int]:
    """Clipped n-gram matches and totals per order, plus hypothesis and reference lengths."""
    if len(hypotheses) != len(references):
        raise PairingError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise PairingError("no sentence pairs")
    matches, totals = [0] * max_n, [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = _tokens(hyp), _tokens(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def bleu(hypotheses, references, max_n: int = 4) -> float:
    """Corpus BLEU on 0..100 without smoothing: 0 as soon as any order has no match."""
    matches, totals, c, r = bleu_stats(hypotheses, references, max_n)
    if c == 0 or any(m == 0 for m in matches):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p)


def bucket_fmeasure(hypotheses, references, train_vocab: Vocabulary,
                    thresholds: tuple[int, int] = (100, 1000)) -> dict[str, float | None]:
    """Word F-measure per training-frequency bucket.

    Matches are clipped per sentence (min of hypothesis and reference counts).
    Words absent from ``train_vocab`` have frequency 0 and fall in ``low``.
    Buckets with no reference occurrence map to ``None``.
    """
    if len(hypotheses) != len(references):
        raise PairingError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    low, high = thresholds
    cache: dict[str, str] = {}

    def bucket(word: str) -> str:
        if word not in cache:
            b = frequency_bucket(train_vocab, word, low, high)
            cache[word] = "low" if b == "unknown" else b
        return cache[word]

    matched = dict.fromkeys(BUCKETS, 0)
    hyp_total = dict.fromkeys(BUCKETS, 0)
    ref_total = dict.fromkeys(BUCKETS, 0)
    for hyp, ref in zip(hypotheses, references):
        hc, rc = Counter(_tokens(hyp)), Counter(_tokens(ref))
        for word in hc.keys() | rc.keys():
            for b in ("all", bucket(word)):
                matched[b] += min(hc[word], rc[word])
                hyp_total[b] += hc[word]
                ref_total[b] += rc[word]
    out: dict[str, float | None] = {}
    for b in BUCKETS:
        if ref_total[b] == 0:
            out[b] = None
            continue
        p = matched[b] / hyp_total[b] if hyp_total[b] else 0.0
        rec = matched[b] / ref_total[b]
        out[b] = 2 * p * rec / (p + rec) if p + rec > 0 else 0.0
    return out


def distance_from_embeddings(src: np.ndarray, tgt: np.ndarray) -> float:
    """sqrt(sum_i ||src_i - tgt_i||^2)."""
    src, tgt = np.asarray(src, dtype=np.float64), np.asarray(tgt, dtype=np.float64)
    if src.shape != tgt.shape:
        raise PairingError(f"embedding shapes differ: {src.shape} vs {tgt.shape}")
    return float(np.sqrt(np.sum((src - tgt) ** 2)))


def representation_distance(model, vocab: Vocabulary, src_sentences: Sequence[Sentence],
                            tgt_sentences: Sequence[Sentence]) -> float:
    """Summed (not averaged) cross-lingual distance over a parallel subset, so it
    grows with the subset size; callers should report the size alongside."""
    from .seq2seq import sentence_embeddings

    if len(src_sentences) != len(tgt_sentences):
        raise PairingError(f"{len(src_sentences)} source vs {len(tgt_sentences)} target sentences")
    if len(src_sentences) > MAX_DISTANCE_SUBSET:
        raise ParameterError(f"subset larger than {MAX_DISTANCE_SUBSET}; pick a subset first")
    if src_sentences is tgt_sentences or list(src_sentences) == list(tgt_sentences):
        return 0.0
    return distance_from_embeddings(sentence_embeddings(model, vocab, src_sentences),
                                    sentence_embeddings(model, vocab, tgt_sentences))


def distance_subset(n_total: int, size: int = MAX_DISTANCE_SUBSET, seed: int = 0) -> np.ndarray:
    """Sorted indices of a seeded random subset of at most ``size`` sentences."""
    if n_total <= size:
        return np.arange(n_total)
    return np.sort(np.random.default_rng(seed).choice(n_total, size=size, replace=False))


@dataclass(frozen=True)
class RunComparison:
    steps_a: int | None
    steps_b: int | None
    threshold: float

    @property
    def ratio(self) -> float | None:
        if self.steps_a is None or self.steps_b is None:
            return None
        return self.steps_a / self.steps_b


def compare_runs(log_a: TrainLog, log_b: TrainLog, threshold: float, window: int = 10) -> RunComparison:
    return RunComparison(steps_to_threshold(log_a, threshold, window),
                         steps_to_threshold(log_b, threshold, window), threshold)


@dataclass
class MetricReport:
    bleu: float | None = None
    f_all: float | None = None
    f_high: float | None = None
    f_mid: float | None = None
    f_low: float | None = None
    distance: float | None = None
    distance_subset: int | None = None
    steps_to_threshold_a: int | None = None
    steps_to_threshold_b: int | None = None
    ratio: float | None = None
    corpus_id: str = ""
    model_id: str = ""
    seeds: str = ""
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.bleu is not None and not 0.0 <= self.bleu <= 100.0:
            raise ParameterError(f"bleu {self.bleu} outside [0, 100]")
        for name in ("f_all", "f_high", "f_mid", "f_low"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name} {v} outside [0, 1]")
        if self.distance is not None and self.distance < 0:
            raise ParameterError("distance must be non-negative")

    def set_buckets(self, f: dict[str, float | None]) -> None:
        for b in BUCKETS:
            setattr(self, f"f_{b}", f.get(b))

    def to_text(self) -> str:
        lines = []
        for fld in fields(self):
            if fld.name == "extra":
                continue
            value = getattr(self, fld.name)
            if value is None:
                text = "none"
            elif isinstance(value, str):
                text = value
            else:
                text = repr(value)
            lines.append(f"{fld.name} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        kinds = {f.name: f for f in fields(cls)}
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, raw = line.partition(" = ")
            if key not in kinds:
                raise ParameterError(f"unknown report key {key!r}")
            if key in ("corpus_id", "model_id", "seeds"):
                values[key] = raw
            elif raw == "none":
                values[key] = None
            elif key in ("distance_subset", "steps_to_threshold_a", "steps_to_threshold_b"):
                values[key] = int(raw)
            else:
                values[key] = float(raw)
        return cls(**values)

    def format_row(self) -> str:
        """Bucket F-measures on the x100 scale, e.g. ``All 63.2 High 68.7 Mid 58.4 Low 48.6``."""
        cells = []
        for b in BUCKETS:
            v = getattr(self, f"f_{b}")
            cells.append(f"{b.capitalize()} {'-' if v is None else format(100 * v, '.1f')}")
        return " ".join(cells)
