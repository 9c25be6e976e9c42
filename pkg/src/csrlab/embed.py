"""Skip-gram with negative sampling, and the word2vec text format."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Sentence, ranked_words
from .errors import DegenerateCorpusError, FormatError, NormalizationError, ParameterError, ParseError

logger = logging.getLogger(__name__)


@dataclass
class EmbeddingMatrix:
    words: tuple[str, ...]
    vectors: np.ndarray
    counts: dict[str, int] | None = None
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.words = tuple(self.words)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.words):
            raise FormatError(f"{len(self.words)} words but vectors of shape {self.vectors.shape}")
        if self.vectors.shape[1] < 2:
            raise FormatError("embedding dimension must be at least 2")
        if not np.all(np.isfinite(self.vectors)):
            raise FormatError("non-finite embedding component")
        self.index = {w: i for i, w in enumerate(self.words)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.words)

    def __getitem__(self, word: str) -> np.ndarray:
        return self.vectors[self.index[word]]


@dataclass(frozen=True)
class SgnsConfig:
    dim: int = 64
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    min_count: int = 1
    seed: int = 1
    batch_size: int = 64
    shuffle: bool = True

    def __post_init__(self):
        for name in ("dim", "window", "negatives", "epochs", "min_count", "batch_size"):
            if getattr(self, name) < 1:
                raise ParameterError(f"SgnsConfig.{name} must be positive")
        if self.dim < 2:
            raise ParameterError("SgnsConfig.dim must be at least 2")
        if self.lr <= 0:
            raise ParameterError("SgnsConfig.lr must be positive")


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sgns_loss(center, context, negatives):
    """Negative-sampling loss for one (center, context, negatives) triple.

    ``center`` and ``context`` are D-vectors, ``negatives`` is K x D.
    """
    return -_log_sigmoid(center @ context) - np.sum(_log_sigmoid(-(negatives @ center)))


def sgns_grads(center, context, negatives):
    """Analytic gradients of :func:`sgns_loss` w.r.t. center, context and negatives."""
    g_pos = _sigmoid(center @ context) - 1.0
    g_neg = _sigmoid(negatives @ center)
    d_center = g_pos * context + g_neg @ negatives
    d_context = g_pos * center
    d_negatives = np.outer(g_neg, center)
    return d_center, d_context, d_negatives


def skipgram_pairs(sentences: Sequence[Sequence[int]], window: int) -> np.ndarray:
    """All (center, context) index pairs within ``window`` positions."""
    out = []
    for ids in sentences:
        n = len(ids)
        for i in range(n):
            for j in range(max(0, i - window), min(n, i + window + 1)):
                if j != i:
                    out.append((ids[i], ids[j]))
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def train_sgns(sentences: Sequence[Sentence], config: SgnsConfig = SgnsConfig(),
               loss_history: list | None = None) -> EmbeddingMatrix:
    """Train input vectors with minibatched SGD on the negative-sampling objective.

    Negatives are drawn from the unigram distribution raised to 0.75; the
    learning rate decays linearly to ``1e-4 * lr``.  Per-epoch mean losses
    are appended to ``loss_history`` when given.
    """
    counter = Counter(tok for s in sentences for tok in s.tokens)
    words = [w for w in ranked_words(counter) if counter[w] >= config.min_count]
    if not words:
        raise DegenerateCorpusError("no word survives min_count filtering")
    index = {w: i for i, w in enumerate(words)}
    encoded = [[index[t] for t in s.tokens if t in index] for s in sentences]
    pairs = skipgram_pairs(encoded, config.window)
    if len(pairs) == 0:
        raise DegenerateCorpusError("corpus yields no (center, context) pairs")

    rng = np.random.default_rng(config.seed)
    V, D, K = len(words), config.dim, config.negatives
    W = (rng.random((V, D)) - 0.5) / D
    C = np.zeros((V, D))
    freqs = np.array([counter[w] for w in words], dtype=np.float64) ** 0.75
    noise = freqs / freqs.sum()

    B = config.batch_size
    n_batches = -(-len(pairs) // B)
    total = n_batches * config.epochs
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs)) if config.shuffle else np.arange(len(pairs))
        epoch_loss = 0.0
        for b in range(n_batches):
            lr = config.lr * max(1e-4, 1.0 - step / total)
            step += 1
            batch = pairs[order[b * B:(b + 1) * B]]
            centers, contexts = batch[:, 0], batch[:, 1]
            negs = rng.choice(V, size=(len(batch), K), p=noise)
            w = W[centers]
            c = C[contexts]
            n = C[negs]
            s_pos = np.einsum("bd,bd->b", w, c)
            s_neg = np.einsum("bkd,bd->bk", n, w)
            epoch_loss += float(-(_log_sigmoid(s_pos).sum() + _log_sigmoid(-s_neg).sum()))
            g_pos = _sigmoid(s_pos) - 1.0
            g_neg = _sigmoid(s_neg)
            d_w = g_pos[:, None] * c + np.einsum("bk,bkd->bd", g_neg, n)
            d_c = g_pos[:, None] * w
            d_n = g_neg[:, :, None] * w[:, None, :]
            np.add.at(W, centers, -lr * d_w)
            np.add.at(C, contexts, -lr * d_c)
            np.add.at(C, negs.ravel(), -lr * d_n.reshape(-1, D))
        mean_loss = epoch_loss / len(pairs)
        logger.debug("sgns epoch %d loss %.5f", epoch + 1, mean_loss)
        if loss_history is not None:
            loss_history.append(mean_loss)
    return EmbeddingMatrix(tuple(words), W, {w: counter[w] for w in words})


def save_embeddings(emb: EmbeddingMatrix, path) -> None:
    """Write the word2vec text format; components use ``repr`` so reload is exact."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(emb)} {emb.dim}\n")
        for word, row in zip(emb.words, emb.vectors):
            fh.write(word + " " + " ".join(repr(float(x)) for x in row) + "\n")


def load_embeddings(path) -> EmbeddingMatrix:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: missing header")
    header = lines[0].split()
    try:
        V, D = int(header[0]), int(header[1])
        if len(header) != 2:
            raise ValueError
    except (ValueError, IndexError):
        raise FormatError(f"{path}: header must be 'V D', got {lines[0]!r}") from None
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != V:
        raise FormatError(f"{path}: header says {V} rows, found {len(rows)}")
    words, vectors = [], np.empty((V, D))
    for i, line in enumerate(rows):
        parts = line.rstrip().split(" ")
        if len(parts) != D + 1:
            raise FormatError(f"{path}:{i + 2}: expected {D} components, got {len(parts) - 1}")
        try:
            vectors[i] = [float(x) for x in parts[1:]]
        except ValueError:
            raise ParseError(f"{path}:{i + 2}: non-numeric component") from None
        words.append(parts[0])
    return EmbeddingMatrix(tuple(words), vectors)


def normalize(emb: EmbeddingMatrix, scheme: Sequence[str] = ("unit", "center", "unit")) -> EmbeddingMatrix:
    X = emb.vectors.copy()
    for step in scheme:
        if step == "unit":
            norms = np.linalg.norm(X, axis=1)
            if np.any(norms == 0):
                raise NormalizationError("zero-norm row cannot be unit-normalized")
            X /= norms[:, None]
        elif step == "center":
            X -= X.mean(axis=0)
        else:
            raise ParameterError(f"unknown normalization step {step!r}")
    return EmbeddingMatrix(emb.words, X, emb.counts)
