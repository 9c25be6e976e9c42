"""Self-learning orthogonal mapping between two embedding spaces and
top-k translation lexicon extraction."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import LanguageTag
from .embed import EmbeddingMatrix, normalize
from .errors import DegenerateAlignmentWarning, FormatError, ParameterError, SeedingError

DEFAULT_INDUCTION_VOCAB = 20000


@dataclass(frozen=True)
class SeedLexicon:
    pairs: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.pairs)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        arr = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        return arr[:, 0], arr[:, 1]


@dataclass
class AlignmentResult:
    W: np.ndarray
    final_lexicon: SeedLexicon
    iterations: int
    objective: float
    converged: bool
    history: list[float] = field(default_factory=list)


@dataclass
class TranslationLexicon:
    """Ranked cross-lingual neighbours for one direction (src_lang -> tgt_lang)."""

    src_lang: LanguageTag
    tgt_lang: LanguageTag
    entries: dict[str, list[tuple[str, float]]]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def neighbors(self, word: str, k: int | None = None) -> list[str]:
        ranked = self.entries.get(word, [])
        return [w for w, _ in (ranked if k is None else ranked[:k])]

    def top1(self) -> dict[str, str]:
        return {w: ranked[0][0] for w, ranked in self.entries.items() if ranked}

    def precision_at_1(self, gold: dict[str, str]) -> float:
        keys = [w for w in self.entries if w in gold]
        if not keys:
            return 0.0
        top = self.top1()
        return sum(top.get(w) == gold[w] for w in keys) / len(keys)

    def save_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# direction: {self.src_lang.code}->{self.tgt_lang.code}\n")
            for word, ranked in self.entries.items():
                for tgt, score in ranked:
                    fh.write(f"{word}\t{tgt}\t{score!r}\n")

    @classmethod
    def load_tsv(cls, path) -> "TranslationLexicon":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("# direction:"):
            raise FormatError(f"{path}: missing '# direction: XX->YY' header")
        src, _, tgt = lines[0].split(":", 1)[1].strip().partition("->")
        entries: dict[str, list[tuple[str, float]]] = {}
        for n, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{n}: expected 3 tab-separated fields")
            entries.setdefault(parts[0], []).append((parts[1], float(parts[2])))
        return cls(LanguageTag(src), LanguageTag(tgt), entries)


def _is_numeral(word: str) -> bool:
    return word.isascii() and word.isdigit()


def _sqrt_similarity(X: np.ndarray) -> np.ndarray:
    u, s, _ = np.linalg.svd(X, full_matrices=False)
    return (u * s) @ u.T


def _unit_center_unit(M: np.ndarray) -> np.ndarray:
    M = M / np.maximum(np.linalg.norm(M, axis=1, keepdims=True), 1e-12)
    M = M - M.mean(axis=0)
    return M / np.maximum(np.linalg.norm(M, axis=1, keepdims=True), 1e-12)


def seed_lexicon(E_x: EmbeddingMatrix, E_y: EmbeddingMatrix, method: str = "identical_strings",
                 max_rows: int = 4000) -> SeedLexicon:
    """Initial dictionary.

    ``similarity_init`` compares each word's sorted intra-lingual similarity
    profile (square root of the Gram matrix, rows sorted) across languages,
    which needs no shared surface forms; the seed is the union of forward and
    backward nearest neighbours over the ``max_rows`` most frequent words.
    """
    if method == "identical_strings":
        pairs = [(i, E_y.index[w]) for i, w in enumerate(E_x.words) if w in E_y.index]
    elif method == "numerals":
        pairs = [(i, E_y.index[w]) for i, w in enumerate(E_x.words)
                 if _is_numeral(w) and w in E_y.index]
    elif method == "similarity_init":
        n = min(len(E_x), len(E_y), max_rows)
        xs = np.sort(_sqrt_similarity(E_x.vectors[:n]), axis=1)
        ys = np.sort(_sqrt_similarity(E_y.vectors[:n]), axis=1)
        sim = _unit_center_unit(xs) @ _unit_center_unit(ys).T
        fwd = np.argmax(sim, axis=1)
        bwd = np.argmax(sim, axis=0)
        pairs = sorted({(i, int(fwd[i])) for i in range(n)} | {(int(bwd[j]), j) for j in range(n)})
    else:
        raise ParameterError(f"unknown seeding method {method!r}")
    if not pairs:
        raise SeedingError(f"seeding method {method!r} produced no pairs")
    return SeedLexicon(tuple(pairs))


def default_seed(E_x: EmbeddingMatrix, E_y: EmbeddingMatrix) -> SeedLexicon:
    """numerals ∪ identical_strings, falling back to similarity_init when empty."""
    pairs = set()
    for method in ("numerals", "identical_strings"):
        try:
            pairs |= set(seed_lexicon(E_x, E_y, method).pairs)
        except SeedingError:
            pass
    if pairs:
        return SeedLexicon(tuple(sorted(pairs)))
    return seed_lexicon(E_x, E_y, "similarity_init")


def _fix_signs(u: np.ndarray, vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, vt * signs[:, None]


def procrustes(E_x, E_y, seed: SeedLexicon) -> np.ndarray:
    """Orthogonal W minimising ||X_seed W - Y_seed||_F, i.e. W = U Vᵀ of svd(X_seedᵀ Y_seed)."""
    X = E_x.vectors if isinstance(E_x, EmbeddingMatrix) else np.asarray(E_x)
    Y = E_y.vectors if isinstance(E_y, EmbeddingMatrix) else np.asarray(E_y)
    src, tgt = seed.arrays()
    if len(src) == 0:
        raise SeedingError("empty seed lexicon")
    M = X[src].T @ Y[tgt]
    u, s, vt = np.linalg.svd(M)
    if s[-1] <= s[0] * 1e-10:
        warnings.warn(f"cross-covariance is rank deficient ({len(src)} seed pairs, dim {M.shape[0]})",
                      DegenerateAlignmentWarning, stacklevel=2)
    u, vt = _fix_signs(u, vt)
    return u @ vt


def topk_mean(sim: np.ndarray, k: int, axis: int) -> np.ndarray:
    k = min(k, sim.shape[axis])
    part = -np.partition(-sim, k - 1, axis=axis)
    part = part[:, :k] if axis == 1 else part[:k, :]
    return part.mean(axis=axis)


def csls_scores(sim: np.ndarray, neighborhood: int = 10, penalize: bool = True) -> np.ndarray:
    """Cross-domain similarity local scaling of a similarity matrix.

    With ``penalize=False`` the hub penalties are dropped and the result
    ranks identically to ``sim``.
    """
    if not penalize:
        return 2.0 * sim
    r_src = topk_mean(sim, neighborhood, axis=1)
    r_tgt = topk_mean(sim, neighborhood, axis=0)
    return 2.0 * sim - r_src[:, None] - r_tgt[None, :]


def _scores(sim: np.ndarray, retrieval: str, neighborhood: int) -> np.ndarray:
    if retrieval == "dot":
        return sim
    if retrieval == "csls":
        return csls_scores(sim, neighborhood)
    raise ParameterError(f"unknown retrieval {retrieval!r}")


def _mutual_nn(scores: np.ndarray) -> tuple[tuple[int, int], ...]:
    fwd = np.argmax(scores, axis=1)
    bwd = np.argmax(scores, axis=0)
    return tuple((i, int(fwd[i])) for i in range(scores.shape[0]) if bwd[fwd[i]] == i)


def self_learn(E_x: EmbeddingMatrix, E_y: EmbeddingMatrix, seed: SeedLexicon, max_iter: int = 20,
               retrieval: str = "csls", neighborhood: int = 10,
               induction_vocab: int = DEFAULT_INDUCTION_VOCAB) -> AlignmentResult:
    """Alternate Procrustes with mutual-nearest-neighbour dictionary induction.

    Stops when the induced dictionary equals the one it was fitted on, or at
    ``max_iter``.  The mapping with the best mean dot similarity over its
    induced pairs is returned.
    """
    if max_iter < 1:
        raise ParameterError("max_iter must be at least 1")
    X, Y = E_x.vectors, E_y.vectors
    nx, ny = min(len(E_x), induction_vocab), min(len(E_y), induction_vocab)
    lexicon = seed
    best = None
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        with warnings.catch_warnings():
            if it > 1:
                warnings.simplefilter("ignore", DegenerateAlignmentWarning)
            W = procrustes(X, Y, lexicon)
        sim = (X[:nx] @ W) @ Y[:ny].T
        induced = SeedLexicon(_mutual_nn(_scores(sim, retrieval, neighborhood)))
        src, tgt = induced.arrays()
        objective = float(sim[src, tgt].mean()) if len(src) else -np.inf
        history.append(objective)
        if best is None or objective > best.objective:
            best = AlignmentResult(W, induced, it, objective, False)
        if set(induced.pairs) == set(lexicon.pairs):
            converged = True
            break
        if len(induced) == 0:
            break
        lexicon = induced
    best.iterations = it
    best.converged = converged
    best.history = history
    return best


def extract_lexicon(E_x_mapped: EmbeddingMatrix, E_y: EmbeddingMatrix, k: int = 4,
                    retrieval: str = "csls", neighborhood: int = 10,
                    src_lang: LanguageTag = LanguageTag("SRC"),
                    tgt_lang: LanguageTag = LanguageTag("TGT"),
                    ) -> tuple[TranslationLexicon, TranslationLexicon]:
    """Top-k neighbours in both directions; ties go to the lower target index."""
    if not 1 <= k <= min(len(E_x_mapped), len(E_y)):
        raise ParameterError(f"k={k} outside [1, {min(len(E_x_mapped), len(E_y))}]")
    sim = E_x_mapped.vectors @ E_y.vectors.T
    forward = _scores(sim, retrieval, neighborhood)
    backward = _scores(sim.T.copy(), retrieval, neighborhood)

    def ranked(scores, src_words, tgt_words):
        order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
        return {w: [(tgt_words[j], float(scores[i, j])) for j in order[i]]
                for i, w in enumerate(src_words)}

    return (TranslationLexicon(src_lang, tgt_lang, ranked(forward, E_x_mapped.words, E_y.words)),
            TranslationLexicon(tgt_lang, src_lang, ranked(backward, E_y.words, E_x_mapped.words)))


def induce_lexicon(E_x: EmbeddingMatrix, E_y: EmbeddingMatrix, k: int = 4, retrieval: str = "csls",
                   max_iter: int = 20, src_lang: LanguageTag = LanguageTag("SRC"),
                   tgt_lang: LanguageTag = LanguageTag("TGT"), seed_method: str | None = None):
    """Normalize, seed, self-learn and extract; returns (forward, backward, AlignmentResult)."""
    X = normalize(E_x)
    Y = normalize(E_y)
    seed = default_seed(X, Y) if seed_method is None else seed_lexicon(X, Y, seed_method)
    result = self_learn(X, Y, seed, max_iter=max_iter, retrieval=retrieval)
    mapped = EmbeddingMatrix(X.words, X.vectors @ result.W, X.counts)
    fwd, bwd = extract_lexicon(mapped, Y, k=k, retrieval=retrieval, src_lang=src_lang, tgt_lang=tgt_lang)
    return fwd, bwd, result
