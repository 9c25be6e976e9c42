"""End-to-end orchestration over a run directory.

Layout of a run directory::

    config.ini                  effective configuration
    data/{train,test}.{src,tgt} synthetic data (when no data paths are configured)
    data/gold.tsv               gold cipher lexicon of the synthetic data
    vocab.tsv                   shared vocabulary
    emb.src.vec, emb.tgt.vec    in-domain word embeddings
    lexicon.src-tgt.tsv, lexicon.tgt-src.tsv
    stage1.ckpt, stage2.ckpt    checkpoints at stage boundaries
    stage1.log, stage2.log      "step stage objective loss lr" records
    report.txt                  metric report
    manifest.json               artifact index
"""
from __future__ import annotations

import json
import logging
import warnings
from pathlib import Path

from .align import TranslationLexicon, extract_lexicon, default_seed, seed_lexicon, self_learn
from .config import RunConfig
from .corpus import Corpus, Vocabulary, build_vocab, gen_cipher_pair, load_parallel, save_parallel
from .embed import EmbeddingMatrix, load_embeddings, normalize, save_embeddings, train_sgns
from .errors import CsrError, DegenerateAlignmentWarning
from .evaluation import MetricReport, bleu, bucket_fmeasure, distance_subset, representation_distance
from .noise import make_restore_stream, write_restore_tsv
from .pipeline import TrainLog, final_smoothed_loss, run_stage1, run_stage2, steps_to_threshold
from .seq2seq import decode, init_model, load_checkpoint

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


class Manifest:
    """Artifact index; written after every step so a failed run leaves a partial manifest."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.path = self.out / MANIFEST
        self.data = json.loads(self.path.read_text()) if self.path.exists() else {"artifacts": {}}
        self.data["status"] = "running"

    @staticmethod
    def read(out: Path) -> dict:
        """Manifest contents as written, without marking the run as running."""
        return json.loads((Path(out) / MANIFEST).read_text())

    def record(self, kind: str, *names: str) -> None:
        self.data["artifacts"][kind] = list(names)
        self.save()

    def get(self, kind: str) -> list[str]:
        return self.data["artifacts"].get(kind, [])

    def set(self, key: str, value) -> None:
        self.data[key] = value
        self.save()

    def save(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


def write_config_echo(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_text(), encoding="utf-8")


def gen_synth(cfg: RunConfig, out: Path) -> dict[str, str]:
    """Write cipher train/test corpora and the gold lexicon under ``out/data``."""
    d = cfg.data
    data_dir = Path(out) / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    n_total = d.synth_sentences + d.synth_test_sentences
    corpus, gold = gen_cipher_pair(d.synth_seed, d.synth_vocab, n_total, (d.synth_min_len, d.synth_max_len),
                                   context_strength=d.synth_context)
    train = Corpus(corpus.pairs[: d.synth_sentences], "train")
    test = Corpus(corpus.pairs[d.synth_sentences:], "test")
    save_parallel(train, data_dir / "train.src", data_dir / "train.tgt")
    if len(test):
        save_parallel(test, data_dir / "test.src", data_dir / "test.tgt")
    with open(data_dir / "gold.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for src, tgt in gold.items():
            fh.write(f"{src}\t{tgt}\n")
    return gold


def _data_paths(cfg: RunConfig, out: Path):
    d = cfg.data
    if d.src_path is None:
        base = Path(out) / "data"
        if not (base / "train.src").exists():
            if cfg.src_lang.code != "SRC" or cfg.tgt_lang.code != "TGT":
                raise FileNotFoundError("no data paths configured and no synthetic data in the run directory")
            gen_synth(cfg, out)
        test = (base / "test.src", base / "test.tgt") if (base / "test.src").exists() else (None, None)
        return (base / "train.src", base / "train.tgt") + test
    return (cfg.path(d.src_path), cfg.path(d.tgt_path), cfg.path(d.test_src_path), cfg.path(d.test_tgt_path))


def load_data(cfg: RunConfig, out: Path) -> tuple[Corpus, Corpus | None]:
    src, tgt, test_src, test_tgt = _data_paths(cfg, out)
    train = load_parallel(src, tgt, cfg.src_lang, cfg.tgt_lang, "train", dedup=cfg.data.dedup)
    test = None
    if test_src is not None and test_tgt is not None:
        test = load_parallel(test_src, test_tgt, cfg.src_lang, cfg.tgt_lang, "test")
    return train, test


def load_gold(out: Path) -> dict[str, str] | None:
    path = Path(out) / "data" / "gold.tsv"
    if not path.exists():
        return None
    return dict(line.split("\t") for line in path.read_text(encoding="utf-8").splitlines() if line)


def shared_vocab(corpus: Corpus, out: Path) -> Vocabulary:
    vocab = build_vocab(corpus, "both")
    vocab.to_tsv(Path(out) / "vocab.tsv")
    return vocab


def induce(cfg: RunConfig, corpus: Corpus, out: Path,
           manifest: Manifest | None = None) -> tuple[TranslationLexicon, TranslationLexicon, dict]:
    """Embeddings per side, self-learning alignment, top-k lexicons in both directions."""
    out = Path(out)
    sgns = cfg.sgns_config()
    E_x = train_sgns(corpus.sources(), sgns)
    E_y = train_sgns(corpus.targets(), sgns)
    save_embeddings(E_x, out / "emb.src.vec")
    save_embeddings(E_y, out / "emb.tgt.vec")
    X, Y = normalize(E_x), normalize(E_y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateAlignmentWarning)
        if cfg.align.seed_method == "auto":
            seed = default_seed(X, Y)
        else:
            seed = seed_lexicon(X, Y, cfg.align.seed_method)
        result = self_learn(X, Y, seed, max_iter=cfg.align.max_iter, retrieval=cfg.align.retrieval,
                            neighborhood=cfg.align.neighborhood)
    mapped = EmbeddingMatrix(X.words, X.vectors @ result.W, X.counts)
    k = min(cfg.align.k, len(X), len(Y))
    fwd, bwd = extract_lexicon(mapped, Y, k, cfg.align.retrieval, cfg.align.neighborhood,
                               corpus.src_lang, corpus.tgt_lang)
    fwd.save_tsv(out / "lexicon.src-tgt.tsv")
    bwd.save_tsv(out / "lexicon.tgt-src.tsv")
    summary = {"iterations": result.iterations, "converged": result.converged,
               "objective": result.objective, "seed_pairs": len(seed)}
    gold = load_gold(out) if cfg.data.src_path is None else None
    if gold:
        summary["precision_at_1"] = fwd.precision_at_1(gold)
    if manifest is not None:
        manifest.record("embeddings", "emb.src.vec", "emb.tgt.vec")
        manifest.record("lexicons", "lexicon.src-tgt.tsv", "lexicon.tgt-src.tsv")
        manifest.set("alignment", summary)
    return fwd, bwd, summary


def load_lexicons(out: Path) -> tuple[TranslationLexicon, TranslationLexicon] | None:
    out = Path(out)
    paths = out / "lexicon.src-tgt.tsv", out / "lexicon.tgt-src.tsv"
    if not all(p.exists() for p in paths):
        return None
    return TranslationLexicon.load_tsv(paths[0]), TranslationLexicon.load_tsv(paths[1])


def corrupt(cfg: RunConfig, corpus: Corpus, lexicons, out: Path) -> Path:
    """Dump one epoch of the restore stream as ``side<TAB>input<TAB>target``."""
    stream = make_restore_stream(corpus, lexicons[0], lexicons[1], cfg.noise_config(),
                                 cfg.plan.batch_size, epochs=1)
    pairs = [p for batch in stream for p in batch]
    path = Path(out) / "corrupted.tsv"
    write_restore_tsv(pairs, path)
    return path


def train(cfg: RunConfig, corpus: Corpus, vocab: Vocabulary, lexicons, out: Path,
          manifest: Manifest | None = None):
    out = Path(out)
    plan = cfg.stage_plan()
    model = init_model(cfg.model_config(len(vocab)))
    lex_src, lex_tgt = lexicons if lexicons is not None else (None, None)
    model, log1 = run_stage1(model, corpus, vocab, lex_src, lex_tgt, plan, cfg.noise_config(), out / "stage1.ckpt")
    log1.save(out / "stage1.log")
    model, log2 = run_stage2(model, corpus, vocab, plan, out / "stage2.ckpt")
    log2.save(out / "stage2.log")
    for stage, log in ((1, log1), (2, log2)):
        logger.info("stage %d: %d steps in %.1fs", stage, len(log), log.wall_clock.get(stage, 0.0))
    if manifest is not None:
        manifest.record("vocab", "vocab.tsv")
        manifest.record("checkpoints", "stage1.ckpt", "stage2.ckpt")
        manifest.record("logs", "stage1.log", "stage2.log")
    return model, log1, log2


def evaluate(cfg: RunConfig, model, vocab: Vocabulary, train_corpus: Corpus, test: Corpus | None, out: Path,
             manifest: Manifest | None = None, log: TrainLog | None = None) -> MetricReport:
    out = Path(out)
    eval_corpus = test if test is not None and len(test) else train_corpus
    refs = eval_corpus.targets()
    hyps = [decode(model, vocab, p.source, eval_corpus.tgt_lang, cfg.eval.beam, cfg.eval.max_decode_len,
                   cfg.eval.length_penalty) for p in eval_corpus.pairs]
    with open(out / "hypotheses.txt", "w", encoding="utf-8", newline="\n") as fh:
        for h in hyps:
            fh.write(h.text() + "\n")
    target_vocab = build_vocab(train_corpus, "target")
    report = MetricReport(bleu=bleu(hyps, refs), corpus_id=eval_corpus.id, model_id="stage2.ckpt",
                          seeds=f"data={cfg.plan.data_seed} model={cfg.plan.model_seed}")
    report.set_buckets(bucket_fmeasure(hyps, refs, target_vocab,
                                       (cfg.eval.low_threshold, cfg.eval.high_threshold)))
    idx = distance_subset(len(eval_corpus), cfg.eval.distance_subset, cfg.plan.data_seed)
    report.distance = representation_distance(model, vocab, [eval_corpus.pairs[i].source for i in idx],
                                              [eval_corpus.pairs[i].target for i in idx])
    report.distance_subset = len(idx)
    if log is not None and log.stage(2):
        threshold = final_smoothed_loss(log, cfg.eval.smoothing_window)
        report.steps_to_threshold_a = steps_to_threshold(log, threshold, cfg.eval.smoothing_window)
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    if manifest is not None:
        manifest.record("hypotheses", "hypotheses.txt")
        manifest.record("report", "report.txt")
    return report


def run_two_stage(cfg: RunConfig, out) -> dict:
    """embed -> align -> stage 1 -> stage 2 -> eval; returns the manifest.

    Any failure marks the manifest ``failed`` and re-raises.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_config_echo(cfg, out)
    manifest = Manifest(out)
    manifest.record("config", "config.ini")
    try:
        corpus, test = load_data(cfg, out)
        vocab = shared_vocab(corpus, out)
        lexicons = None
        if cfg.plan.stage1_steps > 0:
            fwd, bwd, _ = induce(cfg, corpus, out, manifest)
            lexicons = (fwd, bwd)
        model, log1, log2 = train(cfg, corpus, vocab, lexicons, out, manifest)
        evaluate(cfg, model, vocab, corpus, test, out, manifest, log2)
    except (CsrError, OSError) as exc:
        manifest.set("status", f"failed: {type(exc).__name__}: {exc}")
        raise
    manifest.set("status", "complete")
    return manifest.data


def reload_for_eval(out: Path) -> tuple:
    """Model, vocabulary and stage-2 log from a finished run directory."""
    out = Path(out)
    ckpts = Manifest.read(out)["artifacts"].get("checkpoints") if (out / MANIFEST).exists() else None
    ckpt = ckpts[-1] if ckpts else "stage2.ckpt"
    model = load_checkpoint(out / ckpt)
    vocab = Vocabulary.from_tsv(out / "vocab.tsv")
    log_path = out / "stage2.log"
    log = TrainLog.load(log_path) if log_path.exists() else None
    return model, vocab, log


def embeddings_from_run(out: Path) -> tuple[EmbeddingMatrix, EmbeddingMatrix]:
    out = Path(out)
    return load_embeddings(out / "emb.src.vec"), load_embeddings(out / "emb.tgt.vec")
