"""Two-stage recipe: code-switching restore (stage 1), then supervised finetuning (stage 2)."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from .align import TranslationLexicon
from .corpus import Corpus, Vocabulary
from .errors import ParameterError
from .noise import NoiseConfig, RestorePair, make_restore_stream, sentence_rng, span_mask
from .seq2seq import (
    Batch,
    Seq2SeqModel,
    encode_source,
    encode_target,
    init_optim,
    make_batch,
    save_checkpoint,
    train_step,
)

logger = logging.getLogger(__name__)

REFERENCE_STAGE1_STEPS = 5000
REFERENCE_STAGE2_STEPS = 25000


@dataclass(frozen=True)
class StagePlan:
    stage1_steps: int = 500
    stage2_steps: int = 2500
    batch_size: int = 32
    eval_every: int = 0
    data_seed: int = 0
    model_seed: int = 0
    peak_lr: float = 1e-3
    warmup_fraction: float = 0.1
    label_smoothing: float = 0.2
    interleave_span_mask: bool = False

    def __post_init__(self):
        if self.stage1_steps < 0:
            raise ParameterError("stage1_steps must be >= 0")
        if self.stage2_steps < 1:
            raise ParameterError("stage2_steps must be >= 1")
        if self.batch_size < 1 or self.eval_every < 0:
            raise ParameterError("batch_size must be positive and eval_every non-negative")
        if self.peak_lr <= 0 or not 0 < self.warmup_fraction <= 1:
            raise ParameterError("peak_lr must be positive and warmup_fraction in (0, 1]")
        if not 0 <= self.label_smoothing < 1:
            raise ParameterError("label_smoothing must lie in [0, 1)")

    def warmup(self, steps: int) -> int:
        return max(1, round(self.warmup_fraction * steps))


@dataclass(frozen=True)
class LogRecord:
    step: int
    stage: int
    objective: str
    loss: float
    lr: float

    def line(self) -> str:
        return f"{self.step} {self.stage} {self.objective} {self.loss!r} {self.lr!r}"

    @classmethod
    def parse(cls, line: str) -> "LogRecord":
        step, stage, objective, loss, lr = line.split()
        return cls(int(step), int(stage), objective, float(loss), float(lr))


@dataclass
class TrainLog:
    records: list[LogRecord] = field(default_factory=list)
    wall_clock: dict[int, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def stage(self, stage: int) -> list[LogRecord]:
        return [r for r in self.records if r.stage == stage]

    def losses(self, stage: int = 2) -> list[float]:
        return [r.loss for r in self.stage(stage)]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in self.records:
                fh.write(rec.line() + "\n")

    @classmethod
    def load(cls, path) -> "TrainLog":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([LogRecord.parse(ln) for ln in lines if ln.strip()])


def _torch_rng(*keys: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(np.random.SeedSequence(list(keys)).generate_state(1)[0]))
    return g


def restore_batch(vocab: Vocabulary, pairs: Sequence[RestorePair], max_len: int) -> Batch:
    """Encoder reads the corrupted sentence plus its tag; decoder emits tag plus original."""
    return make_batch([(encode_source(vocab, p.input, max_len), encode_target(vocab, p.target, max_len))
                       for p in pairs], max_len)


def translation_batch(vocab: Vocabulary, pairs, max_len: int) -> Batch:
    """Source tag appended to X, target tag prepended to Y."""
    return make_batch([(encode_source(vocab, p.source, max_len), encode_target(vocab, p.target, max_len))
                       for p in pairs], max_len)


def stage2_batches(corpus: Corpus, batch_size: int, data_seed: int) -> Iterator[list]:
    """Endless shuffled epochs over the parallel pairs; depends only on ``data_seed``."""
    epoch = 0
    while True:
        order = sentence_rng(data_seed, 2, epoch).permutation(len(corpus))
        for b in range(0, len(order), batch_size):
            yield [corpus.pairs[i] for i in order[b:b + batch_size]]
        epoch += 1


def _span_mask_batches(corpus: Corpus, config: NoiseConfig, batch_size: int) -> Iterator[list[RestorePair]]:
    """Span-masking batches alternating source and target side, like the restore stream."""
    epoch = 0
    sides = (("source", corpus.sources()), ("target", corpus.targets()))
    while True:
        orders = [sentence_rng(config.seed, 3, epoch, side_id).permutation(len(corpus)) for side_id in (0, 1)]
        for b in range(0, len(corpus), batch_size):
            for side_id, ((side, sents), order) in enumerate(zip(sides, orders)):
                yield [span_mask(sents[i], config, sentence_rng(config.seed, 4, epoch, side_id, int(i)), side=side)
                       for i in order[b:b + batch_size]]
        epoch += 1


def run_stage1(model: Seq2SeqModel, corpus: Corpus, vocab: Vocabulary, lex_src: TranslationLexicon,
               lex_tgt: TranslationLexicon, plan: StagePlan, noise_config: NoiseConfig,
               checkpoint: str | Path | None = None) -> tuple[Seq2SeqModel, TrainLog]:
    """Alternate source-side and target-side code-switching restore batches.

    With ``plan.interleave_span_mask`` every other step is a span-masking
    denoising batch instead.
    """
    log = TrainLog()
    start = time.perf_counter()
    if plan.stage1_steps > 0:
        stream = make_restore_stream(corpus, lex_src, lex_tgt, noise_config, plan.batch_size)
        masks = _span_mask_batches(corpus, noise_config, plan.batch_size) if plan.interleave_span_mask else None
        optim = init_optim(model, plan.peak_lr, plan.warmup(plan.stage1_steps))
        rng = _torch_rng(plan.model_seed, 1)
        max_len = model.config.max_len
        for step in range(1, plan.stage1_steps + 1):
            if masks is not None and step % 2 == 0:
                pairs = next(masks)
                label = f"denoise-{pairs[0].side}"
            else:
                pairs = next(stream)
                label = f"restore-{pairs[0].side}"
            lr = optim.lr_at(optim.step + 1)
            model, optim, value = train_step(model, restore_batch(vocab, pairs, max_len), optim, "restore",
                                             plan.label_smoothing, rng)
            log.records.append(LogRecord(step, 1, label, value, lr))
    log.wall_clock[1] = time.perf_counter() - start
    if checkpoint is not None:
        save_checkpoint(model, checkpoint)
    return model, log


def run_stage2(model: Seq2SeqModel, corpus: Corpus, vocab: Vocabulary, plan: StagePlan,
               checkpoint: str | Path | None = None) -> tuple[Seq2SeqModel, TrainLog]:
    log = TrainLog()
    start = time.perf_counter()
    batches = stage2_batches(corpus, plan.batch_size, plan.data_seed)
    optim = init_optim(model, plan.peak_lr, plan.warmup(plan.stage2_steps))
    rng = _torch_rng(plan.model_seed, 2)
    for step in range(1, plan.stage2_steps + 1):
        lr = optim.lr_at(optim.step + 1)
        batch = translation_batch(vocab, next(batches), model.config.max_len)
        model, optim, value = train_step(model, batch, optim, "generation", plan.label_smoothing, rng)
        log.records.append(LogRecord(step, 2, "generation", value, lr))
        if plan.eval_every and step % plan.eval_every == 0:
            logger.info("stage 2 step %d loss %.4f", step, value)
    log.wall_clock[2] = time.perf_counter() - start
    if checkpoint is not None:
        save_checkpoint(model, checkpoint)
    return model, log


def smoothed(losses: Sequence[float], window: int = 10) -> np.ndarray:
    """Trailing mean over the last ``window`` values (fewer at the start)."""
    arr = np.asarray(losses, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(arr)])
    idx = np.arange(1, len(arr) + 1)
    lo = np.maximum(0, idx - window)
    return (csum[idx] - csum[lo]) / (idx - lo)


def steps_to_threshold(log: TrainLog, threshold: float, window: int = 10) -> int | None:
    """First stage-2 step whose trailing-window mean loss is <= threshold."""
    records = log.stage(2)
    if not records:
        raise ParameterError("log has no stage-2 records")
    values = smoothed([r.loss for r in records], window)
    hits = np.flatnonzero(values <= threshold)
    return int(records[hits[0]].step) if len(hits) else None


def final_smoothed_loss(log: TrainLog, window: int = 10) -> float:
    return float(smoothed(log.losses(2), window)[-1])
