import numpy as np
import pytest
import torch

from csrlab import pipeline
from csrlab.align import TranslationLexicon
from csrlab.corpus import Corpus, LanguageTag, ParallelPair, Sentence, build_vocab, gen_cipher_pair
from csrlab.errors import ParameterError
from csrlab.noise import NoiseConfig
from csrlab.pipeline import (
    REFERENCE_STAGE1_STEPS,
    REFERENCE_STAGE2_STEPS,
    LogRecord,
    StagePlan,
    TrainLog,
    final_smoothed_loss,
    run_stage1,
    run_stage2,
    smoothed,
    stage2_batches,
    steps_to_threshold,
    translation_batch,
)
from csrlab.seq2seq import ModelConfig, init_model, load_checkpoint

ZH, EN = LanguageTag("ZH"), LanguageTag("EN")


def small_setup(n=40, seed=0):
    corpus, gold = gen_cipher_pair(seed, vocab_size=12, n_sentences=n, len_range=(2, 5))
    vocab = build_vocab(corpus)
    inverse = {t: s for s, t in gold.items()}
    lex_src = TranslationLexicon(corpus.src_lang, corpus.tgt_lang, {s: [(t, 1.0)] for s, t in gold.items()})
    lex_tgt = TranslationLexicon(corpus.tgt_lang, corpus.src_lang, {t: [(s, 1.0)] for t, s in inverse.items()})
    return corpus, vocab, lex_src, lex_tgt


def tiny_model(vocab, seed=0, dropout=0.1):
    return init_model(ModelConfig(vocab_size=len(vocab), dim=16, layers=1, heads=2, ffn_dim=32,
                                  dropout=dropout, max_len=16, seed=seed))


def params(model):
    return {k: v.clone() for k, v in model.state_dict().items()}


def test_reference_step_ratio():
    assert REFERENCE_STAGE1_STEPS / (REFERENCE_STAGE1_STEPS + REFERENCE_STAGE2_STEPS) == pytest.approx(1 / 6)
    plan = StagePlan()
    assert plan.stage1_steps * 5 == plan.stage2_steps


def test_plan_validation():
    StagePlan(stage1_steps=0)
    with pytest.raises(ParameterError):
        StagePlan(stage2_steps=0)
    with pytest.raises(ParameterError):
        StagePlan(stage1_steps=-1)


def test_stage1_zero_steps_is_noop(tmp_path):
    corpus, vocab, ls, lt = small_setup()
    model = tiny_model(vocab)
    before = params(model)
    model, log = run_stage1(model, corpus, vocab, ls, lt, StagePlan(stage1_steps=0, stage2_steps=1),
                            NoiseConfig(), checkpoint=tmp_path / "s1.ckpt")
    assert len(log) == 0
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())
    assert (tmp_path / "s1.ckpt").exists()


def test_stage1_alternates_sides(tmp_path):
    corpus, vocab, ls, lt = small_setup()
    plan = StagePlan(stage1_steps=10, stage2_steps=1, batch_size=4)
    model, log = run_stage1(tiny_model(vocab), corpus, vocab, ls, lt, plan, NoiseConfig(), tmp_path / "s1.ckpt")
    assert [r.step for r in log.records] == list(range(1, 11))
    assert [r.objective for r in log.records] == ["restore-source", "restore-target"] * 5
    assert all(r.stage == 1 for r in log.records)
    assert log.records[0].lr > 0
    reloaded = load_checkpoint(tmp_path / "s1.ckpt")
    assert all(torch.equal(reloaded.state_dict()[k], v) for k, v in model.state_dict().items())


def test_stage1_can_interleave_span_masking():
    corpus, vocab, ls, lt = small_setup()
    plan = StagePlan(stage1_steps=4, stage2_steps=1, batch_size=4, interleave_span_mask=True)
    _, log = run_stage1(tiny_model(vocab), corpus, vocab, ls, lt, plan, NoiseConfig())
    assert [r.objective for r in log.records] == ["restore-source", "denoise-source",
                                                  "restore-target", "denoise-target"]


def test_translation_batch_tagging():
    corpus = Corpus((ParallelPair(Sentence.from_text("布什 与 沙龙 举行 了 会谈", ZH),
                                  Sentence.from_text("Bush held a talk with Sharon", EN)),))
    vocab = build_vocab(corpus)
    batch = translation_batch(vocab, corpus.pairs, 32)
    enc = batch.encoder_inputs[0].tolist()
    assert vocab.itos[enc[-1]] == "[ZH]"
    assert vocab.itos[batch.decoder_targets[0, 0]] == "[EN]"
    assert vocab.itos[batch.decoder_inputs[0, 1]] == "[EN]"


def test_stage2_is_reproducible_and_order_isolated(monkeypatch):
    corpus, vocab, ls, lt = small_setup()
    plan = StagePlan(stage1_steps=6, stage2_steps=8, batch_size=4)
    seen = []
    original = pipeline.translation_batch

    def recording(vocab_, pairs, max_len):
        seen[-1].append(tuple(pairs))
        return original(vocab_, pairs, max_len)

    monkeypatch.setattr(pipeline, "translation_batch", recording)
    logs = []
    for with_stage1 in (True, False, True):
        seen.append([])
        model = tiny_model(vocab)
        if with_stage1:
            model, _ = run_stage1(model, corpus, vocab, ls, lt, plan, NoiseConfig())
        _, log = run_stage2(model, corpus, vocab, plan)
        logs.append(log)
    assert seen[0] == seen[1] == seen[2]
    assert [r.line() for r in logs[0].records] == [r.line() for r in logs[2].records]
    assert [r.step for r in logs[1].records] == list(range(1, 9))


def test_stage2_batches_cover_epochs():
    corpus, *_ = small_setup(n=10)
    gen = stage2_batches(corpus, 3, data_seed=1)
    epoch = [p for _ in range(4) for p in next(gen)]
    assert sorted(epoch, key=corpus.pairs.index) == list(corpus.pairs)


def synthetic_log(losses, stage=2):
    return TrainLog([LogRecord(i + 1, stage, "generation", float(v), 1e-3) for i, v in enumerate(losses)])


def test_steps_to_threshold_hand_example():
    # trailing window-10 mean of 1 + 0.02 (32.4 - t) is 1 + 0.02 (36.9 - t): first <= 1 at t = 37
    log = synthetic_log([1 + 0.02 * (32.4 - t) for t in range(1, 81)])
    assert steps_to_threshold(log, 1.0) == 37
    assert steps_to_threshold(log, 0.0) is None


def test_smoothing_window_longer_than_log():
    values = [3.0, 2.0, 1.0]
    assert smoothed(values, window=10)[-1] == pytest.approx(2.0)
    assert final_smoothed_loss(synthetic_log(values)) == pytest.approx(2.0)
    with pytest.raises(ParameterError):
        steps_to_threshold(synthetic_log(values, stage=1), 1.0)


def test_log_roundtrip(tmp_path):
    log = synthetic_log([0.1 + 1e-17, 2 / 3])
    log.save(tmp_path / "log.txt")
    assert TrainLog.load(tmp_path / "log.txt").records == log.records
    assert (tmp_path / "log.txt").read_text().splitlines()[1] == "2 2 generation 0.6666666666666666 0.001"


@pytest.mark.slow
def test_cipher_corpus_is_learnable():
    """2000 stage-2 steps on the full cipher corpus.  Label smoothing is off so the
    logged loss is plain NLL (smoothing at 0.2 puts a floor well above 0.5)."""
    corpus, _ = gen_cipher_pair(0)
    vocab = build_vocab(corpus)
    model = init_model(ModelConfig(vocab_size=len(vocab), dropout=0.1, seed=0))
    plan = StagePlan(stage1_steps=0, stage2_steps=2000, batch_size=32, peak_lr=3e-3, label_smoothing=0.0)
    _, log = run_stage2(model, corpus, vocab, plan)
    assert final_smoothed_loss(log) < 0.5
