"""``csrlab`` command line.

Exit status: 0 success, 1 other library error, 2 usage, 3 config, 4 I/O,
5 divergence.  Failures print one ``error: <category>: <message>`` line on
stderr.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import runner
from .config import RunConfig, parse_config
from .errors import ConfigError, CsrError, DivergenceError
from .evaluation import MetricReport, compare_runs, distance_subset, representation_distance
from .pipeline import TrainLog, final_smoothed_loss

COMMANDS = ("gen-synth", "induce-lexicon", "corrupt", "train", "evaluate", "distance", "compare")
EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGENCE = 0, 1, 2, 3, 4, 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: usage: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="csrlab", description="Two-stage code-switching restore laboratory.")
    p.add_argument("command", choices=COMMANDS, metavar="command", help=" | ".join(COMMANDS))
    p.add_argument("logs", nargs="*", help="for 'compare': two stage-2 log files")
    p.add_argument("--config", type=Path, help="configuration file ([section] / key = value)")
    p.add_argument("--out", type=Path, help="run directory (default: $CSRLAB_OUT or ./run)")
    p.add_argument("--seed", type=int, help="override data and model seeds")
    p.add_argument("--threshold", type=float, help="for 'compare': loss threshold (default: log B's final smoothed loss)")
    p.add_argument("--quiet", action="store_true")
    return p


def _lexicons(cfg: RunConfig, corpus, out: Path, manifest):
    lex = runner.load_lexicons(out)
    if lex is None:
        fwd, bwd, _ = runner.induce(cfg, corpus, out, manifest)
        lex = (fwd, bwd)
    return lex


def dispatch(command: str, cfg: RunConfig, out: Path, logs=(), threshold=None) -> int:
    out.mkdir(parents=True, exist_ok=True)
    runner.write_config_echo(cfg, out)
    manifest = runner.Manifest(out)
    manifest.record("config", "config.ini")
    if command == "gen-synth":
        runner.gen_synth(cfg, out)
        manifest.record("data", "data/train.src", "data/train.tgt", "data/test.src", "data/test.tgt",
                        "data/gold.tsv")
    elif command == "induce-lexicon":
        corpus, _ = runner.load_data(cfg, out)
        _, _, summary = runner.induce(cfg, corpus, out, manifest)
        logging.info("alignment: %s", summary)
    elif command == "corrupt":
        corpus, _ = runner.load_data(cfg, out)
        path = runner.corrupt(cfg, corpus, _lexicons(cfg, corpus, out, manifest), out)
        manifest.record("corrupted", path.name)
    elif command == "train":
        corpus, _ = runner.load_data(cfg, out)
        vocab = runner.shared_vocab(corpus, out)
        lex = _lexicons(cfg, corpus, out, manifest) if cfg.plan.stage1_steps > 0 else None
        runner.train(cfg, corpus, vocab, lex, out, manifest)
    elif command == "evaluate":
        corpus, test = runner.load_data(cfg, out)
        model, vocab, log = runner.reload_for_eval(out)
        report = runner.evaluate(cfg, model, vocab, corpus, test, out, manifest, log)
        logging.info("bleu %.2f  %s", report.bleu, report.format_row())
    elif command == "distance":
        corpus, test = runner.load_data(cfg, out)
        data = test if test is not None else corpus
        model, vocab, _ = runner.reload_for_eval(out)
        idx = distance_subset(len(data), cfg.eval.distance_subset, cfg.plan.data_seed)
        report = MetricReport(corpus_id=data.id, model_id="stage2.ckpt", distance_subset=len(idx),
                              distance=representation_distance(model, vocab, [data.pairs[i].source for i in idx],
                                                               [data.pairs[i].target for i in idx]))
        (out / "distance.txt").write_text(report.to_text(), encoding="utf-8")
        manifest.record("distance", "distance.txt")
    elif command == "compare":
        if len(logs) != 2:
            raise _UsageError("compare needs exactly two log files")
        log_a, log_b = TrainLog.load(logs[0]), TrainLog.load(logs[1])
        if threshold is None:
            threshold = final_smoothed_loss(log_b, cfg.eval.smoothing_window)
        cmp = compare_runs(log_a, log_b, threshold, cfg.eval.smoothing_window)
        report = MetricReport(steps_to_threshold_a=cmp.steps_a, steps_to_threshold_b=cmp.steps_b, ratio=cmp.ratio)
        (out / "compare.txt").write_text(report.to_text() + f"threshold = {threshold!r}\n", encoding="utf-8")
        manifest.record("compare", "compare.txt")
    manifest.set("status", "complete")
    return EXIT_OK


class _UsageError(Exception):
    pass


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = parse_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = args.out or Path(os.environ.get("CSRLAB_OUT", "run"))
        return dispatch(args.command, cfg, Path(out), args.logs, args.threshold)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except CsrError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
