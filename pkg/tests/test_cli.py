import subprocess
import sys

import pytest

from csrlab import cli, runner
from csrlab.errors import DivergenceError
from csrlab.evaluation import MetricReport

SMALL = """\
[data]
synth_sentences = 200
synth_test_sentences = 12
synth_max_len = 8
[embed]
dim = 16
epochs = 2
[model]
dim = 16
ffn_dim = 32
layers = 1
[plan]
stage1_steps = 6
stage2_steps = 12
batch_size = 8
[eval]
beam = 2
max_decode_len = 10
"""


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.ini"
    path.write_text(SMALL, encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def finished_run(small_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    codes = [cli.main([cmd, "--config", str(small_config), "--out", str(out), "--quiet"])
             for cmd in ("gen-synth", "induce-lexicon", "train", "evaluate")]
    return out, codes


def test_end_to_end_sequence(finished_run):
    out, codes = finished_run
    assert codes == [0, 0, 0, 0]
    for name in ("config.ini", "data/train.src", "lexicon.src-tgt.tsv", "lexicon.tgt-src.tsv",
                 "stage1.ckpt", "stage2.ckpt", "stage1.log", "stage2.log", "report.txt", "hypotheses.txt"):
        assert (out / name).exists(), name
    report = MetricReport.from_text((out / "report.txt").read_text(encoding="utf-8"))
    assert 0.0 <= report.bleu <= 100.0 and report.distance >= 0.0
    manifest = runner.Manifest.read(out)
    assert manifest["status"] == "complete"
    assert manifest["artifacts"]["checkpoints"] == ["stage1.ckpt", "stage2.ckpt"]


def test_commands_are_idempotent(finished_run, small_config, tmp_path):
    out, _ = finished_run
    for cmd in ("gen-synth", "induce-lexicon", "train"):
        assert cli.main([cmd, "--config", str(small_config), "--out", str(tmp_path), "--quiet"]) == 0
    for name in ("data/train.src", "emb.src.vec", "lexicon.src-tgt.tsv", "stage1.log", "stage2.log",
                 "stage2.ckpt", "config.ini"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes(), name


def test_corrupt_writes_tsv(finished_run, small_config):
    out, _ = finished_run
    assert cli.main(["corrupt", "--config", str(small_config), "--out", str(out), "--quiet"]) == 0
    rows = (out / "corrupted.tsv").read_text(encoding="utf-8").splitlines()
    assert rows and all(len(r.split("\t")) == 3 for r in rows)
    assert {r.split("\t")[0] for r in rows} == {"source", "target"}
    assert rows[0].split("\t")[2].endswith("[SRC]")


def test_distance_and_compare(finished_run, small_config):
    out, _ = finished_run
    assert cli.main(["distance", "--config", str(small_config), "--out", str(out), "--quiet"]) == 0
    assert MetricReport.from_text((out / "distance.txt").read_text(encoding="utf-8")).distance >= 0
    log = str(out / "stage2.log")
    assert cli.main(["compare", log, log, "--config", str(small_config), "--out", str(out), "--quiet"]) == 0
    text = (out / "compare.txt").read_text(encoding="utf-8")
    assert "ratio = 1.0" in text.splitlines()


def test_compare_needs_two_logs(tmp_path, capsys):
    assert cli.main(["compare", "--out", str(tmp_path)]) == cli.EXIT_USAGE
    assert capsys.readouterr().err.strip().splitlines()[-1].startswith("error: usage:")


def test_unknown_command_is_usage_error(capsys):
    assert cli.main(["translate-everything"]) == cli.EXIT_USAGE
    err = capsys.readouterr().err
    assert "usage: csrlab" in err and "error: usage:" in err


def test_config_error_status(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[noise]\nratio = 1.5\n", encoding="utf-8")
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("error: config:")


def test_missing_input_is_io_error(tmp_path, capsys):
    cfg = tmp_path / "io.ini"
    cfg.write_text("[data]\nsrc_path = nope.src\ntgt_path = nope.tgt\n", encoding="utf-8")
    assert cli.main(["induce-lexicon", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_IO
    assert capsys.readouterr().err.startswith("error: io:")


def test_divergence_status(tmp_path, small_config, monkeypatch, capsys):
    def explode(*args, **kwargs):
        raise DivergenceError("non-finite loss nan at step 3")

    monkeypatch.setattr(runner, "train", explode)
    code = cli.main(["train", "--config", str(small_config), "--out", str(tmp_path), "--quiet"])
    assert code == cli.EXIT_DIVERGENCE
    assert capsys.readouterr().err.startswith("error: divergence:")


def test_out_directory_from_environment(tmp_path, small_config, monkeypatch):
    monkeypatch.setenv("CSRLAB_OUT", str(tmp_path / "env-run"))
    assert cli.main(["gen-synth", "--config", str(small_config), "--quiet", "--seed", "3"]) == 0
    assert (tmp_path / "env-run" / "data" / "train.src").exists()
    assert "data_seed = 3" in (tmp_path / "env-run" / "config.ini").read_text(encoding="utf-8")


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "csrlab", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "error: usage:" in proc.stderr
