import csv
import io
import subprocess
import sys

import pytest

from snncompress.cli import main
from snncompress.modelfile import load_model


@pytest.fixture
def run(tiny_ini, tmp_path):
    out = tmp_path / "out"

    def _run(*args, config=True):
        argv = (["--config", str(tiny_ini)] if config else []) + ["--out-dir", str(out)] + list(args)
        return main(argv)

    _run.out = out
    return _run


def test_train_compress_deploy_flow(run, capsys):
    out = run.out
    assert run("train", "--output", str(out / "fp.snnc")) == 0
    assert run("compress", "cat", "--model", str(out / "fp.snnc"), "--quantize", "--output", str(out / "cat.snnc")) == 0
    net = load_model(out / "cat.snnc")
    assert net.provenance == ["fp32-train", "cat", "quantize-codebook"]
    capsys.readouterr()
    assert run("deploy-check", "--model", str(out / "cat.snnc"), "--profile", "truenorth-like") == 0
    assert "PASS" in capsys.readouterr().out
    assert run("deploy-check", "--model", str(out / "fp.snnc"), "--profile", "truenorth-like") == 1
    assert run("export-lut", "--model", str(out / "cat.snnc"), "--profile", "truenorth-like") == 0
    assert (out / "model.lut").is_file() and (out / "model.lut.json").is_file()
    assert run("export-lut", "--model", str(out / "fp.snnc"), "--profile", "truenorth-like") == 1


def test_prune_eval_and_report(run, capsys):
    out = run.out
    run("train", "--output", str(out / "fp.snnc"))
    for crit in ("fsc", "sca", "mag", "oracle"):
        assert run("prune", crit, "--model", str(out / "fp.snnc"), "--output", str(out / f"{crit}.snnc")) == 0
    assert (out / "prune_report.json").is_file()
    assert run("prune", "fsc", "--model", str(out / "fp.snnc"), "--ratio", "0.5", "--finetune",
               "--output", str(out / "ft.snnc")) == 0
    assert load_model(out / "ft.snnc").provenance[-2:] == ["fsc-prune", "finetune"]
    capsys.readouterr()
    assert run("eval", "--model", str(out / "fp.snnc"), "--repeats", "2") == 0
    text = capsys.readouterr().out
    assert "perf_acc" in text and "dr_acc" in text
    models = [str(out / f"{c}.snnc") for c in ("fsc", "sca", "mag")]
    assert run("report-dr", *models, "--repeats", "1") == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["model"] for r in rows] == ["fsc.snnc", "sca.snnc", "mag.snnc"]
    assert set(rows[0]) == {"model", "perf_acc", "perf_f1", "latency_s", "energy_mj", "size_mb", "dr_acc", "dr_f1"}
    assert (out / "report_dr.csv").read_text().count("\n") == 4


def test_compress_other_methods(run):
    out = run.out
    run("train", "--output", str(out / "fp.snnc"))
    assert run("compress", "ternary", "--model", str(out / "fp.snnc"), "--output", str(out / "t.snnc")) == 0
    assert load_model(out / "t.snnc").layers[0].mode == "ternary"
    assert run("compress", "cluster", "--output", str(out / "c.snnc")) == 0
    prov = load_model(out / "c.snnc").provenance
    assert prov[0] == "cluster:ann" and prov[-1] == "cluster"
    # ternary payload cannot enter a CAT stage
    assert run("compress", "cat", "--model", str(out / "t.snnc")) == 2


def test_pipeline_command(run):
    assert run("pipeline") == 0
    assert (run.out / "model.snnc").is_file() and (run.out / "metrics.csv").is_file()


def test_usage_errors(run, tmp_path, capsys):
    assert run("frobnicate") == 2
    assert "usage" in capsys.readouterr().err
    assert run() == 2
    assert run("eval", "--model", str(tmp_path / "missing.snnc")) == 2
    assert run("compress", "cat") == 2
    assert run("deploy-check", "--model", str(tmp_path / "missing.snnc"), "--profile", "x") == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nsed = 3\n")
    assert main(["--config", str(bad), "--out-dir", str(tmp_path), "train"]) == 2
    assert main(["--config", str(tmp_path / "nope.ini"), "train"]) == 2
    assert main(["--help"]) == 0


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "snncompress.cli", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 2
