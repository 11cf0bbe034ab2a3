"""End-to-end CLI runs through main(argv)."""

import json

import pytest

from trispec.cli import main
from trispec.harness import HIST_SCHEMA, SWEEP_SCHEMA, TRACE_SCHEMA, read_trace_csv

FAST = ("-O", "max_new_tokens=4", "-O", "num_prompts=2")


def test_usage_errors_exit_2(capsys):
    assert main([]) == 2
    assert main(["bogus"]) == 2
    assert main(["train"]) == 2  # --out is required
    capsys.readouterr()


def test_run_writes_report_and_trace(tmp_path, capsys):
    rc = main(["run", "--out", str(tmp_path), "-O", "method=target_only", *FAST])
    assert rc == 0
    out = capsys.readouterr().out
    assert "report.json" in out and "trace.csv" in out

    data = json.loads((tmp_path / "report.json").read_text())
    assert data["run_id"] == "target_only-T0-seed0"
    assert data["report"]["N"] == 8
    assert data["config"]["method"] == "target_only"

    records = read_trace_csv(tmp_path / "trace.csv")
    assert len(records) == 8
    assert (tmp_path / "trace.csv").read_text().startswith(TRACE_SCHEMA)


def test_run_rejects_bad_overrides(capsys):
    assert main(["run", "-O", "beam_width=4"]) == 2
    assert main(["run", "-O", "no_equals_sign"]) == 2
    err = capsys.readouterr().err
    assert "error:" in err


def test_config_file_is_honored(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("method = sd\nmax_new_tokens = 4\nnum_prompts = 2\nseed = 3\n")
    rc = main(["run", "--config", str(cfg), "--out", str(tmp_path)])
    assert rc == 0
    capsys.readouterr()
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["run_id"] == "sd-T0-seed3"
    assert data["config"]["seed"] == 3
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2
    capsys.readouterr()


def test_train_then_run_from_saved_models(tmp_path, capsys):
    models = tmp_path / "models"
    assert main(["train", "--out", str(models)]) == 0
    for name in ("drafter.json", "proxy.json", "target.json"):
        assert (models / name).exists()

    outdir = tmp_path / "out"
    rc = main(["run", "--out", str(outdir), "-O", f"model_dir={models}", *FAST])
    assert rc == 0
    capsys.readouterr()
    data = json.loads((outdir / "report.json").read_text())
    assert data["report"]["N"] >= 8


def test_sweep_cli_writes_one_csv(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    rc = main(["sweep", "--grid", "lambda=0.0,1.01", "--out", str(out), *FAST])
    assert rc == 0
    assert "swept 2 points" in capsys.readouterr().out
    lines = out.read_text().splitlines()
    assert lines[0] == SWEEP_SCHEMA
    assert lines[1].startswith("lambda,")
    assert len(lines) == 2 + 2


def test_sweep_refuses_orders_axis(capsys):
    assert main(["sweep", "--grid", "orders=2,3"]) == 2
    assert "orders cannot be swept" in capsys.readouterr().err


def test_hist_cli_dumps_normalized_masses(tmp_path, capsys):
    out = tmp_path / "margins.dat"
    rc = main(["hist", "--out", str(out), "--positions", "50", "--bins", "10"])
    assert rc == 0
    capsys.readouterr()
    lines = out.read_text().splitlines()
    assert lines[0] == HIST_SCHEMA
    assert lines[1] == "# bin_mid match_mass mismatch_mass"
    rows = [tuple(float(v) for v in line.split()) for line in lines[2:]]
    assert len(rows) == 10
    total = sum(m + mm for _, m, mm in rows)
    assert total == pytest.approx(1.0, abs=1e-9)


def test_verify_selected_check(capsys):
    assert main(["verify", "lossless"]) == 0
    assert "[PASS] lossless" in capsys.readouterr().out
    assert main(["verify", "bogus"]) == 2
    assert "unknown check" in capsys.readouterr().err
