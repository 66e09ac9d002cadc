import json

import pytest

import cfrsma.oracle
from cfrsma.cli import main
from cfrsma.experiments import CSV_HEADER
from cfrsma.oracle import ComparisonRow


def _run_args(tmp_path, *extra):
    return ["run", "--preset", "custom", "--axis", "K=4,6",
            "--modes", "sdma", "--drops", "2", "--realizations", "8",
            "--seed", "3", "--output", str(tmp_path), "--quiet",
            "--config", str(_tiny_cfg(tmp_path)), *extra]


def _tiny_cfg(tmp_path):
    path = tmp_path / "base.cfg"
    path.write_text(
        "schema_version = 1\nM = 4\nN = 2\nK = 4\nL = 2\ntau_c = 24\n"
        "velocity_kmh = 50\n")
    return path


def test_run_writes_results(tmp_path):
    assert main(_run_args(tmp_path)) == 0
    text = (tmp_path / "results.csv").read_text()
    assert text.startswith(CSV_HEADER)
    assert "sdma,4,2" in text
    assert json.loads((tmp_path / "meta.json").read_text())["seed"] == 3


def test_flags_override_config_file(tmp_path):
    cfg = _tiny_cfg(tmp_path)
    code = main(["run", "--preset", "custom", "--config", str(cfg),
                 "--modes", "sdma", "--drops", "1", "--realizations", "4",
                 "--seed", "9", "--output", str(tmp_path / "o"), "--quiet"])
    assert code == 0
    manifest = json.loads((tmp_path / "o/meta.json").read_text())
    assert manifest["seed"] == 9
    assert manifest["drops"] == 1


def test_invalid_config_exits_2(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("K = 4\nL = 9\n")        # L > K
    code = main(["run", "--preset", "custom", "--config", str(bad),
                 "--output", str(tmp_path), "--quiet"])
    assert code == 2


def test_unreadable_config_exits_2(tmp_path):
    code = main(["run", "--config", str(tmp_path / "missing.cfg"),
                 "--output", str(tmp_path), "--quiet"])
    assert code == 2


def test_stats_check_failure_exits_3(tmp_path, monkeypatch, capsys):
    bad_row = ComparisonRow(name="common_obs_var[0][1]", closed=1.0,
                            mc=1.5, rel_err=0.5, tol=0.02)
    monkeypatch.setattr(cfrsma.oracle, "run_statistics_selfcheck",
                        lambda n_drops, seed: (False, [bad_row], None))
    code = main(_run_args(tmp_path, "--stats-check", "1000"))
    assert code == 3
    err = capsys.readouterr().err
    assert "common_obs_var[0][1]" in err


def test_stats_check_pass_continues(tmp_path, monkeypatch):
    good = ComparisonRow(name="x", closed=1.0, mc=1.0, rel_err=0.0, tol=0.02)
    monkeypatch.setattr(cfrsma.oracle, "run_statistics_selfcheck",
                        lambda n_drops, seed: (True, [good], None))
    assert main(_run_args(tmp_path, "--stats-check", "1000")) == 0
    assert (tmp_path / "results.csv").exists()


def test_verify_stats_subcommand(monkeypatch):
    good = ComparisonRow(name="x", closed=1.0, mc=1.0, rel_err=0.0, tol=0.02)
    monkeypatch.setattr(cfrsma.oracle, "run_statistics_selfcheck",
                        lambda n_drops, seed: (True, [good], None))
    assert main(["verify-stats", "--samples", "10", "--quiet"]) == 0


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("CF_RSMA_THREADS", "2")
    assert main(_run_args(tmp_path)) == 0


def test_bad_mode_rejected(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--modes", "warp_drive", "--output", str(tmp_path)])
    assert exc.value.code == 2


def test_bad_axis_rejected(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--axis", "seed=1,2", "--output", str(tmp_path)])
    assert exc.value.code == 2
