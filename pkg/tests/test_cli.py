import json

import numpy as np
import pytest

from esd_pinn import cli
from esd_pinn.solution import SolutionTable
from esd_pinn.trainer import TrainingHistory

TINY = {
    "t_span": [0.0, 1.0],
    "n_points": 40,
    "network": {"hidden_layers": 1, "hidden_width": 6, "seed": 3},
    "training": {"max_epochs": 12, "checkpoint_every": 4, "log_every": 0},
}


def write_config(tmp_path, overrides=None, name="cfg.json"):
    data = json.loads(json.dumps(TINY))
    for key, value in (overrides or {}).items():
        if isinstance(value, dict):
            data.setdefault(key, {}).update(value)
        else:
            data[key] = value
    data.setdefault("output", {})["dir"] = str(tmp_path / "out")
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_dry_run_touches_nothing(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run("run", "--config", cfg, "--dry-run") == 0
    assert "config ok" in capsys.readouterr().out
    assert not (tmp_path / "out").exists()


def test_missing_config_prints_usage(tmp_path, capsys):
    assert run("run", "--config", tmp_path / "nope.json") != 0
    err = capsys.readouterr().err
    assert "usage:" in err
    assert "nope.json" in err


def test_json_syntax_error_reports_position(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "n_points": 10,\n  "t_span": [0, 1\n}')
    assert run("integrate", "--config", bad) == 2
    assert "line 4" in capsys.readouterr().err


def test_unknown_field_is_named(tmp_path, capsys):
    cfg = write_config(tmp_path, {"training": {"learning_rate": 1e-3}})
    assert run("train", "--config", cfg) == 2
    assert "training.learning_rate" in capsys.readouterr().err


def test_reversed_span_rejected_before_work(tmp_path, capsys):
    cfg = write_config(tmp_path, {"t_span": [5.0, 5.0]})
    assert run("integrate", "--config", cfg) == 2
    assert "t_span" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_invalid_parameters_rejected(tmp_path, capsys):
    params = cli.DEFAULTS["esd_params"] | {"N": 2.0}
    cfg = write_config(tmp_path, {"esd_params": params})
    assert run("integrate", "--config", cfg) == 2
    assert "N" in capsys.readouterr().err


def test_integrate_writes_csv_and_is_repeatable(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run("integrate", "--config", cfg) == 0
    out = capsys.readouterr().out
    assert "40 grid points" in out
    path = tmp_path / "out" / "rk45.csv"
    first = path.read_bytes()
    assert first.splitlines()[0] == b"t,x1,x2,x3,x4"
    assert len(first.splitlines()) == 41
    assert run("integrate", "--config", cfg) == 0
    assert path.read_bytes() == first


def test_full_config_grid_has_20000_rows(tmp_path):
    full = tmp_path / "full.json"
    full.write_text(cli.bundled_config_text("full"))
    assert run("integrate", "--config", full, "--out", tmp_path / "p") == 0
    table = SolutionTable.read_csv(tmp_path / "p" / "rk45.csv")
    assert len(table) == 20000
    assert table.times[0] == 0.0 and table.times[-1] == 100.0


def test_train_writes_artifacts(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run("train", "--config", cfg) == 0
    assert "final total loss" in capsys.readouterr().out
    out = tmp_path / "out"
    hist = TrainingHistory.from_csv((out / "history.csv").read_text())
    assert [r.epoch for r in hist.records] == list(range(12))
    assert len(SolutionTable.read_csv(out / "pinn.csv")) == 40
    assert json.loads((out / "checkpoint.json").read_text())["epoch"] == 12


def test_same_seed_gives_identical_history(tmp_path):
    a = write_config(tmp_path, {"output": {"dir": str(tmp_path / "a")}}, "a.json")
    assert run("train", "--config", a, "--out", tmp_path / "a") == 0
    assert run("train", "--config", a, "--out", tmp_path / "b") == 0
    for name in ("history.csv", "pinn.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path)
    run("train", "--config", cfg, "--out", tmp_path / "a")
    run("train", "--config", cfg, "--out", tmp_path / "b", "--seed", 99)
    assert (tmp_path / "a" / "pinn.csv").read_bytes() != (tmp_path / "b" / "pinn.csv").read_bytes()


def test_resume_continues_numbering(tmp_path):
    short = write_config(tmp_path, {"training": {"max_epochs": 8}}, "short.json")
    longer = write_config(tmp_path, {"training": {"max_epochs": 20}}, "long.json")
    assert run("train", "--config", short) == 0
    assert run("train", "--config", longer, "--resume") == 0
    hist = TrainingHistory.from_csv((tmp_path / "out" / "history.csv").read_text())
    assert [r.epoch for r in hist.records] == list(range(20))


def test_resume_without_checkpoint_fails(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run("train", "--config", cfg, "--resume") == 2
    assert "no checkpoint" in capsys.readouterr().err


def test_divergence_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, {"training": {"lr_initial": 1e6, "lr_floor": 1e5,
                                               "max_epochs": 200, "optimizer": "gd"},
                                  "initial_state": [1e150, 0.0, 0.0, 0.0]})
    assert run("train", "--config", cfg) == 5
    assert "epoch" in capsys.readouterr().err


def test_evaluate_identical_files_is_perfect(tmp_path, capsys):
    cfg = write_config(tmp_path)
    run("integrate", "--config", cfg)
    csv = tmp_path / "out" / "rk45.csv"
    assert run("evaluate", "--config", cfg, "--rk", csv, "--pinn", csv) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    for comp in ("x1", "x2", "x3", "x4"):
        assert report["metrics"][comp] == {"r2": 1.0, "mae": 0.0, "mse": 0.0, "rmse": 0.0}
    assert "R-squared" in capsys.readouterr().out


def test_evaluate_malformed_row_reports_row(tmp_path, capsys):
    cfg = write_config(tmp_path)
    run("integrate", "--config", cfg)
    good = tmp_path / "out" / "rk45.csv"
    lines = good.read_text().splitlines()
    lines[5] = "0.1,abc,0,0,0"
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    assert run("evaluate", "--config", cfg, "--rk", good, "--pinn", bad) != 0
    assert "row 6" in capsys.readouterr().err


def test_evaluate_grid_mismatch_names_time(tmp_path, capsys):
    cfg = write_config(tmp_path)
    run("integrate", "--config", cfg)
    good = tmp_path / "out" / "rk45.csv"
    table = SolutionTable.read_csv(good)
    times = table.times.copy()
    times[7] += 1e-4
    other = tmp_path / "other.csv"
    other.write_text(SolutionTable(times, table.states).to_csv())
    assert run("evaluate", "--config", cfg, "--rk", good, "--pinn", other) == 3
    assert f"t={float(table.times[7])!r}" in capsys.readouterr().err


def test_full_run_prints_summary(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run("run", "--config", cfg) == 0
    lines = capsys.readouterr().out.splitlines()
    summary = [ln for ln in lines if ln.startswith("summary R2:")]
    assert len(summary) == 1
    for comp in ("x1=", "x2=", "x3=", "x4="):
        assert comp in summary[0]
    for name in ("rk45.csv", "pinn.csv", "history.csv", "checkpoint.json", "report.json"):
        assert (tmp_path / "out" / name).exists()


def test_thread_env_is_validated(tmp_path, monkeypatch, capsys):
    cfg = write_config(tmp_path)
    monkeypatch.setenv("ESD_PINN_THREADS", "many")
    assert run("integrate", "--config", cfg) == 2
    assert "ESD_PINN_THREADS" in capsys.readouterr().err


@pytest.mark.parametrize("name", cli.BUNDLED)
def test_bundled_configs_parse(name, capsys):
    assert run("show-config", name) == 0
    rc = cli.parse_config(capsys.readouterr().out, name)
    assert rc.training.t_span[0] < rc.training.t_span[1]


def test_full_bundle_matches_defaults():
    rc = cli.parse_config(cli.bundled_config_text("full"))
    cfg = rc.training
    assert (cfg.hidden_layers, cfg.hidden_width, cfg.n_points) == (16, 100, 20000)
    assert (cfg.max_epochs, cfg.alpha, cfg.beta) == (175000, 10.0, 1.0)
    assert (cfg.lr_initial, cfg.lr_floor) == (8e-5, 1e-6)
    assert cfg.uses_input_scaling


def test_desk_bundle_profile():
    cfg = cli.parse_config(cli.bundled_config_text("desk")).training
    assert cfg.t_span == (0.0, 10.0)
    assert (cfg.hidden_layers, cfg.hidden_width, cfg.n_points, cfg.max_epochs) == (4, 64, 2000, 30000)
    assert not cfg.uses_input_scaling


def test_config_digest_ignores_key_order():
    a = cli.parse_config('{"n_points": 50, "t_span": [0, 2]}')
    b = cli.parse_config('{"t_span": [0, 2], "n_points": 50}')
    assert a.digest() == b.digest()
    assert np.isclose(a.training.t_span[1], 2.0)


def test_negative_thread_count_rejected(tmp_path, monkeypatch, capsys):
    cfg = write_config(tmp_path)
    monkeypatch.setenv("ESD_PINN_THREADS", "-2")
    assert run("train", "--config", cfg) == 2
    assert not (tmp_path / "out").exists()


def test_thread_setting_does_not_change_artifacts(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, {"n_points": 1500, "training": {"max_epochs": 6}})
    for label, threads in (("a", "1"), ("b", "3")):
        monkeypatch.setenv("ESD_PINN_THREADS", threads)
        assert run("train", "--config", cfg, "--out", tmp_path / label) == 0
    for name in ("history.csv", "pinn.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
