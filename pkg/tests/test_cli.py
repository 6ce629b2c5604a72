import json
import math
import subprocess
import sys

import pytest

from rdpf import __version__
from rdpf.cli import main

SMALL = {"M": 1024, "T": 200, "check_every": 100, "averaging_window": 100}


def _gauss_source():
    return {"marginals": [{"family": "gaussian", "mean": 0.0, "variance": 1.0}]}


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return str(path)


def _read_csv(path):
    lines = open(path, encoding="utf-8", newline="").read().split("\n")
    assert lines[-1] == ""
    header = lines[0].split(",")
    return header, [dict(zip(header, map(float, l.split(",")))) for l in lines[1:-1]]


@pytest.fixture
def sweep_cfg():
    return {
        "command": "sweep",
        "source": _gauss_source(),
        "distortion": "mse",
        "D_grid": [0.8, 1.4, 2.0],
        "N": 3,
        "optimizer": dict(SMALL, seed=3),
    }


def test_sweep_writes_csv_and_sidecar(tmp_path, sweep_cfg):
    out = tmp_path / "curve.csv"
    rc = main(["sweep", "--config", _write(tmp_path, sweep_cfg), "--out", str(out), "--sequential"])
    assert rc == 0
    header, rows = _read_csv(out)
    assert header == ["D", "rate_nats", "rate_bits", "achieved_distortion", "residual_max"]
    assert [r["D"] for r in rows] == [0.8, 1.4, 2.0]
    for r in rows:
        assert abs(r["rate_bits"] - r["rate_nats"] / math.log(2)) <= 1e-12
    assert b"\r" not in out.read_bytes()
    meta = json.loads((tmp_path / "curve.csv.meta.json").read_text(encoding="utf-8"))
    assert meta["run_metadata"]["library_version"] == __version__
    assert meta["run_metadata"]["seed"] == 3
    assert meta["D_grid"] == sweep_cfg["D_grid"]
    assert "wall_time_s" in meta["run_metadata"]


def test_sequential_runs_are_byte_identical(tmp_path, sweep_cfg):
    cfg = _write(tmp_path, sweep_cfg)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["sweep", "--config", cfg, "--out", str(a), "--sequential"]) == 0
    assert main(["sweep", "--config", cfg, "--out", str(b), "--sequential"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_sidecar_round_trip(tmp_path, sweep_cfg):
    first = tmp_path / "first.csv"
    assert main(["sweep", "--config", _write(tmp_path, sweep_cfg), "--out", str(first), "--sequential"]) == 0
    second = tmp_path / "second.csv"
    rc = main(["sweep", "--config", str(first) + ".meta.json", "--out", str(second), "--sequential"])
    assert rc == 0
    assert first.read_bytes() == second.read_bytes()


def test_parallel_sweep(tmp_path, sweep_cfg):
    out = tmp_path / "par.csv"
    assert main(["sweep", "--config", _write(tmp_path, sweep_cfg), "--out", str(out)]) == 0
    _, rows = _read_csv(out)
    assert len(rows) == 3
    meta = json.loads((tmp_path / "par.csv.meta.json").read_text(encoding="utf-8"))
    assert meta["run_metadata"]["parallel"] is True


def test_env_seed_override(tmp_path, sweep_cfg, monkeypatch):
    cfg = _write(tmp_path, sweep_cfg)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["sweep", "--config", cfg, "--out", str(a), "--sequential"]) == 0
    monkeypatch.setenv("RDPF_SEED", "11")
    assert main(["sweep", "--config", cfg, "--out", str(b), "--sequential"]) == 0
    assert a.read_bytes() != b.read_bytes()
    meta = json.loads((tmp_path / "b.csv.meta.json").read_text(encoding="utf-8"))
    assert meta["optimizer"]["seed"] == 11
    # the sidecar replays the overridden run without the variable
    monkeypatch.delenv("RDPF_SEED")
    c = tmp_path / "c.csv"
    assert main(["sweep", "--config", str(b) + ".meta.json", "--out", str(c), "--sequential"]) == 0
    assert c.read_bytes() == b.read_bytes()


def test_unknown_family_is_config_error(tmp_path, sweep_cfg, capsys):
    sweep_cfg["source"]["marginals"][0]["family"] = "gamma"
    rc = main(["sweep", "--config", _write(tmp_path, sweep_cfg), "--out", str(tmp_path / "x.csv")])
    assert rc == 2
    err = capsys.readouterr().err
    assert "source.marginals[0].family" in err and "gamma" in err
    assert not (tmp_path / "x.csv").exists()


@pytest.mark.parametrize(
    "mutate,field",
    [
        (lambda c: c.pop("D_grid"), "D_grid"),
        (lambda c: c.update(N=0), "N"),
        (lambda c: c.update(distortion="huber"), "distortion"),
        (lambda c: c["optimizer"].update(M=1), "optimizer"),
        (lambda c: c["optimizer"].update(learning_rate=1.0), "optimizer.learning_rate"),
        (lambda c: c.update(D_grid=[1.0, 0.5]), "D_grid"),
        (lambda c: c.update(extra=1), "extra"),
        (lambda c: c["source"].update(coupling={"kind": "clayton"}), "source.coupling.kind"),
    ],
)
def test_validation_names_field(tmp_path, sweep_cfg, capsys, mutate, field):
    mutate(sweep_cfg)
    assert main(["sweep", "--config", _write(tmp_path, sweep_cfg)]) == 2
    assert field in capsys.readouterr().err


def test_json_syntax_error_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "command": "slb",\n  "D": ,\n}\n', encoding="utf-8")
    assert main(["slb", "--config", str(path)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_command_mismatch(tmp_path, sweep_cfg, capsys):
    assert main(["point", "--config", _write(tmp_path, sweep_cfg)]) == 2
    assert "command" in capsys.readouterr().err


def test_solver_failure_exit_code(tmp_path, capsys):
    cfg = {
        "command": "point",
        "source": _gauss_source(),
        "D": 1.0,
        "optimizer": {"M": 256, "T": 50, "step_rule": "sgd", "step_size": 1e5, "max_restarts": 1},
    }
    out = tmp_path / "p.csv"
    assert main(["point", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 3
    err = capsys.readouterr().err
    trace = tmp_path / "p.csv.trace.csv"
    assert str(trace) in err
    assert trace.read_text(encoding="utf-8").startswith("iteration,objective,gradient_norm\n")


def test_infeasible_distortion_is_config_error(tmp_path, capsys):
    cfg = {
        "command": "point",
        "source": _gauss_source(),
        "target": {"marginals": [{"family": "gaussian", "mean": 0.0, "variance": 4.0}]},
        "D": 0.5,
        "optimizer": SMALL,
    }
    assert main(["point", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "p.csv")]) == 2
    assert "floor" in capsys.readouterr().err


def test_slb_command(tmp_path):
    cfg = {
        "command": "slb",
        "source": {"marginals": [{"family": "exponential", "location": 0.0, "scale": 1.0}]},
        "D_grid": [0.1, 1.0],
    }
    out = tmp_path / "slb.csv"
    assert main(["slb", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    _, rows = _read_csv(out)
    assert rows[0]["rate_nats"] == pytest.approx(0.745013, abs=1e-6)
    assert rows[1]["rate_nats"] == 0.0


def test_slb_requires_mse(tmp_path):
    cfg = {"command": "slb", "source": _gauss_source(), "D": 1.0, "distortion": "mae"}
    assert main(["slb", "--config", _write(tmp_path, cfg)]) == 2


def test_eot_command(tmp_path):
    cfg = {"command": "eot", "source": _gauss_source(), "epsilon": 3.0, "N": 3, "optimizer": SMALL}
    out = tmp_path / "eot.csv"
    assert main(["eot", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    header, rows = _read_csv(out)
    assert header[-2:] == ["epsilon", "D_eot"]
    r = rows[0]
    assert r["epsilon"] == 3.0
    assert r["D_eot"] == pytest.approx(r["achieved_distortion"] + 3.0 * r["rate_nats"], abs=1e-12)


def test_oracle_check_command(tmp_path):
    cfg = {"command": "oracle-check", "source": _gauss_source(), "D": 1.0, "N": 3, "G": 32, "optimizer": SMALL}
    out = tmp_path / "oc.csv"
    assert main(["oracle-check", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    _, rows = _read_csv(out)
    assert abs(rows[0]["grid_dual_nats"] - rows[0]["grid_primal_nats"]) <= 1e-6


def test_oracle_check_rejects_vector(tmp_path):
    cfg = {
        "command": "oracle-check",
        "source": {"marginals": [{"family": "gaussian"}, {"family": "gaussian"}]},
        "D": 1.0,
    }
    assert main(["oracle-check", "--config", _write(tmp_path, cfg)]) == 2


def test_figure_output(tmp_path, sweep_cfg):
    fig = tmp_path / "curve.png"
    out = tmp_path / "curve.csv"
    rc = main(["sweep", "--config", _write(tmp_path, sweep_cfg), "--out", str(out), "--sequential", "--figure", str(fig)])
    assert rc == 0
    assert fig.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_console_entry_point(tmp_path):
    cfg = {"command": "slb", "source": _gauss_source(), "D": 1.0, "output": {"path": str(tmp_path / "s.csv")}}
    path = _write(tmp_path, cfg)
    proc = subprocess.run([sys.executable, "-m", "rdpf.cli", "slb", "--config", path], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    _, rows = _read_csv(tmp_path / "s.csv")
    assert rows[0]["rate_nats"] == pytest.approx(0.143841, abs=1e-6)
