import csv
import json
import math

import pytest

from riccati_escape.cli import ConfigError, JobConfig, main, read_metadata

QUADRATIC = {"A": [[-1.0, -1.0], [0.0, 1.0]], "k": 1, "Y0": [[1.0]]}
ROTATION_PAIR = {"A": [[0.0, -1.0], [1.0, 0.0]], "B": [[0.0, 1.0], [-1.0, 0.0]], "lambda": 1.0}


def write(tmp_path, cfg, name="job.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ")
    return list(csv.reader(lines[1:]))


def test_escape_time_prints_value(tmp_path, capsys):
    code = main(["escape-time", "--config", write(tmp_path, QUADRATIC), "--out", str(tmp_path)])
    assert code == 0
    assert "0.549306" in capsys.readouterr().out
    rows = read_csv(tmp_path / "steps.csv")
    assert rows[0][0].startswith("n") and "t_n" in rows[0][1] and "log" in rows[0][2]
    assert float(rows[21][1]) == pytest.approx(0.549306, abs=5e-7)
    result = json.loads((tmp_path / "escape_time.json").read_text())
    assert result["result"]["t_escape"] == pytest.approx(math.log(3) / 2, abs=1e-12)


def test_metadata_block_first(tmp_path):
    main(["escape-time", "--config", write(tmp_path, QUADRATIC), "--out", str(tmp_path)])
    meta = read_metadata(tmp_path / "steps.csv")
    assert meta["command"] == "escape-time"
    assert meta["config"]["A"] == QUADRATIC["A"]
    assert meta["tolerances"]["tol"] == {"value": 1e-8, "source": "default"}


def test_round_trip_is_byte_identical(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    first.mkdir()
    second.mkdir()
    cfg = dict(ROTATION_PAIR, grid_spacing=0.05, method="both")
    main(["mean-escape", "--config", write(tmp_path, cfg), "--out", str(first)])
    echoed = read_metadata(first / "mean_escape.csv")["config"]
    main(["mean-escape", "--config", write(tmp_path, echoed, "echo.json"), "--out", str(second)])
    body = lambda p: p.read_text().splitlines()[1:]  # noqa: E731
    assert body(first / "mean_escape.csv") == body(second / "mean_escape.csv")


def test_mean_escape_curve(tmp_path):
    cfg = dict(ROTATION_PAIR, grid_spacing=0.02, K=200, tol=1e-12)
    assert main(["mean-escape", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "mean_escape.csv")
    assert rows[0][:4] == ["theta [rad]", "tA [time]", "tB [time]", "TA [time]"]
    for theta, _, _, TA, _ in rows[1:][::10]:
        th = float(theta)
        assert float(TA) == pytest.approx(math.pi / 2 + math.pi**2 / 4 - th - th * th, abs=1e-3)


def test_assumption_violation_exit_code(tmp_path, capsys):
    cfg = dict(ROTATION_PAIR, A=QUADRATIC["A"], grid_spacing=0.1)
    assert main(["mean-escape", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == 3
    assert "t_cap" in capsys.readouterr().err


@pytest.mark.parametrize(
    "cfg, field",
    [
        ({"k": 1, "Y0": [[1.0]]}, "A"),
        (dict(QUADRATIC, A=[[1.0, 2.0, 3.0]]), "A"),
        (dict(QUADRATIC, k=2), "k"),
        (dict(QUADRATIC, Y0=[[1.0, 2.0]]), "Y0"),
        (dict(QUADRATIC, tol=-1.0), "tol"),
        (dict(QUADRATIC, n_max=0), "n_max"),
    ],
)
def test_config_errors_name_the_field(tmp_path, capsys, cfg, field):
    assert main(["escape-time", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == 2
    assert f"'{field}'" in capsys.readouterr().err


@pytest.mark.parametrize("lam", [0.0, -1.0, "fast"])
def test_bad_rate(tmp_path, capsys, lam):
    cfg = dict(ROTATION_PAIR, **{"lambda": lam})
    assert main(["simulate", "--config", write(tmp_path, dict(cfg, Y0=[[0.0]])), "--out", str(tmp_path)]) == 2
    assert "'lambda'" in capsys.readouterr().err


def test_unreadable_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["escape-time", "--config", str(bad)]) == 2


def test_profile_has_rescaled_columns(tmp_path):
    cfg = {"A": [[-1.0, 2.0, -1.0], [0.0, 2.0, -1.0], [-1.0, 3.0, -3.0]], "n_seeds": 4, "n_steps": 10}
    assert main(["profile", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "profile.csv")
    assert rows[0] == [
        "y1 [state]",
        "y2 [state]",
        "escape_time [time]",
        "atan_y1 [rad]",
        "atan_y2 [rad]",
        "atan_escape_time [rad]",
    ]
    for r in rows[1:]:
        assert float(r[3]) == pytest.approx(math.atan(float(r[0])), abs=1e-11)
        assert 0.0 <= float(r[5]) <= math.pi / 2


def test_simulate_and_seed_override(tmp_path):
    cfg = dict(ROTATION_PAIR, Y0=[[0.0]], n_trials=300)
    path = write(tmp_path, cfg)
    main(["simulate", "--config", path, "--out", str(tmp_path), "--seed", "7"])
    a = json.loads((tmp_path / "simulate.json").read_text())
    assert a["metadata"]["config"]["seed"] == 7
    main(["simulate", "--config", path, "--out", str(tmp_path), "--seed", "7", "--threads", "2"])
    b = json.loads((tmp_path / "simulate.json").read_text())
    assert a["result"] == b["result"]
    main(["simulate", "--config", path, "--out", str(tmp_path), "--seed", "8"])
    c = json.loads((tmp_path / "simulate.json").read_text())
    assert c["result"]["mean"] != a["result"]["mean"]


def test_verify_reports_checks(tmp_path):
    cfg = dict(ROTATION_PAIR, thetas=[0.0], n_trials=2000, grid_spacing=0.02, K=200, tol=1e-12)
    code = main(["verify", "--config", write(tmp_path, cfg), "--out", str(tmp_path)])
    out = json.loads((tmp_path / "verify.json").read_text())["result"]
    assert code == (0 if out["passed"] else 4)
    assert out["checks"][0]["theta"] == 0.0
    assert out["passed"]


def test_jobconfig_defaults_and_provenance():
    cfg = JobConfig.from_dict("mean-escape", dict(ROTATION_PAIR, K=5))
    assert cfg.params["grid_spacing"] == 0.005
    tol = cfg.metadata()["tolerances"]
    assert tol["K"]["source"] == "config" and tol["grid_spacing"]["source"] == "default"
    with pytest.raises(ConfigError):
        JobConfig.from_dict("launch", {})
