import json
import subprocess
import sys

import pytest
import yaml

from mflgames.cli import main
from mflgames.config import load_config, parse_experiment, resolve_config_path
from mflgames.errors import ConfigParseError

SMALL_QUADRATIC = {
    "seed": 3,
    "environment": {"points": [0.0, 1.0], "weights": [0.5, 0.5]},
    "quadratic": {"stiffness": [1.0, 2.0], "coupling": [[0.0, 0.2], [-0.2, 0.0]], "n_particles": 300,
                  "init": {"kind": "gaussian", "mean": 0.0, "std": 1.0}},
    "run": {"sigma": 0.4, "dt": 0.01, "n_steps": 40, "record_every": 10},
    "monitors": ["mean", "variance", "residual", {"name": "wasserstein", "reference": "initial"}],
    "checkpoint_every": 20,
}


def _write(tmp_path, cfg, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return p


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.mark.parametrize("name", ["ou_anchor", "examples/ou_anchor", "examples/gan_fig1", "lq_dynamic",
                                  "ou_contraction"])
def test_validate_bundled(name, capsys):
    assert main(["validate", name]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["status"] == "ok"
    assert report["estimated_memory_bytes"] > 0


def test_bundled_gan_matches_reference_settings():
    exp = parse_experiment(load_config("examples/gan_fig1"))
    g = exp.extra["gan"]
    assert (g.sigma, g.dt, g.lam, g.n_particles, g.n_steps) == (0.4, 0.01, 0.2, 3000, 60)
    assert g.data == {"distribution": "exponential", "rate": 1.0}


@pytest.mark.parametrize("mutate, path", [
    (lambda c: c["run"].update(dt=-0.1), "run.dt"),
    (lambda c: c["run"].pop("sigma"), "run.sigma"),
    (lambda c: c["run"].update(n_steps=2.5), "run.n_steps"),
    (lambda c: c.update(bogus=1), "config"),
    (lambda c: c.update(gan={}), "config"),
    (lambda c: c.pop("quadratic"), "config"),
    (lambda c: c["quadratic"].update(stiffness=[-1.0, 1.0]), "quadratic"),
    (lambda c: c["quadratic"].update(init={"kind": "cauchy"}), None),
    (lambda c: c.update(monitors=["nonsense"]), "monitors[0]"),
    (lambda c: c["environment"].update(weights=[0.5, 0.6]), None),
])
def test_validate_errors(tmp_path, capsys, mutate, path):
    cfg = json.loads(json.dumps(SMALL_QUADRATIC))
    mutate(cfg)
    assert main(["validate", str(_write(tmp_path, cfg))]) == 2
    err = _error(capsys)
    assert err["error"] and err["message"]
    if path is not None:
        assert err["path"] == path


def test_missing_file(capsys):
    assert main(["validate", "/nonexistent/config.yaml"]) == 2
    assert _error(capsys)["error"] == "ConfigParseError"
    with pytest.raises(ConfigParseError):
        resolve_config_path("nope/nope/nope")


def test_malformed_yaml(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("run: [unclosed\n")
    assert main(["validate", str(p)]) == 2


def test_run_artifacts_and_overwrite(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL_QUADRATIC)
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    status = json.loads(capsys.readouterr().out)
    assert status == {"status": "ok", "kind": "quadratic", "output": str(out)}
    for name in ("config_echo.yaml", "summary.json", "diagnostics.csv", "final_state/state_p1_y1.csv",
                 "checkpoints/step_20/state_p0_y0.csv"):
        assert (out / name).is_file()
    echo = yaml.safe_load((out / "config_echo.yaml").read_text())
    assert echo["seed"] == 3 and echo["kind"] == "quadratic"
    assert main(["run", str(cfg), "--out", str(out)]) == 2
    assert "overwrite" in _error(capsys)["message"]
    assert main(["run", str(cfg), "--out", str(out), "--overwrite"]) == 0


def test_seed_override(tmp_path):
    cfg = _write(tmp_path, SMALL_QUADRATIC)
    main(["run", str(cfg), "--out", str(tmp_path / "a")])
    main(["run", str(cfg), "--out", str(tmp_path / "b"), "--seed", "4"])
    a = (tmp_path / "a" / "diagnostics.csv").read_bytes()
    b = (tmp_path / "b" / "diagnostics.csv").read_bytes()
    assert a != b
    assert json.loads((tmp_path / "b" / "summary.json").read_text())["seed"] == 4


def test_default_output(tmp_path, monkeypatch):
    cfg = _write(tmp_path, SMALL_QUADRATIC, "tiny.yaml")
    monkeypatch.chdir(tmp_path)
    assert main(["run", str(cfg)]) == 0
    assert (tmp_path / "runs" / "tiny" / "summary.json").is_file()


def test_runtime_error(tmp_path, capsys):
    cfg = json.loads(json.dumps(SMALL_QUADRATIC))
    cfg["run"].update(dt=5.0, n_steps=50)
    cfg["monitors"] = []
    assert main(["run", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 1
    assert _error(capsys)["error"] == "NonFiniteState"


def test_bad_threads(tmp_path, capsys):
    assert main(["run", str(_write(tmp_path, SMALL_QUADRATIC)), "--threads", "0"]) == 2
    assert _error(capsys)["path"] == "--threads"


def test_dynamic_and_contraction_runs(tmp_path):
    dyn = load_config("lq_dynamic")
    dyn["dynamic"]["n_particles"] = 200
    dyn["run"]["n_steps"] = 20
    dyn["run"]["record_every"] = 10
    assert main(["run", str(_write(tmp_path, dyn, "d.yaml")), "--out", str(tmp_path / "d")]) == 0
    header = (tmp_path / "d" / "paths_p0.csv").read_text().splitlines()[0]
    assert header == "y,theta0,p0"
    con = load_config("ou_contraction")
    con["contraction"]["n_particles"] = 300
    con["run"]["n_steps"] = 30
    assert main(["run", str(_write(tmp_path, con, "c.yaml")), "--out", str(tmp_path / "c")]) == 0
    summary = json.loads((tmp_path / "c" / "summary.json").read_text())
    assert summary["R2"] == pytest.approx(0.8)
    assert (tmp_path / "c" / "decay.csv").is_file() and (tmp_path / "c" / "constants.csv").is_file()


def test_environment_mismatch_for_dynamic(tmp_path, capsys):
    dyn = load_config("lq_dynamic")
    dyn["environment"] = {"points": [0.0, 1.0], "weights": [0.5, 0.5]}
    assert main(["validate", str(_write(tmp_path, dyn))]) == 2
    assert _error(capsys)["error"] == "EnvironmentMismatch"


def test_console_script_entry():
    out = subprocess.run([sys.executable, "-m", "mflgames.cli", "validate", "ou_anchor"], capture_output=True,
                         text=True, check=False)
    assert out.returncode == 0
    assert json.loads(out.stdout)["kind"] == "quadratic"
