import numpy as np
import pytest

from gac.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, EXIT_VERIFY, main
from gac.errors import SolverDiverged
from gac.verify import Check

SMALL_CFG = """
env = lqr1d
steps = 120
warmup = 60
batch = 8
target_samples = 2
critic_hidden = 8, 8
actor_hidden = ()
eval_period = 60
eval_episodes = 2
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(SMALL_CFG)
    return p


def test_train_eval_plot_round(tmp_path, cfg_file, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_file), "--seed", "4", "--out", str(out)]) == EXIT_OK
    log = (out / "log.csv").read_text().splitlines()
    assert log[0].startswith("step,test_return_mean,") and len(log) == 4
    assert main(["eval", "--actor", str(out / "actor.txt"), "--env", "lqr1d",
                 "--episodes", "3", "--seed", "0"]) == EXIT_OK
    assert "mean return" in capsys.readouterr().out
    svg = tmp_path / "curve.svg"
    assert main(["plot", "--log", str(out / "log.csv"), "--out", str(svg)]) == EXIT_OK
    text = svg.read_text()
    assert text.lstrip().startswith("<?xml") and "<svg" in text


def test_config_errors_exit_2(tmp_path, cfg_file):
    bad = tmp_path / "bad.cfg"
    bad.write_text("env = lqr1d\nlearning_speed = 3\n")
    assert main(["train", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["train", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    assert main(["train"]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert main(["eval", "--actor", str(tmp_path / "none.txt"), "--env", "lqr1d"]) == EXIT_CONFIG
    assert main(["eval", "--actor", "x", "--env", "mars"]) == EXIT_CONFIG
    assert main(["verify", "--suite", "nope"]) == EXIT_CONFIG
    assert main(["plot", "--log", str(cfg_file), "--out", str(tmp_path / "x.svg")]) == EXIT_CONFIG


def test_eval_rejects_mismatched_actor(tmp_path, cfg_file):
    out = tmp_path / "run"
    main(["train", "--config", str(cfg_file), "--out", str(out)])
    assert main(["eval", "--actor", str(out / "actor.txt"), "--env", "pendulum",
                 "--episodes", "1", "--seed", "0"]) == EXIT_CONFIG


def test_solver_failure_exit_3(monkeypatch, cfg_file, tmp_path):
    import gac.trainer

    def boom(*a, **k):
        raise SolverDiverged("dual is not finite")

    monkeypatch.setattr(gac.trainer, "train", boom)
    assert main(["train", "--config", str(cfg_file), "--out", str(tmp_path)]) == EXIT_SOLVER


def test_verify_exit_codes(monkeypatch, capsys):
    import gac.verify

    assert main(["verify", "--suite", "gauss"]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out
    monkeypatch.setitem(gac.verify.SUITES, "gauss",
                        [lambda seed=0: [Check("forced", False, 1.0, 0.0, 0.0)]])
    assert main(["verify", "--suite", "gauss"]) == EXIT_VERIFY
    assert "FAIL  forced" in capsys.readouterr().out


def test_module_entry_point():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-m", "gac", "--help"], capture_output=True,
                         text=True)
    assert out.returncode == 0 and "verify" in out.stdout
