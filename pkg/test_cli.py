import json
import math

import numpy as np
import pytest

import cli
from agent.environments import write_replay
from agent.verify import CheckResult, VerifyReport


def run(*argv):
    return cli.main(["--quiet", *argv])


def read_json(path):
    return json.loads(path.read_text(encoding="utf-8"))


def test_simulate_adversarial_logit(tmp_path):
    code = run("simulate", "--model", "mnl", "--n", "10", "--env", "adversarial",
               "--T", "500", "--out", str(tmp_path))
    assert code == 0
    report = read_json(tmp_path / "report.json")
    assert report["model"] == "mnl" and report["environment"] == "adaptive_adversary"
    assert 0.0 <= report["ratio"] < 1.0
    header = (tmp_path / "trace.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("t,x_1,") and header.endswith("u_10,payoff,regret")


def test_simulate_optimistic_learner(tmp_path):
    code = run("simulate", "--model", "nl", "--n", "4", "--env", "drift", "--algorithm", "oftrl",
               "--S", "3", "--T", "300", "--out", str(tmp_path))
    assert code == 0
    report = read_json(tmp_path / "report.json")
    assert report["oftrl"]["recency_S"] == 3
    assert report["oftrl"]["ratio"] <= 1.0


def test_simulate_rejects_bad_scale(tmp_path, capsys):
    code = run("simulate", "--model", "nl", "--lam", "1.5", "--T", "10", "--out", str(tmp_path))
    assert code == 1
    assert "lambda out of (0,1]" in capsys.readouterr().err
    assert not (tmp_path / "report.json").exists()


@pytest.mark.parametrize("argv", [
    ["simulate", "--T", "0"],
    ["simulate", "--model", "probit"],
    ["simulate", "--env", "bandit"],
    ["simulate", "--eta", "-1", "--T", "10"],
    ["simulate", "--config", "does-not-exist.json"],
    ["bounds", "--n", "1"],
])
def test_invalid_input_exits_with_one(argv, tmp_path):
    assert run(*argv, *(["--out", str(tmp_path)] if argv[0] == "simulate" else [])) == 1


def test_usage_errors_exit_with_one():
    with pytest.raises(SystemExit) as info:
        run("simulate", "--T", "many")
    assert info.value.code == 1


def test_config_document_and_flags(tmp_path):
    path = tmp_path / "sim.json"
    path.write_text(json.dumps({"model": {"kind": "gnl", "n": 5}, "T": 100,
                                "env": {"kind": "piecewise", "params": {"period": 20}}}),
                    encoding="utf-8")
    assert run("simulate", "--config", str(path), "--lam", "0.6", "--out", str(tmp_path)) == 0
    report = read_json(tmp_path / "report.json")
    assert report["model"] == "gnl" and report["T"] == 100
    assert report["environment"] == "piecewise_constant"


def test_reruns_are_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run("simulate", "--model", "pcl", "--n", "4", "--env", "iid", "--T", "200",
                   "--seed", "3", "--out", str(tmp_path / name)) == 0
    for name in ("trace.csv", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("GEVREGRET_SEED", "7")
    assert run("simulate", "--env", "iid", "--T", "20", "--out", str(tmp_path)) == 0
    assert read_json(tmp_path / "report.json")["seed"] == 7


def test_game_rock_paper_scissors(tmp_path):
    code = run("game", "--builtin", "rps", "--T", "300", "--horizons", "50", "100",
               "--out", str(tmp_path))
    assert code == 0
    report = read_json(tmp_path / "cce_report.json")
    assert [row["T"] for row in report["decay"]] == [50, 100, 300]
    assert report["delta_emp"] <= max(report["max_avg_regret"], 0.0) + 1e-9
    assert (tmp_path / "player_1_trace.csv").exists() and (tmp_path / "player_2_trace.csv").exists()


def test_game_from_file(tmp_path):
    path = tmp_path / "game.json"
    row = [[0.6, 0.0], [1.0, 0.2]]
    path.write_text(json.dumps({"players": 2, "strategies": 2,
                                "payoffs": [row, [list(c) for c in zip(*row)]]}), encoding="utf-8")
    assert run("game", "--game-file", str(path), "--T", "200", "--horizons", "200",
               "--out", str(tmp_path)) == 0
    report = read_json(tmp_path / "cce_report.json")
    assert report["players"] == 2
    assert all(r <= b for r, b in zip(report["regret"], report["bound_at_eta"]))


@pytest.mark.parametrize("text", [
    "{not json",
    '{"players": 2, "strategies": 2, "payoffs": [[[1, 0], [0]], [[0, 1], [1, 0]]]}',
    '{"players": 2, "strategies": 2, "payoffs": [], "name": "mp"}',
])
def test_malformed_game_file(tmp_path, text):
    path = tmp_path / "game.json"
    path.write_text(text, encoding="utf-8")
    assert run("game", "--game-file", str(path), "--T", "10", "--out", str(tmp_path)) == 1


def test_verify_small(tmp_path, capsys):
    code = run("verify", "--suite", "gradients", "reductions", "fenchel", "--n", "3",
               "--points", "2", "--rounds", "50", "--out", str(tmp_path))
    assert code == 0
    assert read_json(tmp_path / "verify_report.json")["seed"] == 0
    assert (tmp_path / "verify_report.md").read_text(encoding="utf-8").startswith("# ")
    assert "verify passed" in capsys.readouterr().out


def test_verify_failure_exits_with_two(tmp_path, monkeypatch):
    failing = VerifyReport(seed=0, suites=["gradients"], checks=[CheckResult(
        suite="gradients", name="mnl/fd_gradient", residual=1.0, tolerance=1e-6, passed=False)])
    monkeypatch.setattr(cli, "run_verify", lambda *args, **kwargs: failing)
    assert run("verify", "--out", str(tmp_path)) == 2
    assert (tmp_path / "verify_report.json").exists()


def test_bounds_table(capsys):
    assert run("bounds") == 0
    out = capsys.readouterr().out
    assert "| 214.597 |" in out
    assert out.count("\n| ") >= 8


def test_simulate_seed_and_horizon_sweep(tmp_path):
    code = run("simulate", "--model", "mnl", "--n", "4", "--env", "adversarial",
               "--seeds", "0", "1", "--horizons", "50", "200", "--out", str(tmp_path))
    assert code == 0
    for seed in (0, 1):
        for horizon in (50, 200):
            run_dir = tmp_path / f"seed_{seed}" / f"T_{horizon}"
            assert (run_dir / "trace.csv").exists()
            assert read_json(run_dir / "report.json")["T"] == horizon
    summary = read_json(tmp_path / "summary.json")
    assert [(r["seed"], r["T"]) for r in summary["runs"]] == [(0, 50), (0, 200), (1, 50), (1, 200)]
    assert all(r["ratio"] <= 1.0 for r in summary["runs"])
    assert set(summary["hannan_slope"]) == {"0", "1"}
    assert summary["mean_hannan_slope"] < 0.0


def test_env_flag_keeps_document_params(tmp_path):
    stream = tmp_path / "stream.csv"
    write_replay(stream, np.random.default_rng(0).random((30, 3)))
    path = tmp_path / "sim.json"
    path.write_text(json.dumps({"model": {"kind": "mnl", "n": 3}, "T": 30,
                                "env": {"kind": "replay_file", "params": {"path": str(stream)}}}),
                    encoding="utf-8")
    assert run("simulate", "--config", str(path), "--env", "replay", "--out", str(tmp_path)) == 0
    assert read_json(tmp_path / "report.json")["environment"] == "replay_file"


def test_env_flag_with_env_param(tmp_path):
    stream = tmp_path / "stream.csv"
    write_replay(stream, np.random.default_rng(1).random((20, 3)))
    path = tmp_path / "sim.json"
    path.write_text(json.dumps({"model": {"kind": "mnl", "n": 3}, "T": 20,
                                "env": {"kind": "piecewise", "params": {"period": 5}}}),
                    encoding="utf-8")
    assert run("simulate", "--config", str(path), "--env", "replay",
               "--env-param", f"path={stream}", "--out", str(tmp_path)) == 0
    assert read_json(tmp_path / "report.json")["environment"] == "replay_file"


def test_replay_without_path_is_invalid(tmp_path, capsys):
    assert run("simulate", "--env", "replay", "--T", "10", "--out", str(tmp_path)) == 1
    assert "env.params.path is required for replay_file" in capsys.readouterr().err


def test_unknown_env_param_is_invalid(tmp_path):
    assert run("simulate", "--env", "drift", "--env-param", "colour=3", "--T", "10",
               "--out", str(tmp_path)) == 1
    assert run("simulate", "--env-param", "period", "--T", "10", "--out", str(tmp_path)) == 1


@pytest.mark.parametrize("variant,phi", [("thm2", math.log(3)),
                                         ("thm1", math.log(3) + 0.5772156649015329)])
def test_game_bound_follows_the_tuning_variant(tmp_path, variant, phi):
    assert run("game", "--builtin", "rps", "--T", "400", "--horizons", "400",
               "--variant", variant, "--out", str(tmp_path)) == 0
    report = read_json(tmp_path / "cce_report.json")
    assert report["bound_variant"] == variant
    for bound in report["bound_at_eta"]:
        assert bound == pytest.approx(math.sqrt(2 * phi * 400), rel=1e-9)


def test_game_seed_sweep(tmp_path):
    assert run("game", "--builtin", "random", "--seeds", "1", "2", "--T", "100",
               "--horizons", "100", "--out", str(tmp_path)) == 0
    summary = read_json(tmp_path / "cce_summary.json")
    assert [r["seed"] for r in summary["runs"]] == [1, 2]
    for seed in (1, 2):
        assert read_json(tmp_path / f"seed_{seed}" / "cce_report.json")["seed"] == seed
    assert summary["max_delta_emp"] == max(r["delta_emp"] for r in summary["runs"])


def test_verify_prints_informational_rows(tmp_path, capsys):
    assert run("verify", "--suite", "hessian", "--models", "mnl", "--n", "3", "--points", "2",
               "--out", str(tmp_path)) == 0
    out = capsys.readouterr().out
    assert "mnl/two_trace_slack" in out and "mnl/inf_one_slack" in out
    assert "ℹ️" in out
