import json
import os
import subprocess
import sys

import pytest

from oylab.cli import COMMANDS, PARAMS, ConfigError, ExperimentConfig, main, parse, serialize


def _run(tmp_path, name, *argv):
    out = tmp_path / name
    status = main([*argv, "--output-dir", str(out)])
    return status, out


def test_tail_is_byte_identical_across_threads(tmp_path):
    args = ["tail", "--n", "8", "--replicas", "40", "--seed", "3", "--s-values", "(0.0, 0.25, 0.5, 1.0)"]
    s1, a = _run(tmp_path, "a", *args, "--threads", "1")
    s2, b = _run(tmp_path, "b", *args, "--threads", "2")
    s3, c = _run(tmp_path, "c", *args, "--threads", "1")
    assert s1 == s2 == s3 == 0
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes() == (c / "results.csv").read_bytes()
    ja, jb = json.loads((a / "summary.json").read_text()), json.loads((b / "summary.json").read_text())
    assert ja["config_hash"] == jb["config_hash"]
    assert (a / "results.csv").read_text().startswith("# schema=1\ns,estimate,ci_lo,ci_hi,n_exceed\n")


def test_seed_changes_results(tmp_path):
    args = ["tail", "--n", "8", "--replicas", "40", "--s-values", "(0.0, 0.5)"]
    _, a = _run(tmp_path, "a", *args, "--seed", "1")
    _, b = _run(tmp_path, "b", *args, "--seed", "2")
    assert (a / "results.csv").read_bytes() != (b / "results.csv").read_bytes()


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig("exit", {"n": 16, "x_values": (0.0, 1.0)}, seed=2**64 - 1, replicas=7, threads=2,
                           output_dir="x")
    assert parse(serialize(cfg)) == cfg
    resolved = cfg.resolved()
    assert parse(serialize(resolved)) == resolved
    assert set(resolved.params) == set(PARAMS["exit"])


def test_resolved_config_reproduces_run(tmp_path):
    status, out = _run(tmp_path, "a", "limit-shape")
    assert status == 0
    ini = out / "resolved_config.ini"
    status2, out2 = _run(tmp_path, "b", "limit-shape", "--config", str(ini))
    assert status2 == 0
    assert (out / "results.csv").read_bytes() == (out2 / "results.csv").read_bytes()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["mu"] == pytest.approx(1.46105432642945454, abs=1e-12)


def test_config_errors(tmp_path, capsys):
    with pytest.raises(ConfigError):
        ExperimentConfig("tail", {"bogus": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig("nope")
    with pytest.raises(ConfigError):
        ExperimentConfig("tail", seed=-1)
    with pytest.raises(ConfigError):
        parse("[experiment]\ncommand = 'tail'\nsurprise = 1\n")
    with pytest.raises(ConfigError):
        parse("[params]\nn = 3\n")
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\ncommand = 'tail'\n[params]\nbogus = 3\n")
    assert main(["tail", "--config", str(bad), "--output-dir", str(tmp_path / "o")]) == 1
    assert "bogus" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()
    assert main(["tail", "--config", str(tmp_path / "missing.ini")]) == 1
    assert main(["identity", "--check", "nonsense", "--output-dir", str(tmp_path / "p")]) == 1


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(serialize(ExperimentConfig("convergence", {"n": 4, "halvings": 1}, seed=5, replicas=2)))
    status, out = _run(tmp_path, "a", "convergence", "--config", str(cfg), "--seed", "9", "--dt", "0.1")
    assert status == 0
    back = parse((out / "resolved_config.ini").read_text())
    assert back.seed == 9 and back.replicas == 2 and back.params["dt"] == 0.1 and back.params["n"] == 4


def test_identity_summary(tmp_path):
    status, out = _run(tmp_path, "a", "identity", "--check", "stationary-mean", "--theta", "1.0", "--t", "3.0",
                       "--n", "2", "--dt", "0.05", "--replicas", "200", "--seed", "4")
    summary = json.loads((out / "summary.json").read_text())
    assert summary["name"] == "stationary-mean"
    assert status == (0 if summary["verdict"] else 2)
    assert summary["verdict"]
    lines = (out / "results.csv").read_text().splitlines()
    assert lines[1] == "check,lhs,rhs,std_err,n_samples,verdict" and lines[2].startswith("stationary-mean,")


def test_convergence_decreases(tmp_path):
    status, out = _run(tmp_path, "a", "convergence", "--n", "4", "--dt", "0.04", "--halvings", "3", "--replicas", "6")
    assert status == 0
    assert json.loads((out / "summary.json").read_text())["decreasing"]


def test_watermelon_command(tmp_path):
    status, out = _run(tmp_path, "a", "watermelon", "--n", "64", "--k", "4", "--scale", "0.25", "--replicas", "2")
    assert status == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["verdict"] and summary["min_slack"] >= -1e-9


def test_tf_and_exit_commands(tmp_path):
    status, out = _run(tmp_path, "tf", "tf", "--n", "8", "--replicas", "10", "--b-values", "(0.2, 0.4)")
    assert status == 0
    assert "fit" in json.loads((out / "summary.json").read_text())
    status, out = _run(tmp_path, "exit", "exit", "--n", "8", "--replicas", "10", "--x-values", "(0.0, 0.5, 1.0)")
    assert status == 0
    summary = json.loads((out / "summary.json").read_text())
    assert abs(summary["center"]) < 1e-9
    assert "error" in summary["fit_two_sided"] or "alpha" in summary["fit_two_sided"]


def test_writes_only_inside_output_dir(tmp_path):
    work = tmp_path / "work"
    work.mkdir()
    before = set(os.listdir(work))
    env = dict(os.environ, OY_THREADS="1")
    proc = subprocess.run(
        [sys.executable, "-m", "oylab", "limit-shape", "--output-dir", "out"],
        cwd=work, env=env, capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert set(os.listdir(work)) - before == {"out"}
    assert sorted(os.listdir(work / "out")) == ["resolved_config.ini", "results.csv", "summary.json"]


def test_every_command_has_defaults():
    for cmd in COMMANDS:
        cfg = ExperimentConfig(cmd).resolved()
        assert set(cfg.params) == set(PARAMS[cmd])
    assert ExperimentConfig("tail", {"n": 64}).resolved().params["s_values"][-1] == 4.0
    assert ExperimentConfig("tail", {"n": 8}).resolved().params["s_values"][-1] == 1.0


def test_failed_verdict_gives_status_two(tmp_path):
    # a zero-width acceptance band cannot contain a Monte Carlo estimate
    status, out = _run(tmp_path, "a", "identity", "--check", "stationary-mean", "--t", "2.0", "--n", "2",
                       "--dt", "0.05", "--replicas", "20", "--z", "0.0")
    assert status == 2
    assert json.loads((out / "summary.json").read_text())["verdict"] is False
