import json

import pytest

from distmon.cli import main
from distmon.experiment import ConfigError, ExperimentConfig, run_experiment, trial_seeds
from distmon.workloads import WorkloadSpec

STATIC = WorkloadSpec("static", n=32, T=6, delta=4, seed=1)


def test_static_domain_silent_after_init():
    rep = run_experiment(ExperimentConfig("domain", STATIC, trials=1, seed=3), keep_first=True)
    ledger = rep.first[1]
    assert ledger.per_step(6)[1:].sum() == 0
    assert rep.aggregates["total_messages"] == ledger.total() == rep.trials[0]["messages"]
    assert rep.aggregates["failure_rate"] == 0


def test_propagate_max_responders():
    spec = WorkloadSpec("static", n=1024, T=1, delta=2, seed=0)
    rep = run_experiment(ExperimentConfig("propagate-max", spec, trials=500, seed=1))
    assert rep.aggregates["mean_responders_per_value"] < 4


def test_trial_seeds_are_deterministic_and_distinct():
    a = trial_seeds(5, 20)
    assert a == trial_seeds(5, 20) and len(set(a)) == 20
    assert trial_seeds(5, 3) == a[:3]


def test_reports_byte_identical():
    cfg = ExperimentConfig("cd-cont", WorkloadSpec("sigma-similar", n=64, T=10, delta=4, sigma=0.2, seed=2), 0.3, 0.2, 3, 7)
    assert run_experiment(cfg).dumps() == run_experiment(cfg).dumps()


@pytest.mark.parametrize("kw", [
    dict(protocol="nope"),
    dict(protocol="freq-step"),
    dict(protocol="cd-step", epsilon=0.2, delta=1.5),
    dict(protocol="domain", trials=0),
])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig(workload=STATIC, **kw))


def test_cli_roundtrip(tmp_path, capsys):
    trace = tmp_path / "t.txt"
    assert main(["generate", "--kind", "sigma-similar", "--n", "64", "--T", "8", "--delta", "4",
                 "--sigma", "0.2", "--seed", "1", "--out", str(trace)]) == 0
    assert main(["oracle", "--trace", str(trace), "--out", str(tmp_path / "o.json")]) == 0
    assert json.loads((tmp_path / "o.json").read_text())["n"] == 64
    args = ["run", "--protocol", "freq-cont", "--trace", str(trace), "--epsilon", "0.3", "--delta", "0.2",
            "--trials", "2", "--seed", "4", "--report", str(tmp_path / "r.json"),
            "--trials-csv", str(tmp_path / "tr.csv"), "--ledger-csv", str(tmp_path / "l.csv"),
            "--outputs-csv", str(tmp_path / "e.csv")]
    assert main(args) == 0
    first = (tmp_path / "r.json").read_bytes()
    assert main(args) == 0
    assert (tmp_path / "r.json").read_bytes() == first
    rep = json.loads(first)
    assert rep["config"]["protocol"] == "freq-cont" and len(rep["trials"]) == 2
    assert (tmp_path / "e.csv").read_text().startswith("t,value,estimate")
    assert (tmp_path / "l.csv").read_text().startswith("t,round,protocol,origin,kind")
    assert main(["run", "--protocol", "cd-step", "--workload", "static:n=16,T=2,delta=4",
                 "--epsilon", "0.3", "--delta", "0.2", "--report", str(tmp_path / "c.json")]) == 0


@pytest.mark.parametrize("argv", [
    ["run", "--protocol", "freq-step", "--workload", "static:n=4,T=2,delta=2", "--report", "x.json"],
    ["run", "--protocol", "domain", "--trace", "/nonexistent/t.txt", "--report", "x.json"],
    ["generate", "--kind", "sigma-similar", "--n", "10", "--T", "3", "--delta", "2", "--out", "x.txt"],
    ["oracle", "--trace", "/nonexistent/t.txt", "--out", "o.json"],
])
def test_cli_validation_errors(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err
