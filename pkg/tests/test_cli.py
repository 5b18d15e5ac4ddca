import json

import pytest

import hybench as hb
from hybench import bench, data
from hybench.cli import main


def test_bandit_command(capsys):
    assert main(["bandit", "--samples", "20000", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "5/18" in out
    assert "5/12" in out
    assert "best action by true value:      a1" in out
    assert "best action by logged estimate: a0" in out
    assert "empirical argmax: a0" in out


def test_gen_data_run_report_pipeline(tmp_path, capsys):
    ds_path = tmp_path / "wg.ds"
    gen_cfg = {
        "env": {"name": "windygrid", "params": {}},
        "dataset": {"tier": "random", "n_records": 2000, "seed": 0},
        "out": str(ds_path),
    }
    cfg_path = tmp_path / "gen.json"
    cfg_path.write_text(json.dumps(gen_cfg))
    assert main(["gen-data", "--config", str(cfg_path)]) == 0
    ds = data.read_dataset(ds_path)
    assert len(ds) == 2000

    results_path = tmp_path / "results.csv"
    run_cfg = {
        "benchmark_id": "wg-cli",
        "env": {"name": "windygrid", "params": {}},
        "dataset": {"path": str(ds_path)},
        "agent": {"name": "offline_bcq", "config": {}},
        "seeds": [0, 1],
        "eval_episodes": 20,
        "out": str(results_path),
    }
    run_path = tmp_path / "run.json"
    run_path.write_text(json.dumps(run_cfg))
    assert main(["run", "--config", str(run_path)]) == 0
    rows = bench.read_results(results_path)
    assert [r.seed for r in rows] == [0, 1]

    report_path = tmp_path / "report.md"
    assert main(
        ["report", "--config", str(results_path), "--format", "markdown",
         "--out", str(report_path)]
    ) == 0
    assert "wg-cli" in report_path.read_text()

    capsys.readouterr()
    assert main(["report", "--config", str(results_path), "--format", "csv"]) == 0
    assert "aggregate" in capsys.readouterr().out


def test_seed_override_restricts_run(tmp_path):
    ds_path = tmp_path / "wg.ds"
    env = hb.make_env("windygrid")
    from hybench import agents

    pol = agents.UniformPolicy((0, 1, 2, 3), seed=0)
    data.write_dataset(
        data.collect_dataset(env, pol, 1500, "observed", seed=0), ds_path
    )
    results_path = tmp_path / "results.csv"
    run_cfg = {
        "benchmark_id": "wg-seeded",
        "env": {"name": "windygrid", "params": {}},
        "dataset": {"path": str(ds_path)},
        "agent": {"name": "offline_bcq", "config": {}},
        "seeds": [0, 1, 2],
        "eval_episodes": 5,
    }
    run_path = tmp_path / "run.json"
    run_path.write_text(json.dumps(run_cfg))
    assert main(["run", "--config", str(run_path), "--seed", "7",
                 "--out", str(results_path)]) == 0
    rows = bench.read_results(results_path)
    assert [r.seed for r in rows] == [7]


def test_structured_error_on_bad_config(tmp_path, capsys):
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text(json.dumps({"benchmark_id": "x"}))
    assert main(["run", "--config", str(cfg_path)]) == 1
    err = capsys.readouterr().err
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["error"]
    assert "detail" in payload


def test_refs_command(tmp_path, capsys):
    cfg_path = tmp_path / "env.json"
    cfg_path.write_text(json.dumps({"env": {"name": "windygrid", "params": {}}}))
    out_path = tmp_path / "refs.json"
    assert main(["refs", "--config", str(cfg_path), "--seed", "0",
                 "--out", str(out_path)]) == 0
    record = json.loads(out_path.read_text())
    assert record["expert_ref"] > record["random_ref"]
