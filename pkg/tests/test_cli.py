import json
from dataclasses import replace

import pytest

from cuplab.cli import main
from cuplab.config import ConfigError, build_env, parse_config

MINI_CAMPAIGN = {"campaign": {"n_cmdps": 3, "pairs_per_cmdp": 2, "lambdas": [0.0, 0.5]}, "seed": 4}
TWO_STATE = {"env": {"kind": "two_state", "gamma": 0.9, "b": 0.5},
             "cup": {"iterations": 3, "horizon_T": 20, "episodes_M": 4}}


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def body(path):
    lines = open(path, encoding="utf-8", newline="").read().split("\n")
    assert lines[0].startswith("# ")
    return "\n".join(lines[1:])


def test_unknown_keys_rejected():
    for doc, key in (({"env": TWO_STATE["env"], "extra": 1}, "extra"),
                     ({"env": {**TWO_STATE["env"], "size": 3}}, "env.size"),
                     ({"env": TWO_STATE["env"], "cup": {"lr": 1}}, "cup.lr"),
                     ({"campaign": {"lambda": [0]}}, "campaign.lambda")):
        with pytest.raises(ConfigError) as err:
            parse_config(doc, require_env="env" in doc)
        assert err.value.key == key


def test_defaults_and_round_trip():
    cfg = parse_config({"env": {"kind": "random", "n_states": 3, "n_actions": 2, "seed": 1}})
    assert cfg.cup.lambda_gae == 0.95 and cfg.campaign.lambdas == (0.0, 0.5, 0.95)
    again = parse_config(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    cfg2 = replace(cfg, output_path="x.csv")
    assert parse_config(json.loads(json.dumps(cfg2.to_dict()))) == cfg2


def test_env_builders():
    g = build_env({"kind": "gridworld", "width": 4, "height": 4, "hazard_cells": [[1, 1]],
                   "goal_cell": [3, 3], "gamma": 0.99, "b": 5.0})
    assert g.n_states == 16
    with pytest.raises(ConfigError):
        build_env({"kind": "gridworld", "width": 4, "height": 4, "hazard_cells": [[3, 3]],
                   "goal_cell": [3, 3], "gamma": 0.99, "b": 5.0})
    with pytest.raises(ConfigError, match="env.gamma"):
        build_env({"kind": "two_state", "b": 1.0})


def test_strict_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"seed": NaN}')
    assert main(["verify-bounds", "--config", str(path)]) == 2
    path.write_text('{"seed": 1, // comment\n}')
    assert main(["verify-bounds", "--config", str(path)]) == 2


def test_empty_lambdas(tmp_path, capsys):
    cfg = write(tmp_path, {"campaign": {"lambdas": []}})
    assert main(["verify-bounds", "--config", cfg]) == 2
    assert "empty lambdas" in capsys.readouterr().err


def test_missing_env_for_train(tmp_path, capsys):
    assert main(["train", "--config", write(tmp_path, {"cup": {}})]) == 2
    assert "env" in capsys.readouterr().err


def test_verify_bounds_lambda_zero_passes(tmp_path):
    doc = {"campaign": {"n_cmdps": 5, "pairs_per_cmdp": 2, "lambdas": [0.0]}}
    out = tmp_path / "b.csv"
    assert main(["verify-bounds", "--config", write(tmp_path, doc), "--output", str(out)]) == 0
    text = body(out)
    assert text.count("\n") == 11 and "\r" not in text


def test_verify_bounds_reports_positive_lambda_violations(tmp_path):
    doc = {"campaign": {"n_cmdps": 20, "pairs_per_cmdp": 5, "lambdas": [0.95]}}
    out = tmp_path / "b.csv"
    assert main(["verify-bounds", "--config", write(tmp_path, doc), "--output", str(out)]) == 1


def test_verify_bounds_deterministic(tmp_path):
    cfg = write(tmp_path, MINI_CAMPAIGN)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["verify-bounds", "--config", cfg, "--output", str(a)])
    main(["verify-bounds", "--config", cfg, "--output", str(b)])
    assert body(a) == body(b)


def test_train_outputs(tmp_path, capsys):
    out = tmp_path / "t.csv"
    doc = {**TWO_STATE, "baseline": True, "output_path": str(out)}
    dp, batch = tmp_path / "dp.json", tmp_path / "batch.jsonl"
    code = main(["train", "--config", write(tmp_path, doc), "--dump-dp", str(dp),
                 "--dump-batch", str(batch)])
    assert code == 0
    assert body(out).count("\n") == 4
    assert (tmp_path / "t_baseline.csv").exists()
    assert set(json.loads(dp.read_text())) == {"reward", "cost"}
    assert len(batch.read_text().splitlines()) == 4
    assert "mean Jc" in capsys.readouterr().out


def test_train_zero_iterations(tmp_path):
    out = tmp_path / "t.csv"
    doc = {**TWO_STATE, "cup": {"iterations": 0}}
    assert main(["train", "--config", write(tmp_path, doc), "--output", str(out)]) == 0
    assert body(out).count("\n") == 1


def test_train_deterministic(tmp_path):
    cfg = write(tmp_path, TWO_STATE)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["train", "--config", cfg, "--output", str(a)])
    main(["train", "--config", cfg, "--output", str(b)])
    assert body(a) == body(b)


def test_describe(tmp_path, capsys):
    assert main(["describe", "--config", write(tmp_path, TWO_STATE)]) == 0
    out = capsys.readouterr().out
    assert "|S|=2  |A|=2" in out and "uniform policy: J=5  Jc=5" in out
    grid = {"env": {"kind": "gridworld", "width": 4, "height": 4, "hazard_cells": [],
                    "goal_cell": [3, 3], "gamma": 0.99, "b": 5.0}}
    main(["describe", "--config", write(tmp_path, grid)])
    assert "|S|=16" in capsys.readouterr().out
    rnd = write(tmp_path, {"env": {"kind": "random", "n_states": 4, "n_actions": 2, "seed": 3}})
    main(["describe", "--config", rnd])
    first = capsys.readouterr().out
    main(["describe", "--config", rnd])
    assert capsys.readouterr().out == first


def test_plots_render(tmp_path):
    pytest.importorskip("matplotlib")
    cfg = write(tmp_path, {**TWO_STATE, "baseline": True})
    png = tmp_path / "train.png"
    assert main(["train", "--config", cfg, "--plot", str(png)]) == 0
    assert png.stat().st_size > 0
    png2 = tmp_path / "bounds.png"
    main(["verify-bounds", "--config", write(tmp_path, MINI_CAMPAIGN, "m.json"), "--plot", str(png2)])
    assert png2.stat().st_size > 0
