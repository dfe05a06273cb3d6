"""CLI dispatch: exit codes, stdout, CSV artifacts, determinism."""

import csv
import dataclasses

import numpy as np
import pytest

from cvahedge.cli import main
from cvahedge.config import load_config, save_config
from cvahedge.harness import CURVE_FIELDS, load_checkpoint
from cvahedge.pricing import cva_quadrature, par_coupon


@pytest.fixture(scope="module")
def fast_yaml(tmp_path_factory):
    root = tmp_path_factory.mktemp("cfg")
    config = load_config("nodefault-100bp")
    fast = dataclasses.replace(
        config, grid_days=12, steps_per_day=5, eval_episodes=40,
        eval_seed=901, betas=(500.0,), name="fast",
        train=dataclasses.replace(config.train, n_episodes=24, iterations=2,
                                  freeze_normalizer_after=1, seed=11))
    path = root / "fast.yaml"
    save_config(fast, path)
    return str(path)


@pytest.fixture(scope="module")
def fast_default_yaml(tmp_path_factory):
    root = tmp_path_factory.mktemp("cfg-default")
    config = load_config("default-500bp")
    fast = dataclasses.replace(
        config, grid_days=12, steps_per_day=5, eval_episodes=30,
        eval_seed=902, betas=(500.0,), name="fast-default",
        train=dataclasses.replace(config.train, n_episodes=24, iterations=1,
                                  seed=12))
    path = root / "fast-default.yaml"
    save_config(fast, path)
    return str(path)


def read_rows(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def test_price_cva_matches_quadrature(fast_yaml, capsys):
    assert main(["price", "cva", "--config", fast_yaml, "--t", "0"]) == 0
    out = capsys.readouterr().out
    value = float(out.strip().rsplit("=", 1)[1])
    config = load_config(fast_yaml)
    direct = cva_quadrature(config.market.fx0, config.market.lambda0, 0.0,
                            config.market)
    assert value == pytest.approx(direct, rel=1e-9)
    assert value == pytest.approx(-3.34e-3, rel=0.01)


def test_price_cds_quote(fast_yaml, capsys):
    assert main(["price", "cds", "--config", fast_yaml, "--lam",
                 "0.02"]) == 0
    out = capsys.readouterr().out
    fields = dict(part.strip().split(" = ")
                  for part in out.split(":", 1)[1].split(","))
    assert float(fields["ask"]) >= float(fields["bid"])
    assert float(fields["mid"]) == pytest.approx(
        0.5 * (float(fields["bid"]) + float(fields["ask"])), rel=1e-9)
    config = load_config(fast_yaml)
    expect = par_coupon(config.market, config.cds[0].maturity, lam=0.02)
    assert float(fields["par_coupon"]) == pytest.approx(expect, rel=1e-9)


def test_simulate_writes_deterministic_csv(fast_yaml, tmp_path, capsys):
    args = ["simulate", "--config", fast_yaml, "--episodes", "4",
            "--seed", "3", "--out", str(tmp_path)]
    assert main(args) == 0
    path = tmp_path / "paths-seed3.csv"
    first = path.read_bytes()
    rows = read_rows(path)
    assert len(rows) == 4 * 61  # episodes x (steps + 1) nodes
    assert main(args) == 0
    assert path.read_bytes() == first


def test_evaluate_delta_hedge_deterministic(fast_yaml, tmp_path, capsys):
    args = ["evaluate", "--config", fast_yaml, "--policy", "delta-hedge",
            "--out", str(tmp_path)]
    assert main(args) == 0
    path = tmp_path / "eval-delta-seed901.csv"
    first = path.read_bytes()
    assert main(args) == 0
    assert path.read_bytes() == first
    row = read_rows(path)[0]
    assert row["label"] == "delta"
    assert float(row["nu2_hat"]) >= 0.0
    assert float(row["eta_hat"]) == pytest.approx(
        float(row["j_hat"]) - 500.0 * float(row["nu2_hat"]), rel=1e-9)


def test_train_then_evaluate_agent(fast_yaml, tmp_path, capsys):
    assert main(["train", "--config", fast_yaml, "--out",
                 str(tmp_path)]) == 0
    curve_path = tmp_path / "curve-beta500-seed11.csv"
    ckpt_path = tmp_path / "agent-beta500-seed11.npz"
    rows = read_rows(curve_path)
    assert len(rows) == 2
    assert list(rows[0]) == CURVE_FIELDS
    policy, meta = load_checkpoint(ckpt_path)
    assert meta["beta"] == 500.0
    assert meta["name"] == "fast"
    assert main(["evaluate", "--config", fast_yaml, "--policy", "agent",
                 "--checkpoint", str(ckpt_path), "--out",
                 str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "agent:beta500-seed11" in out


def test_train_seed_override_changes_artifacts(fast_yaml, tmp_path, capsys):
    assert main(["train", "--config", fast_yaml, "--seed", "13",
                 "--iterations", "1", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "curve-beta500-seed13.csv").exists()
    assert (tmp_path / "agent-beta500-seed13.npz").exists()


def test_frontier_zero_iterations(fast_yaml, tmp_path, capsys):
    args = ["frontier", "--config", fast_yaml, "--beta", "500,2000",
            "--iterations", "0", "--out", str(tmp_path)]
    assert main(args) == 0
    path = tmp_path / "frontier.csv"
    first = path.read_bytes()
    rows = read_rows(path)
    assert [r["label"] for r in rows] == ["zero", "delta", "jump",
                                          "agent-beta500", "agent-beta2000"]
    a500 = next(r for r in rows if r["label"] == "agent-beta500")
    a2000 = next(r for r in rows if r["label"] == "agent-beta2000")
    # 0 iterations: both agent points are the initial policy
    assert a500["j_hat"] == a2000["j_hat"]
    assert a500["nu2_hat"] == a2000["nu2_hat"]
    assert main(args) == 0
    assert path.read_bytes() == first


def test_compare_writes_csv(fast_yaml, tmp_path, capsys):
    assert main(["compare", "--config", fast_yaml, "--policy-a", "delta",
                 "--policy-b", "zero", "--episodes", "200", "--out",
                 str(tmp_path)]) == 0
    row = read_rows(tmp_path / "compare-delta-vs-zero-seed901.csv")[0]
    assert row["label_a"] == "delta" and row["label_b"] == "zero"
    assert 0.0 <= float(row["p_value"]) <= 1.0
    assert row["stars"] in ("", "*", "**", "***")


def test_evaluate_is_mode_forces_defaults(fast_default_yaml, tmp_path,
                                          capsys):
    assert main(["evaluate", "--config", fast_default_yaml, "--policy",
                 "zero", "--mode", "is", "--b0", "2", "--episodes", "30",
                 "--out", str(tmp_path)]) == 0
    row = read_rows(tmp_path / "eval-zero-seed902.csv")[0]
    assert row["mode"] == "is" and row["b0"] == "2"
    # the reported fraction is the reweighted (physical) default
    # probability, not the raw 2/30 imposed by the sampler
    frac = float(row["default_fraction"])
    assert 0.0 < frac < 0.02


def test_simulate_is_mode_exact_default_count(fast_default_yaml, tmp_path,
                                              capsys):
    assert main(["simulate", "--config", fast_default_yaml, "--episodes",
                 "10", "--seed", "4", "--mode", "is", "--b0", "3", "--out",
                 str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "paths-seed4.csv")
    defaulted = {r["episode"] for r in rows if r["defaulted"] == "1"}
    assert len(defaulted) == 3


def test_unknown_policy_fails(fast_yaml, tmp_path, capsys):
    rc = main(["evaluate", "--config", fast_yaml, "--policy", "martingale",
               "--out", str(tmp_path)])
    assert rc != 0
    assert "error:" in capsys.readouterr().err


def test_agent_without_checkpoint_fails(fast_yaml, tmp_path, capsys):
    rc = main(["evaluate", "--config", fast_yaml, "--policy", "agent",
               "--out", str(tmp_path)])
    assert rc != 0
    assert "checkpoint" in capsys.readouterr().err


def test_bad_config_fails(capsys):
    rc = main(["price", "cva", "--config", "no-such-preset"])
    assert rc != 0
    assert "error:" in capsys.readouterr().err


def test_eval_seed_clash_fails(fast_yaml, capsys):
    rc = main(["evaluate", "--config", fast_yaml, "--policy", "zero",
               "--seed", "11"])  # equals the training seed
    assert rc != 0
    assert "seed" in capsys.readouterr().err


def test_unknown_flag_exits_nonzero(fast_yaml, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["evaluate", "--config", fast_yaml, "--frobnicate"])
    assert exc.value.code == 2


def test_dump_trajectories(fast_yaml, tmp_path, capsys):
    assert main(["evaluate", "--config", fast_yaml, "--policy", "zero",
                 "--dump-trajectories", "2", "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "trajectories-zero-seed901.csv")
    assert {r["episode"] for r in rows} == {"0", "1"}
    acts = {float(r["act_dphi"]) for r in rows}
    assert acts == {0.0}  # zero policy acts nowhere
