"""CLI subcommands, validation exits, and manifest reproducibility."""

import json
from pathlib import Path

import numpy as np
import pytest

from gridgsp import cli
from gridgsp.cases import case_path


def run_cli(*argv):
    return cli.main(list(argv))


def artifact_hashes(outdir: Path) -> dict:
    with open(outdir / "manifest.json") as fh:
        return json.load(fh)["artifacts"]


@pytest.fixture(scope="module")
def case2_path():
    return case_path("case2")


@pytest.fixture(scope="module")
def case4_path():
    return case_path("case4")


def test_build_gso_matches_module_example(tmp_path, case2_path):
    rc = run_cli("build-gso", "--case", case2_path, "--out", str(tmp_path))
    assert rc == 0
    from gridgsp.gso import load_gso

    g = load_gso(tmp_path / "gso.txt")
    assert np.array_equal(g.b_hat, [[10.0, -10.0], [-10.0, 10.0]])


def test_place_pmus_all_nodes(tmp_path, case4_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"placement": {"k": 3, "m": 12}}))
    rc = run_cli("place-pmus", "--case", case4_path, "--out", str(tmp_path),
                 "--config", str(cfg))
    assert rc == 0
    lines = (tmp_path / "placement.csv").read_text().strip().splitlines()
    assert len(lines) == 13  # header + 12 nodes
    listed = {int(ln.split(",")[3]) for ln in lines[1:]}
    assert listed == set(range(12))


def test_invalid_mu1_exits_2_before_compute(tmp_path, case4_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"estimate": {"mu1": -1.0}}))
    rc = run_cli("estimate", "--case", case4_path, "--out", str(tmp_path / "o"),
                 "--config", str(cfg), "--seed", "1")
    assert rc == 2
    assert not (tmp_path / "o").exists()


def test_missing_seed_exits_2(tmp_path, case4_path):
    rc = run_cli("gen-data", "--case", case4_path, "--out", str(tmp_path))
    assert rc == 2


def test_missing_case_exits_2(tmp_path):
    rc = run_cli("build-gso", "--case", "/nonexistent.json", "--out", str(tmp_path))
    assert rc == 2


def test_gen_data_and_estimate(tmp_path, case4_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"data": {"steps": 12}}))
    out = tmp_path / "gen"
    rc = run_cli("gen-data", "--case", case4_path, "--out", str(out),
                 "--config", str(cfg), "--seed", "3")
    assert rc == 0
    rows = (out / "series.csv").read_text().strip().splitlines()
    assert len(rows) == 1 + 12 * 12

    out2 = tmp_path / "est"
    rc = run_cli("estimate", "--case", case4_path, "--out", str(out2),
                 "--config", str(cfg), "--seed", "3")
    assert rc == 0
    metrics = (out2 / "estimate_metrics.csv").read_text().splitlines()
    mean_err = float(metrics[1].split(",")[0])
    assert 0 < mean_err < 5e-3  # noiseless 6-of-12 recovery is near exact


def test_forecast_train_eval_cycle(tmp_path, case4_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(
        json.dumps(
            {
                "data": {"steps": 60},
                "forecast": {"epochs": 30, "horizon": 1, "channels": 2,
                              "hidden": [12], "patience": 30},
            }
        )
    )
    out = tmp_path / "ft"
    rc = run_cli("forecast-train", "--case", case4_path, "--out", str(out),
                 "--config", str(cfg), "--seed", "5")
    assert rc == 0
    assert (out / "checkpoint.json").exists()
    trace = (out / "loss_trace.csv").read_text().strip().splitlines()
    assert len(trace) >= 2

    cfg2 = tmp_path / "cfg2.json"
    doc = json.loads(cfg.read_text())
    doc["forecast"]["checkpoint"] = str(out / "checkpoint.json")
    cfg2.write_text(json.dumps(doc))
    out2 = tmp_path / "fe"
    rc = run_cli("forecast-eval", "--case", case4_path, "--out", str(out2),
                 "--config", str(cfg2), "--seed", "5")
    assert rc == 0
    lines = (out2 / "forecast_metrics.csv").read_text().strip().splitlines()
    assert lines[1].startswith("gcn") and lines[2].startswith("persistence")


def test_drl_train_eval_cycle(tmp_path, case4_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(
        json.dumps(
            {
                "drl": {
                    "episodes": 8,
                    "t_window": 3,
                    "channels": 2,
                    "hidden": [8],
                    "rollout_episodes": 4,
                    "update_epochs": 2,
                    "minibatch": 32,
                    "eval_episodes": 2,
                }
            }
        )
    )
    out = tmp_path / "dt"
    rc = run_cli("drl-train", "--case", case4_path, "--out", str(out),
                 "--config", str(cfg), "--seed", "7")
    assert rc == 0
    assert (out / "policy.json").exists()
    trace = (out / "reward_trace.csv").read_text().strip().splitlines()
    assert len(trace) == 9

    doc = json.loads(cfg.read_text())
    doc["drl"]["checkpoint"] = str(out / "policy.json")
    cfg2 = tmp_path / "cfg2.json"
    cfg2.write_text(json.dumps(doc))
    out2 = tmp_path / "de"
    rc = run_cli("drl-eval", "--case", case4_path, "--out", str(out2),
                 "--config", str(cfg2), "--seed", "7")
    assert rc == 0
    line = (out2 / "drl_metrics.csv").read_text().strip().splitlines()[1]
    dev, base, ratio = (float(x) for x in line.split(","))
    assert dev > 0 and base > 0


@pytest.mark.parametrize(
    "sub,extra",
    [
        ("gen-data", {"data": {"steps": 8}}),
        ("build-gso", {}),
        ("place-pmus", {"placement": {"k": 2, "m": 3}}),
        ("estimate", {"data": {"steps": 6}}),
        (
            "forecast-train",
            {"data": {"steps": 40},
             "forecast": {"epochs": 5, "channels": 2, "hidden": [8],
                           "patience": 5}},
        ),
        (
            "drl-train",
            {"drl": {"episodes": 4, "t_window": 3, "channels": 2, "hidden": [8],
                      "rollout_episodes": 2, "update_epochs": 1,
                      "minibatch": 16}},
        ),
    ],
)
def test_manifest_reexecution_identical_hashes(tmp_path, case4_path, sub, extra):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(extra))
    out1 = tmp_path / "run1"
    rc = run_cli(sub, "--case", case4_path, "--out", str(out1),
                 "--config", str(cfg), "--seed", "11")
    assert rc == 0
    out2 = tmp_path / "run2"
    rc = run_cli(sub, "--from-manifest", str(out1 / "manifest.json"),
                 "--out", str(out2))
    assert rc == 0
    h1, h2 = artifact_hashes(out1), artifact_hashes(out2)
    assert h1 == h2 and len(h1) >= 1


def test_no_subcommand_mutates_inputs(tmp_path, case4_path):
    before = Path(case4_path).read_bytes()
    run_cli("build-gso", "--case", case4_path, "--out", str(tmp_path))
    assert Path(case4_path).read_bytes() == before
