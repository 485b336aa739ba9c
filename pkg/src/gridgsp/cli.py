"""Batch command-line interface over the pipeline.

Every run validates its configuration before touching any compute, writes
its artifacts plus a ``manifest.json`` (resolved config, seed, package
version, sha256 of every artifact) into ``--out``, and can be re-executed
bit-for-bit from that manifest alone via ``--from-manifest``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from importlib.metadata import version as pkg_version
from pathlib import Path

import numpy as np

from . import forecasting as fc
from . import grid_model as gm
from . import gso as gsolib
from . import gsp, nn, sampling
from . import voltvar as vv

SUBCOMMANDS = (
    "gen-data",
    "build-gso",
    "place-pmus",
    "estimate",
    "forecast-train",
    "forecast-eval",
    "drl-train",
    "drl-eval",
)

STOCHASTIC = {
    "gen-data",
    "estimate",
    "forecast-train",
    "forecast-eval",
    "drl-train",
    "drl-eval",
}

DEFAULTS = {
    "data": {
        "steps": 200,
        "rho": 0.25,
        "sigma": 0.004,
        "nominal_p": -0.02,
        "power_factor": 0.95,
    },
    "placement": {"k": 3, "m": 4},
    "estimate": {"mu1": 1e-6, "noise_sigma": 0.0, "m": 6},
    "forecast": {
        "model": "gcn",
        "t_window": 10,
        "horizon": 1,
        "mu1": 1e-6,
        "mu2": 1e-3,
        "epochs": 500,
        "lr": 5e-3,
        "order": 2,
        "channels": 4,
        "hidden": [48],
        "observed": "all",
        "noise_sigma": 0.0,
        "patience": 200,
        "checkpoint": None,
    },
    "drl": {
        "model": "gcn",
        "episodes": 100,
        "t_window": 5,
        "observed": "all",
        "nominal_p": -0.12,
        "order": 2,
        "channels": 4,
        "hidden": [64],
        "lr": 0.0007,
        "gamma": 0.99,
        "clip": 0.1,
        "entropy_weight": 0.01,
        "value_weight": 1.0,
        "rollout_episodes": 8,
        "update_epochs": 16,
        "minibatch": 96,
        "eval_episodes": 8,
        "checkpoint": None,
    },
}


class ConfigError(Exception):
    pass


def _resolve_config(args) -> dict:
    cfg: dict = {}
    if args.from_manifest:
        with open(args.from_manifest) as fh:
            manifest = json.load(fh)
        cfg = manifest["config"]
        cfg["seed"] = manifest["seed"]
    elif args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
    # flags override config fields
    if args.case is not None:
        cfg["case"] = args.case
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    for section, defaults in DEFAULTS.items():
        merged = dict(defaults)
        merged.update(cfg.get(section, {}))
        cfg[section] = merged
    return cfg


def _validate(sub: str, cfg: dict) -> None:
    if "case" not in cfg:
        raise ConfigError("missing case path (--case or config key 'case')")
    if not Path(cfg["case"]).exists():
        raise ConfigError(f"case file not found: {cfg['case']}")
    if "out" not in cfg:
        raise ConfigError("missing output directory (--out or config key 'out')")
    if sub in STOCHASTIC and "seed" not in cfg:
        raise ConfigError(f"{sub} requires an explicit --seed")
    d = cfg["data"]
    if not (0 <= abs(d["rho"]) < 1):
        raise ConfigError("data.rho must satisfy |rho| < 1")
    if d["sigma"] < 0:
        raise ConfigError("data.sigma must be nonnegative")
    if d["steps"] < 1:
        raise ConfigError("data.steps must be positive")
    p = cfg["placement"]
    if p["k"] < 1 or p["m"] < 1:
        raise ConfigError("placement.k and placement.m must be positive")
    e = cfg["estimate"]
    if e["mu1"] < 0:
        raise ConfigError("estimate.mu1 must be nonnegative")
    if e["noise_sigma"] < 0:
        raise ConfigError("estimate.noise_sigma must be nonnegative")
    f = cfg["forecast"]
    if f["mu1"] < 0 or f["mu2"] < 0:
        raise ConfigError("forecast.mu1/mu2 must be nonnegative")
    if f["t_window"] < 1 or f["horizon"] < 0 or f["epochs"] < 1:
        raise ConfigError("forecast.t_window/horizon/epochs out of range")
    if f["model"] not in ("gcn", "grn"):
        raise ConfigError("forecast.model must be 'gcn' or 'grn'")
    r = cfg["drl"]
    if not 0 < r["gamma"] < 1:
        raise ConfigError("drl.gamma must lie in (0, 1)")
    if r["clip"] <= 0:
        raise ConfigError("drl.clip must be positive")
    if r["episodes"] < 1:
        raise ConfigError("drl.episodes must be positive")
    if r["model"] not in ("gcn", "grn"):
        raise ConfigError("drl.model must be 'gcn' or 'grn'")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(
                ",".join(
                    f"{v:.17g}" if isinstance(v, float) else str(v) for v in row
                )
                + "\n"
            )


def _write_manifest(out: Path, sub: str, cfg: dict, artifacts: list[Path]) -> None:
    manifest = {
        "subcommand": sub,
        "config": {k: v for k, v in cfg.items() if k != "out"},
        "seed": cfg.get("seed"),
        "version": pkg_version("gridgsp"),
        "artifacts": {p.name: _sha256(p) for p in sorted(artifacts)},
    }
    manifest["config"]["out"] = str(out)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _load_inputs(cfg):
    case = gm.load_case(cfg["case"])
    y = gm.assemble_admittance(case)
    g = gsolib.build_real_gso(case)
    return case, y, g


def _series(cfg, case, y):
    d = cfg["data"]
    proc = fc.ArProcess(
        rho=d["rho"],
        sigma=d["sigma"],
        nominal_p=d["nominal_p"],
        power_factor=d["power_factor"],
    )
    return fc.generate_synthetic_series(case, d["steps"], proc, cfg["seed"], y=y)


def _observed_nodes(spec, case, g, m_default):
    """'all', an explicit node-index list, or 'auto' (placement of m nodes)."""
    if spec == "all":
        return tuple(range(case.n_nodes))
    if spec == "auto":
        basis = gsp.gft(g.b_hat)
        return sampling.place_pmus(basis, min(3, case.n_nodes), m_default).selected
    return tuple(int(i) for i in spec)


def run(sub: str, cfg: dict) -> list[Path]:
    """Execute one subcommand; returns the artifact paths written."""
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    case, y, g = _load_inputs(cfg)
    artifacts: list[Path] = []

    if sub == "gen-data":
        series = _series(cfg, case, y)
        rows = []
        for t, op in enumerate(series.ops):
            for i, node in enumerate(case.nodes):
                rows.append(
                    (
                        t,
                        node.bus,
                        node.phase,
                        float(op.v[i].real),
                        float(op.v[i].imag),
                        float(series.injections[t, i].real),
                        float(series.injections[t, i].imag),
                    )
                )
        path = out / "series.csv"
        _write_csv(path, ["step", "bus", "phase", "v_re", "v_im", "p", "q"], rows)
        artifacts.append(path)

    elif sub == "build-gso":
        path = out / "gso.txt"
        gsolib.save_gso(path, g, case)
        artifacts.append(path)

    elif sub == "place-pmus":
        p = cfg["placement"]
        basis = gsp.gft(g.b_hat)
        res = sampling.place_pmus(basis, p["k"], p["m"])
        rows = [
            (rank, case.nodes[i].bus, case.nodes[i].phase, int(i))
            for rank, i in enumerate(res.selected)
        ]
        path = out / "placement.csv"
        _write_csv(path, ["rank", "bus", "phase", "node_index"], rows)
        meta = out / "placement_score.csv"
        _write_csv(meta, ["sigma_min"], [(float(res.sigma_min),)])
        artifacts += [path, meta]

    elif sub == "estimate":
        e = cfg["estimate"]
        series = _series(cfg, case, y)
        basis = gsp.gft(g.b_hat)
        m = min(e["m"], case.n_nodes)
        observed = sampling.place_pmus(basis, min(3, case.n_nodes), m).selected
        model = sampling.build_measurement_model(y, observed)
        rng = np.random.default_rng(cfg["seed"] + 1)
        rows = []
        errs = []
        for t, op in enumerate(series.ops):
            z = sampling.measure(
                op.v, y, observed, noise_sigma=e["noise_sigma"],
                rng=rng if e["noise_sigma"] > 0 else None,
            )
            v_hat = sampling.recover_state(z, model, reg=g.b_hat, mu1=e["mu1"])
            errs.append(float(np.linalg.norm(v_hat - op.v)))
            for i, node in enumerate(case.nodes):
                rows.append(
                    (t, node.bus, node.phase,
                     float(v_hat[i].real), float(v_hat[i].imag))
                )
        path = out / "recovered.csv"
        _write_csv(path, ["step", "bus", "phase", "v_re", "v_im"], rows)
        mpath = out / "estimate_metrics.csv"
        _write_csv(
            mpath,
            ["mean_recovery_error", "max_recovery_error", "observed_nodes"],
            [(float(np.mean(errs)), float(np.max(errs)),
              ";".join(str(i) for i in observed))],
        )
        artifacts += [path, mpath]

    elif sub in ("forecast-train", "forecast-eval"):
        f = cfg["forecast"]
        series = _series(cfg, case, y)
        observed = _observed_nodes(f["observed"], case, g, cfg["estimate"]["m"])
        data = fc.build_dataset(
            series, case, y, g, observed,
            t_window=f["t_window"], horizon=f["horizon"], mu1=f["mu1"],
            noise_sigma=f["noise_sigma"], seed=cfg["seed"] + 1,
        )
        train, val, test = fc.time_split(data)
        s_op = fc.forecast_operator(g)
        if sub == "forecast-train":
            cls = nn.GcnModel if f["model"] == "gcn" else nn.GrnModel
            model = cls(
                n_sig=2 * case.n_nodes, order=f["order"],
                t_window=f["t_window"], channels=f["channels"],
                hidden_dims=tuple(f["hidden"]), seed=cfg["seed"],
            )
            res = fc.train_forecaster(
                model, train, s_op, y, case.nodes, mu2=f["mu2"],
                epochs=f["epochs"], lr=f["lr"], val_data=val,
                patience=f["patience"],
            )
            ck = out / "checkpoint.json"
            nn.save_checkpoint(ck, model, s_op, extra={"horizon": f["horizon"]})
            tr = out / "loss_trace.csv"
            _write_csv(
                tr,
                ["epoch", "train_loss", "val_loss"],
                [
                    (i, float(l), float(res.val_trace[i]) if i < len(res.val_trace) else "")
                    for i, l in enumerate(res.loss_trace)
                ],
            )
            artifacts += [ck, tr]
        else:
            ck = f["checkpoint"] or str(out / "checkpoint.json")
            if not Path(ck).exists():
                raise ConfigError(f"checkpoint not found: {ck}")
            model = nn.load_checkpoint(ck, s=s_op)
            metrics = fc.evaluate_forecaster(model, test, s_op, g)
            pers = fc.persistence_metrics(test, g)
            path = out / "forecast_metrics.csv"
            _write_csv(
                path,
                ["predictor", "mse", "injection_mape"],
                [
                    (f["model"], metrics.mse, metrics.mape_proxy),
                    ("persistence", pers.mse, pers.mape_proxy),
                ],
            )
            artifacts.append(path)

    elif sub in ("drl-train", "drl-eval"):
        r = cfg["drl"]
        observed = (
            None
            if r["observed"] == "all"
            else _observed_nodes(r["observed"], case, g, cfg["estimate"]["m"])
        )
        env = vv.VoltVarEnv(
            case, g, observed=observed, t_window=r["t_window"],
            nominal_p=r["nominal_p"],
        )
        s_op = env.policy_operator()
        if sub == "drl-train":
            policy = vv.VoltVarPolicy(
                r["model"], n_sig=env.obs_dim, n_inverters=env.n_inverters,
                order=r["order"], t_window=r["t_window"], channels=r["channels"],
                hidden_dims=tuple(r["hidden"]), seed=cfg["seed"],
            )
            config = vv.PpoConfig(
                lr=r["lr"], gamma=r["gamma"], clip=r["clip"],
                entropy_weight=r["entropy_weight"],
                value_weight=r["value_weight"],
                rollout_episodes=r["rollout_episodes"],
                update_epochs=r["update_epochs"], minibatch=r["minibatch"],
            )
            res = vv.ppo_train(env, policy, config, r["episodes"], cfg["seed"])
            ck = out / "policy.json"
            nn.save_checkpoint(
                ck, policy.trunk, s_op,
                extra={
                    "policy_heads": {
                        "w_pi": policy.w_pi.data.tolist(),
                        "b_pi": policy.b_pi.data.tolist(),
                        "w_v": policy.w_v.data.tolist(),
                        "b_v": policy.b_v.data.tolist(),
                    },
                    "n_inverters": env.n_inverters,
                    "kind": r["model"],
                },
            )
            tr = out / "reward_trace.csv"
            _write_csv(
                tr,
                ["episode", "mean_reward", "mean_deviation"],
                [
                    (i, float(rw), float(res.episode_deviation[i]))
                    for i, rw in enumerate(res.episode_rewards)
                ],
            )
            artifacts += [ck, tr]
        else:
            ck = r["checkpoint"] or str(out / "policy.json")
            if not Path(ck).exists():
                raise ConfigError(f"policy checkpoint not found: {ck}")
            policy = load_policy(ck, env, s_op)
            base = vv.zero_action_baseline(env, r["eval_episodes"], cfg["seed"] + 7)
            dev = vv.evaluate_policy(env, policy, r["eval_episodes"],
                                     cfg["seed"] + 7, greedy=True)
            path = out / "drl_metrics.csv"
            _write_csv(
                path,
                ["policy_deviation", "zero_action_deviation", "ratio"],
                [(dev, base, dev / base if base > 0 else float("nan"))],
            )
            artifacts.append(path)
    else:
        raise ConfigError(f"unknown subcommand {sub}")

    _write_manifest(out, sub, cfg, artifacts)
    return artifacts


def load_policy(path, env: vv.VoltVarEnv, s_op: np.ndarray) -> vv.VoltVarPolicy:
    """Rebuild a policy from its checkpoint (trunk + head arrays)."""
    with open(path) as fh:
        doc = json.load(fh)
    extra = doc["extra"]
    cfg = doc["config"]
    policy = vv.VoltVarPolicy(
        extra["kind"], n_sig=cfg["n_sig"], n_inverters=extra["n_inverters"],
        order=cfg["order"], t_window=cfg["t_window"], channels=cfg["channels"],
        hidden_dims=tuple(cfg["hidden_dims"]),
    )
    policy.trunk = nn.load_checkpoint(path, s=s_op)
    heads = extra["policy_heads"]
    policy.w_pi.data = np.asarray(heads["w_pi"])
    policy.b_pi.data = np.asarray(heads["b_pi"])
    policy.w_v.data = np.asarray(heads["w_v"])
    policy.b_v.data = np.asarray(heads["b_v"])
    return policy


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gridgsp",
        description="grid graph-signal-processing pipeline",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="JSON config document")
    parser.add_argument("--case", help="case file path (overrides config)")
    parser.add_argument("--seed", type=int, help="RNG seed (overrides config)")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument(
        "--from-manifest",
        help="re-execute from a previous run's manifest (config+seed)",
    )
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        _validate(args.subcommand, cfg)
    except (ConfigError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        artifacts = run(args.subcommand, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure -> structured message, exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for p in artifacts:
        print(p)
    print(Path(cfg["out"]) / "manifest.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
