"""Command-line entry point: experiment commands, timing benchmarks and
plottable result emission.

    gridtwin <command> --config <file> --seed <n> --out <dir> [...]

Every experiment writes comma-separated metric files plus a manifest
(config hash, seed, versions, resolved arguments) into its own output
directory; metric files reproduce bit-identically under a fixed seed
(timing columns exempt).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import backend_name
from .grid_model import default_spec_path, load_network_spec


def _load_spec(args):
    path = args.config if args.config else default_spec_path()
    spec = load_network_spec(path)
    if getattr(args, "horizon", None):
        from dataclasses import replace
        spec = replace(spec, horizon=args.horizon)
    return spec, str(path)


def _write_manifest(out: Path, command: str, config_path: str, args, extra=None):
    import numba
    import scipy
    import yaml

    with open(config_path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    doc = {
        "command": command,
        "config_path": str(config_path),
        "config_sha256": digest,
        "seed": args.seed,
        "backend": backend_name(),
        "versions": {
            "gridtwin": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
            "pyyaml": yaml.__version__,
        },
        "args": {k: v for k, v in vars(args).items() if k != "func"},
    }
    if extra:
        doc.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, default=str)


# ---------------------------------------------------------------------------
# commands

def cmd_train_surrogate(args):
    from . import oracle_env, pinn_surrogate as ps

    spec, config_path = _load_spec(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    oracle_env.reset_step_counter()
    bundle = ps.new_bundle(spec, seed=args.seed)
    cfg = ps.TrainConfig(max_steps=args.steps, window=args.window, seed=args.seed)
    results = ps.train_all(bundle, cfg)
    for name, (history, stats) in results.items():
        ps.write_loss_history(out / f"loss_{name}.csv", history)
        print(f"{name}: {stats['steps']} steps, best loss {stats['best_loss']:.3e} "
              f"({stats['seconds']:.0f}s)")
    ps.save_bundle(out / "bundle.npz", bundle)
    consumed = oracle_env.step_counter()
    if consumed != 0:
        raise RuntimeError(f"surrogate training consumed {consumed} oracle transitions")
    _write_manifest(out, "train-surrogate", config_path, args,
                    {"oracle_steps_consumed": consumed})
    print(f"bundle written to {out / 'bundle.npz'} (oracle transitions consumed: 0)")


def cmd_gen_datasets(args):
    from .baselines import build_agent_dataset, build_generative_dataset

    spec, config_path = _load_spec(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gen = build_generative_dataset(spec, args.rows, seed=args.seed)
    gen.save_csv(out / "dataset_generative.csv", spec)
    agent = build_agent_dataset(spec, args.rows, seed=args.seed,
                                rollout_horizon=args.rollout_horizon)
    agent.save_csv(out / "dataset_agent.csv", spec)
    _write_manifest(out, "gen-datasets", config_path, args)
    print(f"wrote {gen.size}-row generative and {agent.size}-row agent datasets to {out}")


def cmd_fit_baselines(args):
    from .baselines import evaluate_open_loop, fit_baseline, load_dataset_csv

    spec, config_path = _load_spec(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_dir = Path(args.datasets) if args.datasets else out
    rows = []
    for kind_file, kind in (("dataset_generative.csv", "generative"),
                            ("dataset_agent.csv", "agent-based")):
        path = data_dir / kind_file
        if not path.exists():
            raise SystemExit(f"missing {path}; run `gridtwin gen-datasets --out {data_dir}` first")
        ds = load_dataset_csv(path, spec)
        for model_kind in ("linear", "mlp"):
            reg = fit_baseline(model_kind, ds, seed=args.seed, max_steps=args.steps)
            _save_regressor(out / f"baseline_{model_kind}_{kind}.npz", reg)
            metrics = evaluate_open_loop(reg, spec, ds)
            rows.append((model_kind, kind, metrics["r2_mean"], metrics["mae_mean"]))
            print(f"{model_kind} on {kind}: R2 {metrics['r2_mean']:.4f} "
                  f"MAE {metrics['mae_mean']:.4f}")
    with open(out / "baseline_metrics.csv", "w") as fh:
        fh.write("model,dataset_kind,r2_mean,mae_mean\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]!r},{r[3]!r}\n")
    _write_manifest(out, "fit-baselines", config_path, args)


def _save_regressor(path, reg):
    from .baselines import BaselineRegressor

    if reg.kind == "linear":
        np.savez(path, kind=np.array([0]), coef=reg.coef,
                 dataset_kind=np.frombuffer(reg.dataset_kind.encode(), np.uint8))
    else:
        payload = {"kind": np.array([1]),
                   "dataset_kind": np.frombuffer(reg.dataset_kind.encode(), np.uint8),
                   "dims": np.array([reg.net.n_in, reg.net.hidden, reg.net.n_out]),
                   "in_min": reg.in_scaler.mins, "in_max": reg.in_scaler.maxs,
                   "out_min": reg.out_scaler.mins, "out_max": reg.out_scaler.maxs}
        for k, v in reg.net.params.items():
            payload[f"param_{k}"] = v
        np.savez(path, **payload)


def load_regressor(path):
    from .baselines import BaselineRegressor
    from .nn_core import PARAM_NAMES, MlpModel, Scaler

    with np.load(path, allow_pickle=False) as data:
        dataset_kind = bytes(data["dataset_kind"]).decode()
        if int(data["kind"][0]) == 0:
            return BaselineRegressor(kind="linear", dataset_kind=dataset_kind,
                                     fitted=True, coef=data["coef"].copy())
        n_in, hidden, n_out = (int(v) for v in data["dims"])
        net = MlpModel(n_in=n_in, n_out=n_out, hidden=hidden,
                       params={k: data[f"param_{k}"].copy() for k in PARAM_NAMES})
        return BaselineRegressor(
            kind="mlp", dataset_kind=dataset_kind, fitted=True, net=net,
            in_scaler=Scaler(data["in_min"], data["in_max"]),
            out_scaler=Scaler(data["out_min"], data["out_max"]))


def _load_bundle(args, spec):
    from .pinn_surrogate import load_bundle
    from .terminal_classifier import GbtModel

    if not args.bundle:
        raise SystemExit("this command needs --bundle <bundle.npz> "
                         "(run `gridtwin train-surrogate` first)")
    classifier = GbtModel.load(args.classifier) if getattr(args, "classifier", None) else None
    return load_bundle(args.bundle, spec, classifier=classifier)


def cmd_train_policy(args):
    from .rl_training import PpoConfig, train_policy

    spec, config_path = _load_spec(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = PpoConfig(n_envs=args.n_envs, buffer_size=args.buffer_size,
                    max_updates=args.updates, eval_horizon=args.eval_horizon,
                    seed=args.seed)
    bundle = _load_bundle(args, spec) if args.env_kind == "pinn" else None
    model = load_regressor(args.model) if args.env_kind == "baseline-model" else None
    if args.env_kind == "baseline-model" and model is None:
        raise SystemExit("--model is required for env-kind baseline-model")
    policy, record = train_policy(args.env_kind, spec, cfg, bundle=bundle,
                                  model=model, log=True)
    record.save_csv(out / f"train_{args.env_kind}.csv")
    _save_policy(out / f"policy_{args.env_kind}.npz", policy)
    best = max(r[2] for r in record.updates)
    print(f"{args.env_kind}: {len(record.updates)} updates, best eval reward {best:.2f}")
    _write_manifest(out, "train-policy", config_path, args)


def _save_policy(path, policy):
    payload = {"log_std": policy.log_std, "obs_mid": policy.obs_mid,
               "obs_half": policy.obs_half, "low": policy.low, "high": policy.high}
    for k, v in policy.actor.params.items():
        payload[f"actor_{k}"] = v
    for k, v in policy.critic.params.items():
        payload[f"critic_{k}"] = v
    np.savez(path, **payload)


def load_policy(path, spec):
    from .rl_training import PolicyModel

    policy = PolicyModel(spec, seed=0)
    with np.load(path, allow_pickle=False) as data:
        policy.log_std = data["log_std"].copy()
        policy.obs_mid = data["obs_mid"].copy()
        policy.obs_half = data["obs_half"].copy()
        policy.low = data["low"].copy()
        policy.high = data["high"].copy()
        for k in policy.actor.params:
            policy.actor.params[k] = data[f"actor_{k}"].copy()
        for k in policy.critic.params:
            policy.critic.params[k] = data[f"critic_{k}"].copy()
    return policy


def cmd_sweep(args):
    from .rl_training import PpoConfig, save_sweep_csv, sweep_structural_params

    spec, config_path = _load_spec(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle = _load_bundle(args, spec)
    n_envs_grid = [int(v) for v in args.n_envs_grid.split(",")]
    buffer_grid = [int(v) for v in args.buffer_grid.split(",")]
    cfg = PpoConfig(eval_horizon=args.eval_horizon, seed=args.seed)
    rows, corr = sweep_structural_params(spec, bundle, n_envs_grid, buffer_grid, cfg,
                                         transition_budget=args.transition_budget,
                                         log=True)
    save_sweep_csv(out / "sweep.csv", rows)
    with open(out / "sweep_correlations.json", "w") as fh:
        json.dump(corr, fh, indent=1, sort_keys=True)
    print("correlations:", json.dumps(corr, sort_keys=True))
    _write_manifest(out, "sweep", config_path, args)


def cmd_episodic_mae(args):
    from .baselines import episode_from_policy, evaluate_episodic, load_dataset_csv
    from .rl_training import PolicyModel

    spec, config_path = _load_spec(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle = _load_bundle(args, spec)
    models = {"pinn": bundle}
    model_dir = Path(args.models) if args.models else out
    for model_kind in ("linear", "mlp"):
        for kind in ("generative", "agent-based"):
            path = model_dir / f"baseline_{model_kind}_{kind}.npz"
            if path.exists():
                models[f"{model_kind}[{kind}]"] = load_regressor(path)
    if len(models) == 1:
        raise SystemExit(f"no baseline models found under {model_dir}; "
                         "run `gridtwin fit-baselines` first")

    rng = np.random.default_rng(args.seed)
    low, high = spec.action_bounds()
    policies = {"random": lambda obs, t: rng.uniform(low, high)}
    if args.policy:
        expert = load_policy(args.policy, spec)
        policies["expert"] = lambda obs, t: expert.act_deterministic(obs[None])[0]

    summary = []
    for pol_name, pol in policies.items():
        states, actions, _ = episode_from_policy(spec, pol, args.eval_horizon,
                                                 seed=args.seed)
        series = {}
        for name, model in models.items():
            res = evaluate_episodic(model, spec, states, actions)
            series[name] = res["per_step_mae"]
            summary.append((pol_name, name, res["episodic_mae"]))
        with open(out / f"episodic_mae_{pol_name}.csv", "w") as fh:
            fh.write("step," + ",".join(series) + "\n")
            n_steps = len(next(iter(series.values())))
            for t in range(n_steps):
                fh.write(",".join([str(t)] + [repr(float(series[m][t])) for m in series]) + "\n")
    with open(out / "episodic_mae_summary.csv", "w") as fh:
        fh.write("policy,model,episodic_mae\n")
        for row in summary:
            fh.write(f"{row[0]},{row[1]},{row[2]!r}\n")
    for row in summary:
        print(f"{row[0]:>7} | {row[1]:<22} episodic MAE {row[2]:.4f}")
    _write_manifest(out, "episodic-mae", config_path, args)


def cmd_bench(args):
    from .bench import bench_inference, bench_kernels

    spec, config_path = _load_spec(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle = _load_bundle(args, spec)
    report = bench_inference(spec, bundle, n=args.transitions, seed=args.seed)
    with open(out / "bench_inference.csv", "w") as fh:
        fh.write("quantity,value\n")
        for k, v in report.items():
            fh.write(f"{k},{v!r}\n")
    print(f"oracle median {report['oracle_median_s'] * 1e3:.3f} ms | "
          f"surrogate median {report['surrogate_median_s'] * 1e3:.3f} ms | "
          f"speedup x{report['speedup']:.2f} over {int(report['n_transitions'])} transitions")
    if args.kernels:
        rows = bench_kernels(spec, bundle, seed=args.seed)
        with open(out / "bench_kernels.csv", "w") as fh:
            fh.write("kernel,numpy_ms,numba_ms,ratio\n")
            for r in rows:
                fh.write(f"{r[0]},{r[1]!r},{r[2]!r},{r[3]!r}\n")
                print(f"kernel {r[0]}: numpy {r[1]:.3f} ms, numba {r[2]:.3f} ms "
                      f"(x{r[3]:.1f})")
    _write_manifest(out, "bench", config_path, args)


def run_experiment(name: str, argv=None):
    """Programmatic entry mirroring `gridtwin <name> ...`."""
    return main([name] + list(argv or []))


def main(argv=None):
    parser = argparse.ArgumentParser(prog="gridtwin", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="network config file (default: bundled)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="runs/out", help="output directory")

    p = sub.add_parser("train-surrogate", help="train the three physics networks")
    common(p)
    p.add_argument("--steps", type=int, default=60000, help="max optimizer steps per net")
    p.add_argument("--window", type=int, default=5000, help="early-stop window")
    p.set_defaults(func=cmd_train_surrogate)

    p = sub.add_parser("gen-datasets", help="build generative and agent-based datasets")
    common(p)
    p.add_argument("--rows", type=int, default=100000)
    p.add_argument("--rollout-horizon", type=int, default=288)
    p.set_defaults(func=cmd_gen_datasets)

    p = sub.add_parser("fit-baselines", help="fit linear and MLP baseline regressors")
    common(p)
    p.add_argument("--datasets", default=None, help="directory holding dataset CSVs")
    p.add_argument("--steps", type=int, default=30000, help="MLP training steps")
    p.set_defaults(func=cmd_fit_baselines)

    p = sub.add_parser("train-policy", help="PPO training on oracle/surrogate/baseline")
    common(p)
    p.add_argument("--env-kind", choices=("oracle", "pinn", "baseline-model"),
                   default="oracle")
    p.add_argument("--bundle", default=None, help="surrogate bundle (pinn kind)")
    p.add_argument("--classifier", default=None, help="terminal classifier json")
    p.add_argument("--model", default=None, help="baseline regressor (baseline-model kind)")
    p.add_argument("--n-envs", type=int, default=100)
    p.add_argument("--buffer-size", type=int, default=30)
    p.add_argument("--updates", type=int, default=150)
    p.add_argument("--eval-horizon", type=int, default=288)
    p.set_defaults(func=cmd_train_policy)

    p = sub.add_parser("sweep", help="structural-parameter sweep on the surrogate")
    common(p)
    p.add_argument("--bundle", default=None)
    p.add_argument("--classifier", default=None)
    p.add_argument("--n-envs-grid", default="25,50,100")
    p.add_argument("--buffer-grid", default="10,30,90")
    p.add_argument("--transition-budget", type=int, default=57600)
    p.add_argument("--eval-horizon", type=int, default=288)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("episodic-mae", help="closed-loop MAE comparison (surrogate vs baselines)")
    common(p)
    p.add_argument("--bundle", default=None)
    p.add_argument("--classifier", default=None)
    p.add_argument("--models", default=None, help="directory holding baseline model files")
    p.add_argument("--policy", default=None, help="expert policy checkpoint")
    p.add_argument("--eval-horizon", type=int, default=288)
    p.set_defaults(func=cmd_episodic_mae)

    p = sub.add_parser("bench", help="inference timing: oracle vs surrogate")
    common(p)
    p.add_argument("--bundle", default=None)
    p.add_argument("--classifier", default=None)
    p.add_argument("--transitions", type=int, default=1000)
    p.add_argument("--kernels", action="store_true",
                   help="also compare numpy vs numba kernel backends")
    p.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
