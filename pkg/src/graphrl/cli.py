"""``graphrl`` command line: synthesize, train, evaluate and tune from one JSON config.

Exit codes: 0 success, 1 validation/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .bayestune import SearchSpace, tune, write_tuning_log
from .dqnagent import DQNAgent
from .errors import GraphRLError
from .graphsig import (build_windows, chronological_split, prepare_forecast_data, read_adjacency_csv,
                       read_series_csv, write_adjacency_csv, write_series_csv)
from .monitorenv import BandTable, EnvConfig, MonitorEnv
from .orchestrator import (EvalReport, RunConfig, evaluate_agent, forecast_report, run_training,
                           write_metrics_json, write_rewards_csv)
from .synth import generate
from .tgcn import load_checkpoint, save_checkpoint, train

log = logging.getLogger("graphrl")

COMMANDS = ("gen-synthetic", "train-forecast", "eval-forecast", "train-agent", "eval-agent", "tune")


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- manifest

def sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_paths(cfg, config_path):
    inp = cfg["inputs"]
    paths = [config_path] if config_path else []
    paths += [inp[k] for k in ("series", "adjacency", "bands", "forecaster", "agent") if inp[k]]
    paths += list(inp["checkpoints"])
    return paths


def write_manifest(out: Path, command, cfg, config_path, outputs=None, status="running"):
    inputs = {}
    for p in _input_paths(cfg, config_path):
        if not Path(p).is_file():
            raise FileNotFoundError(f"input file not found: {p}")
        inputs[str(p)] = sha256(p)
    manifest = {
        "command": command,
        "version": __version__,
        "seed": cfg["seed"],
        "config": cfg,
        "inputs": inputs,
        "outputs": sorted(outputs or []),
        "status": status,
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- helpers

def _need(cfg, key):
    path = cfg["inputs"][key]
    if not path:
        raise UsageError(f"inputs.{key} is required for this command")
    if not Path(path).is_file():
        raise FileNotFoundError(f"inputs.{key} file not found: {path}")
    return path


def _series(cfg):
    values, step_seconds, _ = read_series_csv(_need(cfg, "series"))
    return values, step_seconds


def env_config(cfg) -> EnvConfig:
    e = cfg["env"]
    bands = BandTable.read_csv(cfg["inputs"]["bands"]) if cfg["inputs"]["bands"] else BandTable.default()
    return EnvConfig(bands=bands, actions=tuple(e["actions"]), reward=e["reward"],
                     monitor_length=e["monitor_length"], node=e["node"], horizons=tuple(e["horizons"]),
                     source=e["source"], advance=e["advance"])


def run_config(cfg, env: EnvConfig, out=None) -> RunConfig:
    r = cfg["run"]
    return RunConfig(episodes=r["episodes"], steps=r["steps"], env=env, agent=cfgmod.agent_config(cfg),
                     eval_episodes=r["eval_episodes"], eval_greedy=r["eval_greedy"],
                     out_dir=str(out) if out else None, seed=cfg["seed"])


def agent_envs(cfg, values):
    """Training and held-out evaluation environments over a chronological split."""
    env_cfg = env_config(cfg)
    model = None
    if env_cfg.source == "forecast":
        model = load_checkpoint(_need(cfg, "forecaster"))
    train_rows, eval_rows = chronological_split(values, cfg["run"]["train_fraction"])
    return env_cfg, MonitorEnv(train_rows, env_cfg, model), MonitorEnv(eval_rows, env_cfg, model)


def _eval_epsilon(run: RunConfig):
    return 0.0 if run.eval_greedy else None


def write_episode_log(path, records):
    with Path(path).open("w") as fh:
        fh.write("episode,score,steps,epsilon,truncated\n")
        for r in records:
            fh.write(f"{r.episode},{r.score!r},{r.steps},{r.epsilon!r},{int(r.truncated)}\n")


# ---------------------------------------------------------------- commands

def cmd_gen_synthetic(cfg, out: Path):
    spec = cfgmod.synthetic_spec(cfg)
    series, adj = generate(spec)
    write_series_csv(out / "series.csv", series, spec.step_seconds)
    write_adjacency_csv(out / "adjacency.csv", adj)
    return ["series.csv", "adjacency.csv"]


def cmd_train_forecast(cfg, out: Path):
    values, step = _series(cfg)
    adj = read_adjacency_csv(_need(cfg, "adjacency"))
    f = cfg["forecast"]
    tcfg = cfgmod.tgcn_config(cfg, values.shape[1])
    data = prepare_forecast_data(values, adj, tcfg.window, tcfg.horizons, f["train_fraction"], step,
                                 f["shared_scale"])
    models, outputs = {}, []
    for kind in f["models"]:
        model, _ = train(data.train, tcfg, data.graph if kind == "tgcn" else None, data.scaler, kind)
        models[kind] = model
        save_checkpoint(out / f"forecast_{kind}.npz", model)
        outputs.append(f"forecast_{kind}.npz")
    write_metrics_json(out / "metrics.json", EvalReport(forecast_report(models, data.test, data.scaler)))
    return outputs + ["metrics.json"]


def cmd_eval_forecast(cfg, out: Path):
    paths = cfg["inputs"]["checkpoints"]
    if not paths:
        raise UsageError("eval-forecast needs inputs.checkpoints (or --checkpoint)")
    models = {}
    for p in paths:
        m = load_checkpoint(p)
        name = m.kind if m.kind not in models else f"{m.kind}_{len(models)}"
        models[name] = m
    first = next(iter(models.values()))
    values, step = _series(cfg)
    _, test_rows = chronological_split(values, cfg["forecast"]["train_fraction"])
    test = build_windows(first.scaler.apply(test_rows), first.config.window, first.horizons, step)
    write_metrics_json(out / "metrics.json", EvalReport(forecast_report(models, test, first.scaler)))
    return ["metrics.json"]


def cmd_train_agent(cfg, out: Path):
    values, _ = _series(cfg)
    env_cfg, train_env, eval_env = agent_envs(cfg, values)
    run = run_config(cfg, env_cfg, out)
    agent = DQNAgent(env_cfg.obs_dim, env_cfg.n_actions, run.agent)
    records = run_training(train_env, agent, run)
    agent.save(out / "agent.npz")
    write_rewards_csv(out / "rewards.csv", [r.score for r in records])
    write_episode_log(out / "episodes.csv", records)
    report = evaluate_agent(eval_env, agent, run.eval_episodes, _eval_epsilon(run), cfg["seed"], out)
    write_metrics_json(out / "metrics.json", report)
    return ["agent.npz", "rewards.csv", "episodes.csv", "metrics.json", "transcripts/"]


def cmd_eval_agent(cfg, out: Path):
    values, _ = _series(cfg)
    agent = DQNAgent.load(_need(cfg, "agent"))
    env_cfg, _, eval_env = agent_envs(cfg, values)
    if (agent.obs_dim, agent.n_actions) != (env_cfg.obs_dim, env_cfg.n_actions):
        raise UsageError(f"agent expects obs_dim={agent.obs_dim}, n_actions={agent.n_actions}; "
                         f"environment has {env_cfg.obs_dim}, {env_cfg.n_actions}")
    run = run_config(cfg, env_cfg, out)
    report = evaluate_agent(eval_env, agent, run.eval_episodes, _eval_epsilon(run), cfg["seed"], out)
    write_metrics_json(out / "metrics.json", report)
    write_rewards_csv(out / "rewards.csv", report.episodes)
    return ["metrics.json", "rewards.csv", "transcripts/"]


def _tune_objective(cfg, target):
    values, step = _series(cfg)

    def with_params(params, section):
        patched = json.loads(json.dumps(cfg))
        for k, v in params.items():
            if k not in patched[section]:
                raise UsageError(f"tuned parameter {k!r} is not a {section} setting")
            patched[section][k] = v
        return patched

    if target == "forecast":
        adj = read_adjacency_csv(_need(cfg, "adjacency"))
        train_rows, _ = chronological_split(values, cfg["forecast"]["train_fraction"])

        def objective(params):
            c = with_params(params, "forecast")
            tcfg = cfgmod.tgcn_config(c, values.shape[1])
            # validation = tail of the training rows; the test rows stay unseen
            data = prepare_forecast_data(train_rows, adj, tcfg.window, tcfg.horizons, 0.8, step,
                                         c["forecast"]["shared_scale"])
            model, _ = train(data.train, tcfg, data.graph, data.scaler, "tgcn")
            pred = model.predict(data.test.windows)
            return float(np.mean((pred - data.test.targets) ** 2))
        return objective

    if target == "agent":
        def objective(params):
            c = with_params(params, "agent")
            c["run"]["episodes"] = cfg["tune"]["episodes"]
            env_cfg, train_env, eval_env = agent_envs(c, values)
            run = run_config(c, env_cfg)
            agent = DQNAgent(env_cfg.obs_dim, env_cfg.n_actions, run.agent)
            run_training(train_env, agent, run)
            return -evaluate_agent(eval_env, agent, run.eval_episodes, seed=c["seed"]).mean
        return objective
    raise UsageError(f"tune.target must be 'forecast' or 'agent', got {target!r}")


def cmd_tune(cfg, out: Path):
    t = cfg["tune"]
    space = SearchSpace(t["space"])
    objective = _tune_objective(cfg, t["target"])
    result = tune(objective, space, t["budget"], cfg["seed"])
    write_tuning_log(out / "tuning_log.csv", result.log, space.names)
    (out / "best.json").write_text(json.dumps({"best_point": result.best_point,
                                               "best_objective": result.best_objective,
                                               "seed": result.seed}, indent=2, sort_keys=True) + "\n")
    return ["tuning_log.csv", "best.json"]


HANDLERS = {
    "gen-synthetic": cmd_gen_synthetic,
    "train-forecast": cmd_train_forecast,
    "eval-forecast": cmd_eval_forecast,
    "train-agent": cmd_train_agent,
    "eval-agent": cmd_eval_agent,
    "tune": cmd_tune,
}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphrl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file; omitted sections take defaults")
        p.add_argument("--seed", type=int, help="root seed (overrides config)")
        p.add_argument("--seeds", type=int, nargs="+", help="run once per seed into OUT/seed_<n>")
        p.add_argument("--out", default=f"runs/{name}", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel processes across --seeds")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config field (value parsed as JSON)")
        p.add_argument("--series", help="series CSV (inputs.series)")
        p.add_argument("--adjacency", help="adjacency CSV (inputs.adjacency)")
        if name == "eval-forecast":
            p.add_argument("--checkpoint", action="append", help="forecast checkpoint (repeatable)")
        if name in ("train-agent", "eval-agent", "tune"):
            p.add_argument("--forecaster", help="forecast checkpoint for the forecast state source")
        if name == "eval-agent":
            p.add_argument("--agent", help="agent checkpoint")
    return parser


def resolve_config(args) -> dict:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.resolve()
    for assignment in args.set:
        cfg = cfgmod.apply_override(cfg, assignment)
    if args.seed is not None:
        cfg["seed"] = args.seed
    for key in ("series", "adjacency", "forecaster", "agent"):
        if getattr(args, key, None):
            cfg["inputs"][key] = getattr(args, key)
    if getattr(args, "checkpoint", None):
        cfg["inputs"]["checkpoints"] = list(args.checkpoint)
    return cfg


def run_one(command, cfg, out, config_path=None) -> list[str]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, command, cfg, config_path)
    outputs = HANDLERS[command](cfg, out)
    write_manifest(out, command, cfg, config_path, outputs, status="complete")
    return outputs


def _run_seed(job):
    command, cfg, out, config_path = job
    return _guarded(lambda: run_one(command, cfg, out, config_path))


def _guarded(fn) -> int:
    try:
        fn()
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (GraphRLError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    cfg = None

    def prepare():
        nonlocal cfg
        cfg = resolve_config(args)
        if args.jobs < 1:
            raise UsageError(f"--jobs must be >= 1, got {args.jobs}")

    code = _guarded(prepare)
    if code:
        return code
    if not args.seeds:
        return _run_seed((args.command, cfg, args.out, args.config))
    jobs = []
    for s in args.seeds:
        c = json.loads(json.dumps(cfg))
        c["seed"] = s
        jobs.append((args.command, c, str(Path(args.out) / f"seed_{s}"), args.config))
    if args.jobs == 1:
        codes = [_run_seed(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(_run_seed, jobs))
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
