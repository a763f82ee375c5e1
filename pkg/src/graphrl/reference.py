"""Desk-scale reference experiments shared by the acceptance tests and scripts/.

Each runner takes a seed and returns plain numbers so callers can decide what
to assert or print.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .dqnagent import AgentConfig, DQNAgent
from .graphsig import metrics, prepare_forecast_data
from .monitorenv import EnvConfig, MonitorEnv, RandomPolicy
from .orchestrator import RunConfig, evaluate_agent, run_episode, run_training
from .synth import SyntheticSpec, generate
from .tgcn import TgcnConfig, train

FORECAST_HORIZONS = (1, 2, 3, 4)


def forecast_spec(seed: int) -> SyntheticSpec:
    # complete graph with sparse shocks: a spike at one node shows up at every
    # other node on the next step, which only the graph model can see
    return SyntheticSpec(kind="graph-diffusion", n_nodes=6, length=2000, noise=0.05, diffusion=1.0,
                         reversion=0.02, shock_prob=0.1, graph="complete", seed=seed)


def forecast_config(seed: int, n_nodes=6) -> TgcnConfig:
    return TgcnConfig(n_nodes=n_nodes, window=4, hidden=16, gcn_hidden=16, horizons=FORECAST_HORIZONS,
                      lr=0.001, epochs=200, batch_size=32, seed=seed)


@dataclass
class ForecastOutcome:
    mae: dict          # model kind -> [MAE per horizon], original units
    seconds: float

    def ratio_to_persistence(self) -> list[float]:
        return [t / p for t, p in zip(self.mae["tgcn"], self.mae["persistence"])]


def forecast_ordering_run(seed: int, epochs: int | None = None) -> ForecastOutcome:
    t0 = time.perf_counter()
    series, adj = generate(forecast_spec(seed))
    cfg = forecast_config(seed)
    if epochs is not None:
        cfg = replace(cfg, epochs=epochs)
    data = prepare_forecast_data(series, adj, cfg.window, cfg.horizons, 0.8, 900.0, shared_scale=True)
    actual = data.scaler.invert(data.test.targets)
    mae = {}
    for kind in ("persistence", "gru", "tgcn"):
        model, _ = train(data.train, cfg, data.graph if kind == "tgcn" else None, data.scaler, kind)
        pred = model.predict_original(data.test.windows)
        mae[kind] = [metrics(pred[:, k], actual[:, k]).mae for k in range(len(cfg.horizons))]
    return ForecastOutcome(mae, time.perf_counter() - t0)


# ---------------------------------------------------------------- agent

AGENT_SERIES_LENGTH = 30_100
AGENT_TRAIN_ROWS = 25_010


def agent_spec(seed: int) -> SyntheticSpec:
    return SyntheticSpec(kind="threshold-walk", n_nodes=1, length=AGENT_SERIES_LENGTH, noise=5.0, seed=seed)


def agent_config(seed: int) -> AgentConfig:
    return AgentConfig(gamma=0.1, batch_size=8000, memory=25_000, lr=0.002, hidden=32, seed=seed)


def agent_envs(seed: int, env_config: EnvConfig | None = None):
    """Training env on the first rows, held-out evaluation env on the rest."""
    cfg = env_config or EnvConfig(advance=True)
    series, _ = generate(agent_spec(seed))
    return cfg, MonitorEnv(series[:AGENT_TRAIN_ROWS], cfg), MonitorEnv(series[AGENT_TRAIN_ROWS:], cfg)


@dataclass
class AgentOutcome:
    eval_scores: list
    random_scores: list
    train_scores: list
    epsilons: list
    seconds: float

    @property
    def eval_mean(self) -> float:
        return float(np.mean(self.eval_scores))

    @property
    def random_mean(self) -> float:
        return float(np.mean(self.random_scores))


def agent_learning_run(seed: int, episodes=50, eval_episodes=10) -> AgentOutcome:
    t0 = time.perf_counter()
    cfg, train_env, eval_env = agent_envs(seed)
    agent = DQNAgent(cfg.obs_dim, cfg.n_actions, agent_config(seed))
    records = run_training(train_env, agent, RunConfig(episodes=episodes, env=cfg, agent=agent.config, seed=seed))
    report = evaluate_agent(eval_env, agent, eval_episodes, seed=seed)
    seconds = time.perf_counter() - t0
    _, _, rnd_env = agent_envs(seed)
    policy = RandomPolicy(cfg.n_actions, seed)
    rnd = [run_episode(rnd_env, policy, cfg.monitor_length, learn=False)[0] for _ in range(eval_episodes)]
    return AgentOutcome(report.episodes, rnd, [r.score for r in records], [r.epsilon for r in records], seconds)
