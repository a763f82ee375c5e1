"""Episode loop, evaluation and report files (metrics.json, rewards.csv)."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from .dqnagent import AgentConfig, Transition
from .errors import ConfigError, ValidationError
from .graphsig import WindowedDataset, metrics
from .monitorenv import EnvConfig, MonitorEnv, read_transcript, write_transcript
from .seeding import substream

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    episodes: int = 50
    # per-episode step budget; None means the environment's monitor length
    steps: int | None = None
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    eval_episodes: int = 10
    # evaluate greedily (epsilon 0) instead of at epsilon_min
    eval_greedy: bool = False
    out_dir: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError(f"episodes must be >= 1, got {self.episodes}")
        if self.steps is not None and self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.eval_episodes < 1:
            raise ConfigError(f"eval_episodes must be >= 1, got {self.eval_episodes}")

    @property
    def budget(self) -> int:
        return self.env.monitor_length if self.steps is None else self.steps


@dataclass
class EpisodeRecord:
    episode: int
    score: float
    steps: int
    epsilon: float
    wall_time: float
    truncated: bool = False
    replay_loss: float | None = None


@dataclass
class EvalReport:
    forecast: dict = field(default_factory=dict)
    episodes: list = field(default_factory=list)

    @property
    def total(self) -> float:
        return float(sum(self.episodes))

    @property
    def mean(self) -> float:
        return self.total / len(self.episodes) if self.episodes else 0.0

    def to_json(self) -> dict:
        return {"forecast": self.forecast, "agent": {"episodes": list(self.episodes), "total": self.total}}


def run_episode(env: MonitorEnv, policy, budget: int, learn=True, act_kwargs=None):
    """One reset-to-done pass; returns (score, steps, truncated)."""
    act_kwargs = act_kwargs or {}
    s = env.reset()
    score, steps, truncated = 0.0, 0, False
    while True:
        a = policy.act(s, **act_kwargs)
        out = env.step(a)
        if learn and hasattr(policy, "memorize"):
            policy.memorize(Transition(s, a, out.reward, out.observation, out.done))
        score += out.reward
        steps += 1
        s = out.observation
        if out.done:
            truncated = out.info["truncated"]
            break
        if steps >= budget:
            break
    return score, steps, truncated


def _transcript_dir(out_dir, name):
    if out_dir is None:
        return None
    d = Path(out_dir) / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def run_training(env: MonitorEnv, agent, run: RunConfig) -> list[EpisodeRecord]:
    """Act/step/memorize until done, then one replay per episode."""
    records = []
    tdir = _transcript_dir(run.out_dir, "transcripts")
    for ep in range(run.episodes):
        t0 = time.perf_counter()
        score, steps, truncated = run_episode(env, agent, run.budget)
        if truncated:
            log.warning("episode %d truncated after %d steps: data exhausted", ep, steps)
        loss = agent.replay() if hasattr(agent, "replay") else None
        eps = float(getattr(agent, "epsilon", 0.0))
        records.append(EpisodeRecord(ep, score, steps, eps, time.perf_counter() - t0, truncated, loss))
        if tdir is not None:
            write_transcript(tdir / f"train_{ep:04d}.csv", env.events)
    return records


def evaluate_agent(env: MonitorEnv, agent, episodes=10, epsilon=None, seed=0, out_dir=None) -> EvalReport:
    """Score ``episodes`` runs without memorizing or replaying.

    Exploration uses its own seeded stream so the agent's RNG, weights and
    epsilon are left untouched.  ``epsilon`` defaults to the agent's floor.
    """
    if epsilon is None:
        epsilon = getattr(getattr(agent, "config", None), "epsilon_min", 0.0)
    rng = substream(seed, "eval")
    kwargs = {"epsilon": epsilon, "rng": rng}
    tdir = _transcript_dir(out_dir, "transcripts")
    report = EvalReport()
    for ep in range(episodes):
        score, _, _ = run_episode(env, agent, env.config.monitor_length, learn=False, act_kwargs=kwargs)
        report.episodes.append(score)
        if tdir is not None:
            write_transcript(tdir / f"eval_{ep:04d}.csv", env.events)
    return report


def horizon_label(h: int, step_seconds: float | None) -> str:
    if step_seconds:
        minutes = h * step_seconds / 60.0
        if minutes == int(minutes):
            return f"{int(minutes)}min"
    return f"h{h}"


def forecast_report(models: dict, test: WindowedDataset, scaler) -> dict:
    """model -> horizon -> {mae, mape, rmse}, computed in original units."""
    if not models:
        return {}
    horizons = {tuple(m.horizons) for m in models.values()}
    if len(horizons) != 1 or next(iter(horizons)) != tuple(test.horizons):
        raise ConfigError(f"horizon mismatch between models and test set: {sorted(horizons)} vs {test.horizons}")
    actual = scaler.invert(test.targets)
    table = {}
    for name, model in models.items():
        pred = scaler.invert(model.predict(test.windows))
        table[name] = {
            horizon_label(h, test.step_seconds): metrics(pred[:, k, :], actual[:, k, :]).as_dict()
            for k, h in enumerate(test.horizons)
        }
    return table


# ---------------------------------------------------------------- report files

def write_metrics_json(path, report: EvalReport):
    with Path(path).open("w") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_rewards_csv(path, scores):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "score"])
        for i, s in enumerate(scores):
            w.writerow([i, repr(float(s))])


def read_rewards_csv(path) -> list[float]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["episode", "score"]:
            raise ValidationError(f"{path}: header must be episode,score")
        return [float(r["score"]) for r in reader]


def scores_from_transcripts(paths) -> list[float]:
    """Episode scores recomputed from transcript files, in the given order."""
    scores = []
    for p in paths:
        total = 0.0
        for e in read_transcript(p):
            total += e["reward"]
        scores.append(total)
    return scores


def regenerate_report(run_dir, prefix="eval", forecast=None) -> EvalReport:
    tdir = Path(run_dir) / "transcripts"
    paths = sorted(tdir.glob(f"{prefix}_*.csv"))
    return EvalReport(forecast or {}, scores_from_transcripts(paths))
