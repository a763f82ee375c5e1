"""Desk-scale synthetic data: graph diffusion series and band-crossing random walks."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .graphsig import normalize_adjacency, path_adjacency, random_adjacency
from .seeding import substream

GENERATORS = ("graph-diffusion", "threshold-walk")


@dataclass
class SyntheticSpec:
    kind: str = "graph-diffusion"
    n_nodes: int = 6
    length: int = 2000
    noise: float = 0.05
    diffusion: float = 0.5
    # pull toward the initial profile; 0 gives the pure diffusion walk
    reversion: float = 0.0
    # per-node chance an innovation fires each step; variance is kept at noise**2
    shock_prob: float = 1.0
    baseline: float = 1.0
    init_spread: float = 0.0
    graph: str = "path"
    edge_prob: float = 0.3
    low: float = 30.0
    high: float = 160.0
    step_seconds: float = 900.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise ConfigError(f"kind: unknown generator {self.kind!r}; expected one of {GENERATORS}")
        if self.n_nodes < 1:
            raise ConfigError(f"n_nodes: must be >= 1, got {self.n_nodes}")
        if self.length < 2:
            raise ConfigError(f"length: must be >= 2, got {self.length}")
        if self.noise < 0:
            raise ConfigError(f"noise: must be >= 0, got {self.noise}")
        if self.diffusion < 0:
            raise ConfigError(f"diffusion: must be >= 0, got {self.diffusion}")
        if not 0 <= self.reversion <= 1:
            raise ConfigError(f"reversion: must be in [0, 1], got {self.reversion}")
        if not 0 < self.shock_prob <= 1:
            raise ConfigError(f"shock_prob: must be in (0, 1], got {self.shock_prob}")
        if self.graph not in ("path", "random", "complete"):
            raise ConfigError(f"graph: expected 'path', 'random' or 'complete', got {self.graph!r}")
        if not 0 <= self.edge_prob <= 1:
            raise ConfigError(f"edge_prob: must be in [0, 1], got {self.edge_prob}")
        if not self.low < self.high:
            raise ConfigError(f"low/high: need low < high, got {self.low}, {self.high}")
        if self.step_seconds <= 0:
            raise ConfigError(f"step_seconds: must be > 0, got {self.step_seconds}")

    def to_dict(self):
        return asdict(self)


def generate(spec: SyntheticSpec):
    """Return ``(series T x n, adjacency n x n)``."""
    if spec.kind == "graph-diffusion":
        return graph_diffusion(spec)
    return threshold_walk(spec)


def _adjacency(spec, rng):
    if spec.graph == "random":
        return random_adjacency(spec.n_nodes, rng, spec.edge_prob)
    if spec.graph == "complete":
        return np.ones((spec.n_nodes, spec.n_nodes)) - np.eye(spec.n_nodes)
    return path_adjacency(spec.n_nodes)


def graph_diffusion(spec: SyntheticSpec):
    """x[t+1] = x[t] + c (P - I) x[t] + k (x[0] - x[t]) + noise * eps.

    With ``shock_prob`` < 1 each eps entry is a standard normal draw that fires
    with that probability, scaled by 1/sqrt(shock_prob) to keep unit variance.
    """
    rng = substream(spec.seed, "data")
    a = _adjacency(spec, rng)
    p = normalize_adjacency(a).propagation
    n = spec.n_nodes
    step = np.eye(n) + spec.diffusion * (p - np.eye(n))
    x0 = spec.baseline + spec.init_spread * rng.standard_normal(n)
    eps = rng.standard_normal((spec.length - 1, n))
    if spec.shock_prob < 1:
        fire = rng.random((spec.length - 1, n)) < spec.shock_prob
        eps = eps * fire / np.sqrt(spec.shock_prob)
    out = np.empty((spec.length, n))
    out[0] = x = x0
    for t in range(1, spec.length):
        x = step @ x + spec.reversion * (x0 - x) + spec.noise * eps[t - 1]
        out[t] = x
    return out, a


def threshold_walk(spec: SyntheticSpec):
    """Independent reflecting random walks on [low, high], one per node."""
    rng = substream(spec.seed, "data")
    a = path_adjacency(spec.n_nodes)
    lo, hi = spec.low, spec.high
    x = rng.uniform(lo, hi, size=spec.n_nodes)
    steps = spec.noise * rng.standard_normal((spec.length - 1, spec.n_nodes))
    out = np.empty((spec.length, spec.n_nodes))
    out[0] = x
    for t in range(1, spec.length):
        x = x + steps[t - 1]
        x = np.where(x < lo, 2 * lo - x, x)
        x = np.where(x > hi, 2 * hi - x, x)
        x = np.clip(x, lo, hi)
        out[t] = x
    return out, a
