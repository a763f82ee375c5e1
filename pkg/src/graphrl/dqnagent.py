"""Epsilon-greedy DQN agent with bounded replay memory and a graph or dense Q-network."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numkit as nk
from .errors import ConfigError, DimensionError, ValidationError
from .graphsig import normalize_adjacency, path_adjacency
from .seeding import glorot, substream
from .tgcn import gcn_forward, gru_step

CHECKPOINT_FORMAT = "graphrl.agent/1"


@dataclass
class AgentConfig:
    gamma: float = 0.95
    epsilon: float = 1.0
    epsilon_decay: float = 0.995
    epsilon_min: float = 0.01
    batch_size: int = 32
    memory: int = 2000
    lr: float = 0.001
    hidden: int = 16
    trunk: str = "dense"
    target_network: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ConfigError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0 <= self.epsilon <= 1:
            raise ConfigError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if not 0 < self.epsilon_decay <= 1:
            raise ConfigError(f"epsilon_decay must be in (0, 1], got {self.epsilon_decay}")
        if not 0 <= self.epsilon_min <= self.epsilon:
            raise ConfigError(f"epsilon_min must be in [0, epsilon], got {self.epsilon_min}")
        if self.batch_size < 1 or self.memory < 1 or self.hidden < 1:
            raise ConfigError("batch_size, memory and hidden must be positive")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.trunk not in ("dense", "graph"):
            raise ConfigError(f"trunk must be 'dense' or 'graph', got {self.trunk!r}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool


class ReplayMemory:
    """Bounded FIFO; the oldest transition is evicted first."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items = deque(maxlen=capacity)

    def append(self, t: Transition):
        self._items.append(t)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def __iter__(self):
        return iter(self._items)


class QNetwork:
    """State vector -> one Q-value per action.

    The ``graph`` trunk treats the d state entries as nodes of a chain graph
    (current value linked to the nearest horizon, and so on) and runs one
    GCN + GRU step from a zero hidden state; node states are then concatenated
    for the head.  The ``dense`` trunk is two relu layers of the same width.
    """

    def __init__(self, obs_dim: int, n_actions: int, hidden=16, trunk="dense", rng=None, adjacency=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.obs_dim, self.n_actions, self.hidden, self.trunk = obs_dim, n_actions, hidden, trunk
        p = nk.ParamStore()
        if trunk == "dense":
            w1 = glorot(rng, obs_dim, hidden)
            # states live in roughly [0, 1]; zero biases would put every first-layer
            # kink at the origin, so spread them along the box diagonal instead
            kinks = rng.uniform(-0.2, 1.2, hidden)
            p.add("W1", w1)
            p.add("b1", (-kinks * w1.sum(axis=0))[None, :], bias=True)
            p.add("W2", glorot(rng, hidden, hidden))
            p.add("b2", np.zeros((1, hidden)), bias=True)
            head_in = hidden
            self.graph = None
        else:
            adj = path_adjacency(obs_dim) if adjacency is None else np.asarray(adjacency, dtype=np.float64)
            self.graph = normalize_adjacency(adj)
            p.add("W0", glorot(rng, 1, hidden))
            p.add("W1", glorot(rng, hidden, hidden))
            for gate in ("z", "r", "h"):
                p.add(f"W{gate}", glorot(rng, 2 * hidden, hidden))
                p.add(f"b{gate}", np.zeros((1, hidden)), bias=True)
            head_in = obs_dim * hidden
        p.add("Wq", glorot(rng, head_in, n_actions))
        p.add("bq", np.zeros((1, n_actions)), bias=True)
        self.params = p
        self._selectors = {}

    def _select(self, b: int, i: int) -> np.ndarray:
        key = (b, i)
        if key not in self._selectors:
            s = np.zeros((b, b * self.obs_dim))
            s[np.arange(b), np.arange(b) * self.obs_dim + i] = 1.0
            self._selectors[key] = s
        return self._selectors[key]

    def forward(self, states, w=None):
        """(B, d) states -> (B, A) Q-values; taped when ``w`` holds tape nodes."""
        w = self.params.params if w is None else w
        x = np.asarray(states, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.obs_dim:
            raise DimensionError(f"state has {x.shape[1]} entries, network expects {self.obs_dim}")
        if self.trunk == "dense":
            h = nk.relu(nk.add(nk.matmul(x, w["W1"]), w["b1"]))
            h = nk.relu(nk.add(nk.matmul(h, w["W2"]), w["b2"]))
        else:
            b = x.shape[0]
            signal = x.reshape(b * self.obs_dim, 1)
            g = gcn_forward(signal, self.graph, w)
            node_h = gru_step(g, np.zeros((b * self.obs_dim, self.hidden)), w)
            h = nk.concat_columns(*(nk.matmul(self._select(b, i), node_h) for i in range(self.obs_dim)))
        return nk.add(nk.matmul(h, w["Wq"]), w["bq"])

    def q_values(self, s) -> np.ndarray:
        return self.forward(s)[0]


class DQNAgent:
    def __init__(self, obs_dim: int, n_actions: int, config: AgentConfig | None = None):
        self.config = config or AgentConfig()
        self.obs_dim, self.n_actions = obs_dim, n_actions
        self.net = QNetwork(obs_dim, n_actions, self.config.hidden, self.config.trunk,
                            substream(self.config.seed, "agent-init"))
        self.memory = ReplayMemory(self.config.memory)
        self.rng = substream(self.config.seed, "agent")
        self.adam = nk.AdamState()
        self.decays = 0
        self.replays = 0
        self.skipped_replays = 0
        self._frozen = None

    @property
    def epsilon(self) -> float:
        c = self.config
        return max(c.epsilon_min, c.epsilon * c.epsilon_decay ** self.decays)

    def q_values(self, s) -> np.ndarray:
        return self.net.q_values(s)

    def act(self, s, epsilon=None, rng=None) -> int:
        """Epsilon-greedy; greedy ties go to the lowest action id."""
        eps = self.epsilon if epsilon is None else epsilon
        rng = self.rng if rng is None else rng
        if rng.random() < eps:
            return int(rng.integers(self.n_actions))
        return int(np.argmax(self.q_values(s)))

    def memorize(self, t: Transition):
        if not 0 <= t.a < self.n_actions:
            raise ValidationError(f"transition action {t.a} outside 0..{self.n_actions - 1}")
        self.memory.append(t)

    def td_target(self, t: Transition, gamma=None) -> float:
        gamma = self.config.gamma if gamma is None else gamma
        if t.done:
            return float(t.r)
        net = self._frozen if self._frozen is not None else self.net
        return float(t.r + gamma * np.max(net.q_values(t.s_next)))

    def fit_one(self, s, a: int, target: float) -> float:
        """One Adam step pulling Q(s, a) toward ``target``.

        The regression vector is the network's own prediction with entry ``a``
        replaced, so the other actions contribute zero error.
        """
        tape = nk.Tape()
        nodes = tape.watch(self.net.params)
        q = self.net.forward(s, nodes)
        target_f = q.value.copy()
        target_f[0, a] = target
        loss = nk.mse(q, target_f)
        tape.backward(loss, self.net.params)
        nk.adam_step(self.net.params, self.adam, self.config.lr)
        return float(loss.value[0, 0])

    def replay(self, batch_size=None):
        """Sample without replacement and fit each transition toward its TD target.

        Returns the mean loss, or ``None`` (and counts a skip) when memory holds
        fewer transitions than the batch.  Epsilon decays once per real replay.
        """
        batch_size = self.config.batch_size if batch_size is None else batch_size
        if len(self.memory) < batch_size:
            self.skipped_replays += 1
            return None
        if self.config.target_network:
            self._frozen = QNetwork(self.obs_dim, self.n_actions, self.config.hidden, self.config.trunk)
            self._frozen.params.load_state_dict(self.net.params.params)
        idx = self.rng.choice(len(self.memory), size=batch_size, replace=False)
        losses = []
        for i in idx:
            t = self.memory[int(i)]
            losses.append(self.fit_one(t.s, t.a, self.td_target(t)))
        self._frozen = None
        self.replays += 1
        self.decays += 1
        return float(np.mean(losses))

    # ------------------------------------------------------------ checkpoints

    def save(self, path):
        meta = {"format": CHECKPOINT_FORMAT, "config": self.config.to_dict(), "obs_dim": self.obs_dim,
                "n_actions": self.n_actions, "decays": self.decays, "epsilon": self.epsilon}
        arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
        for name, v in self.net.params.params.items():
            arrays[f"param:{name}"] = v
        with Path(path).open("wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "DQNAgent":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"agent checkpoint not found: {path}")
        with np.load(path, allow_pickle=False) as z:
            if "__meta__" not in z:
                raise ValidationError(f"{path}: not an agent checkpoint")
            meta = json.loads(bytes(z["__meta__"]).decode())
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValidationError(f"{path}: incompatible checkpoint format {meta.get('format')!r}, expected {CHECKPOINT_FORMAT!r}")
            agent = cls(meta["obs_dim"], meta["n_actions"], AgentConfig(**meta["config"]))
            agent.net.params.load_state_dict({k[6:]: z[k] for k in z.files if k.startswith("param:")})
        agent.decays = int(meta["decays"])
        return agent
