"""Predictive monitoring environment with band-table rewards.

Each step the agent sees the monitored node's current value followed by its
values at the configured horizons (true future values for a replay source,
forecaster output for a forecast source).  Values are mapped so the band
table's lowest and highest interior edges land on 0 and 1, which keeps the
decision boundaries well separated in input space.  Rewarding is judged
against the current value only.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DomainError, ValidationError
from .tgcn import ForecastModel

log = logging.getLogger(__name__)

DEFAULT_ACTIONS = ("no-action", "review", "urgent-team", "critical-team")


@dataclass(frozen=True)
class Band:
    lo: float
    hi: float
    action: int
    label: str


class BandTable:
    """Contiguous half-open bands [lo, hi) mapping a value to its correct action."""

    def __init__(self, bands):
        bands = sorted((Band(float(b.lo), float(b.hi), int(b.action), str(b.label)) for b in bands),
                       key=lambda b: b.lo)
        if not bands:
            raise ValidationError("band table is empty")
        for b in bands:
            if not b.lo < b.hi:
                raise ValidationError(f"band {b.label!r}: lo {b.lo} must be < hi {b.hi}")
            if b.action < 0:
                raise ValidationError(f"band {b.label!r}: negative action id")
        for prev, nxt in zip(bands, bands[1:]):
            if prev.hi != nxt.lo:
                raise ValidationError(f"bands not contiguous: {prev.label!r} ends at {prev.hi}, {nxt.label!r} starts at {nxt.lo}")
        self.bands = tuple(bands)
        self._edges = np.array([b.lo for b in bands[1:]])
        self.warnings: list[str] = []

    @property
    def low(self) -> float:
        return self.bands[0].lo

    @property
    def high(self) -> float:
        return self.bands[-1].hi

    @property
    def interior_span(self) -> tuple[float, float]:
        """(first, last) interior edge; the covered range for a single band."""
        if len(self.bands) < 3:
            return self.low, self.high
        return self.bands[1].lo, self.bands[-1].lo

    @property
    def action_ids(self) -> set[int]:
        return {b.action for b in self.bands}

    def lookup(self, value: float) -> Band:
        if not np.isfinite(value):
            raise DomainError(f"value must be finite, got {value}")
        if value < self.low or value >= self.high:
            self.warnings.append(f"value {value} outside covered range [{self.low}, {self.high}); clamped to edge band")
        return self.bands[int(np.searchsorted(self._edges, value, side="right"))]

    def correct_action(self, value: float) -> int:
        return self.lookup(value).action

    def __len__(self):
        return len(self.bands)

    @classmethod
    def default(cls) -> "BandTable":
        """Heart-rate table in bpm (illustrative MEWS-style values, not clinical guidance)."""
        return cls([
            Band(0.0, 40.0, 3, "critical-low"),
            Band(40.0, 51.0, 1, "review-low"),
            Band(51.0, 101.0, 0, "normal"),
            Band(101.0, 111.0, 1, "review-high"),
            Band(111.0, 130.0, 2, "urgent-high"),
            Band(130.0, 250.0, 3, "critical-high"),
        ])

    @classmethod
    def read_csv(cls, path) -> "BandTable":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"band table not found: {path}")
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["lo", "hi", "action_id", "label"]:
                raise ValidationError(f"{path}: header must be lo,hi,action_id,label, got {reader.fieldnames}")
            rows = [Band(float(r["lo"]), float(r["hi"]), int(r["action_id"]), r["label"]) for r in reader]
        return cls(rows)

    def write_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lo", "hi", "action_id", "label"])
            for b in self.bands:
                w.writerow([repr(b.lo), repr(b.hi), b.action, b.label])


@dataclass
class EnvConfig:
    bands: BandTable = field(default_factory=BandTable.default)
    actions: tuple = DEFAULT_ACTIONS
    reward: float = 10.0
    monitor_length: int = 500
    node: int = 0
    horizons: tuple = (1, 2, 3, 4)
    source: str = "replay"
    # each reset resumes where the previous episode stopped (wrapping to the
    # start when fewer than monitor_length states remain) instead of row 0
    advance: bool = False

    def __post_init__(self):
        self.actions = tuple(self.actions)
        self.horizons = tuple(int(h) for h in self.horizons)
        if not self.reward > 0:
            raise ConfigError(f"reward must be > 0, got {self.reward}")
        if self.monitor_length < 1:
            raise ConfigError(f"monitor_length must be >= 1, got {self.monitor_length}")
        if self.source not in ("replay", "forecast"):
            raise ConfigError(f"source must be 'replay' or 'forecast', got {self.source!r}")
        ids = self.bands.action_ids
        if len(self.actions) != len(ids) or max(ids) >= len(self.actions):
            raise ConfigError(f"{len(self.actions)} action labels but band table uses action ids {sorted(ids)}")

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def obs_dim(self) -> int:
        return 1 + len(self.horizons)


@dataclass
class EnvState:
    step: int
    observation: np.ndarray
    done: bool


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


class MonitorEnv:
    """Replays a series (original units) and rewards band-correct escalation actions.

    ``model`` is required for the forecast source; the series is then scaled
    with the model's scaler and the forecaster's window ends at the current row.
    """

    def __init__(self, series, config: EnvConfig, model: ForecastModel | None = None, record=True):
        x = np.asarray(series, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if not 0 <= config.node < x.shape[1]:
            raise ConfigError(f"monitored node {config.node} not in series with {x.shape[1]} nodes")
        self.config = config
        self.series = x
        self.model = model
        self.record = record
        self.events: list[dict] = []
        if config.source == "forecast":
            if model is None:
                raise ConfigError("forecast source needs a forecast model")
            if tuple(model.horizons) != config.horizons:
                raise ConfigError(f"model horizons {model.horizons} != env horizons {config.horizons}")
            self._start = model.config.window - 1
            self._forecast = self._precompute_forecasts()
        else:
            self._start = 0
            self._forecast = None
        # last usable row index for a state
        self._last = x.shape[0] - 1 - (config.horizons[-1] if config.source == "replay" else 0)
        self._step = 0
        self._offset = 0
        self._next_offset = 0
        self._done = True
        self._obs = None

    def _precompute_forecasts(self):
        model = self.model
        w = model.config.window
        scaled = model.scaler.apply(self.series)
        count = self.series.shape[0] - w + 1
        if count < 1:
            return np.empty((0, len(self.config.horizons)))
        idx = np.arange(count)[:, None] + np.arange(w)[None, :]
        out = []
        for chunk in np.array_split(np.arange(count), max(1, count // 512)):
            pred = model.predict(scaled[idx[chunk]])[:, :, self.config.node]
            out.append(model.scaler.invert_node(pred, self.config.node))
        return np.concatenate(out)

    @property
    def n_actions(self) -> int:
        return self.config.n_actions

    @property
    def obs_dim(self) -> int:
        return self.config.obs_dim

    def _row(self) -> int:
        return self._start + self._offset + self._step

    def current_value(self) -> float:
        return float(self.series[self._row(), self.config.node])

    def raw_state(self, row: int) -> np.ndarray:
        """Current value then horizon values, original units."""
        node = self.config.node
        if self._forecast is not None:
            ahead = self._forecast[row - self._start]
        else:
            ahead = self.series[row + np.asarray(self.config.horizons), node]
        return np.concatenate([[self.series[row, node]], ahead])

    def observe(self, row: int) -> np.ndarray:
        lo, hi = self.config.bands.interior_span
        return (self.raw_state(row) - lo) / (hi - lo)

    def state(self) -> EnvState:
        return EnvState(self._step, self._obs, self._done)

    def reset(self) -> np.ndarray:
        if self._last < self._start:
            raise ConfigError("data source is empty: not enough rows for a single state")
        if self.config.advance:
            off = self._next_offset
            if self._start + off + self.config.monitor_length - 1 > self._last:
                off = 0
            self._offset = off
        self._step = 0
        self._done = False
        self.events = []
        self._obs = self.observe(self._row())
        return self._obs.copy()

    def correct_action(self, value: float) -> int:
        return self.config.bands.correct_action(value)

    def step(self, action: int) -> StepOutcome:
        if self._done:
            raise ContractError("step() called on a finished episode; call reset()")
        action = int(action)
        if not 0 <= action < self.n_actions:
            raise DomainError(f"unknown action id {action}; expected 0..{self.n_actions - 1}")
        value = self.current_value()
        correct = self.correct_action(value)
        rho = self.config.reward
        reward = rho if action == correct else -rho
        self._step += 1
        truncated = False
        if self._step >= self.config.monitor_length:
            self._done = True
        if self._row() > self._last:
            self._done = True
            truncated = self._step < self.config.monitor_length
            next_obs = self._obs
        else:
            next_obs = self.observe(self._row())
        self._obs = next_obs
        self._next_offset = self._offset + self._step
        info = {"step": self._step - 1, "value": value, "correct_action": correct, "truncated": truncated}
        if self.record:
            self.events.append({"step": self._step - 1, "value": value, "action": action,
                                "correct_action": correct, "reward": reward, "done": self._done})
        return StepOutcome(next_obs.copy(), reward, self._done, info)


class OraclePolicy:
    """Always picks the band-correct action for the environment's current value."""

    def __init__(self, env: MonitorEnv):
        self.env = env

    def act(self, state, **_):
        return self.env.correct_action(self.env.current_value())


class RandomPolicy:
    def __init__(self, n_actions: int, seed=0):
        self.n_actions = n_actions
        self.rng = np.random.default_rng(seed)

    def act(self, state, **_):
        return int(self.rng.integers(self.n_actions))


TRANSCRIPT_FIELDS = ["step", "value", "action", "correct_action", "reward", "done"]


def write_transcript(path, events):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRANSCRIPT_FIELDS)
        for e in events:
            w.writerow([e["step"], repr(float(e["value"])), e["action"], e["correct_action"],
                        repr(float(e["reward"])), int(bool(e["done"]))])


def read_transcript(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRANSCRIPT_FIELDS:
            raise ValidationError(f"{path}: transcript header must be {','.join(TRANSCRIPT_FIELDS)}")
        return [{"step": int(r["step"]), "value": float(r["value"]), "action": int(r["action"]),
                 "correct_action": int(r["correct_action"]), "reward": float(r["reward"]),
                 "done": bool(int(r["done"]))} for r in reader]
