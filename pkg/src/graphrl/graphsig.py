"""Graph normalization, sliding windows, min-max scaling and regression metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import DimensionError, ValidationError

MAPE_EPS = 1e-8


@dataclass(frozen=True)
class NormalizedGraph:
    adjacency: np.ndarray
    propagation: np.ndarray

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]


def normalize_adjacency(adjacency) -> NormalizedGraph:
    """Symmetric normalization with self loops: D^-1/2 (A + I) D^-1/2."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.size == 0:
        raise ValidationError(f"adjacency must be a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("adjacency contains non-finite entries")
    if np.any(a < 0):
        raise ValidationError("adjacency must be nonnegative")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12):
        raise ValidationError("adjacency must be symmetric")
    if np.any(np.diag(a) != 0):
        raise ValidationError("adjacency must have a zero diagonal")
    a = (a + a.T) / 2.0
    a_tilde = a + np.eye(a.shape[0])
    d = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    p = a_tilde * d[:, None] * d[None, :]
    p = (p + p.T) / 2.0
    a.setflags(write=False)
    p.setflags(write=False)
    return NormalizedGraph(adjacency=a, propagation=p)


def path_adjacency(n: int) -> np.ndarray:
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1.0
    return a


def random_adjacency(n: int, rng: np.random.Generator, p_edge=0.3) -> np.ndarray:
    """Connected random graph: a shuffled spanning path plus random extra edges."""
    order = rng.permutation(n)
    a = np.zeros((n, n))
    for i in range(n - 1):
        u, v = order[i], order[i + 1]
        a[u, v] = a[v, u] = 1.0
    extra = np.triu(rng.random((n, n)) < p_edge, k=1)
    a = np.maximum(a, extra + extra.T)
    np.fill_diagonal(a, 0.0)
    return a


# ---------------------------------------------------------------- windows

@dataclass(frozen=True)
class WindowedDataset:
    """Input windows (N, w, n) and targets (N, len(horizons), n), scaled space."""

    windows: np.ndarray
    targets: np.ndarray
    horizons: tuple[int, ...]
    step_seconds: float = 1.0

    def __len__(self):
        return self.windows.shape[0]

    @property
    def window(self) -> int:
        return self.windows.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.windows.shape[2]

    def horizon_minutes(self):
        return [h * self.step_seconds / 60.0 for h in self.horizons]

    def subset(self, idx) -> "WindowedDataset":
        return WindowedDataset(self.windows[idx], self.targets[idx], self.horizons, self.step_seconds)


def _check_horizons(horizons):
    hs = tuple(int(h) for h in horizons)
    if not hs or hs[0] < 1 or any(b <= a for a, b in zip(hs, hs[1:])):
        raise ValidationError(f"horizons must be strictly increasing integers >= 1, got {list(horizons)}")
    return hs


def build_windows(series, w: int, horizons, step_seconds: float = 1.0) -> WindowedDataset:
    """Window rows [t, t+w) predict rows t + w - 1 + h for every horizon h."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"series must be T x n, got shape {x.shape}")
    if w < 1:
        raise ValidationError(f"window length must be >= 1, got {w}")
    hs = _check_horizons(horizons)
    need = w + hs[-1]
    if x.shape[0] < need:
        raise ValidationError(f"series too short: need at least {need} rows (w={w} + max horizon {hs[-1]}), got {x.shape[0]}")
    count = x.shape[0] - need + 1
    starts = np.arange(count)
    windows = x[starts[:, None] + np.arange(w)[None, :]]
    targets = x[starts[:, None] + (w - 1) + np.asarray(hs)[None, :]]
    return WindowedDataset(windows, targets, hs, float(step_seconds))


def minutes_to_steps(minutes, step_seconds: float) -> list[int]:
    steps = []
    for m in minutes:
        s = m * 60.0 / step_seconds
        if abs(s - round(s)) > 1e-9 or round(s) < 1:
            raise ValidationError(f"{m} min is not a positive whole number of {step_seconds}s steps")
        steps.append(int(round(s)))
    return steps


@dataclass(frozen=True)
class ForecastData:
    train: WindowedDataset
    test: WindowedDataset
    scaler: ScalerParams
    graph: NormalizedGraph
    test_series: np.ndarray


def prepare_forecast_data(series, adjacency, window, horizons, train_fraction=0.8,
                          step_seconds=1.0, shared_scale=True) -> ForecastData:
    """Chronological split, scaler fit on the training rows, windows on each part."""
    graph = normalize_adjacency(adjacency)
    x = np.asarray(series, dtype=np.float64)
    if x.shape[1] != graph.n:
        raise DimensionError(f"series has {x.shape[1]} nodes but adjacency is {graph.n} x {graph.n}")
    train_rows, test_rows = chronological_split(x, train_fraction)
    scaler = minmax_fit(train_rows, shared=shared_scale)
    train = build_windows(scaler.apply(train_rows), window, horizons, step_seconds)
    test = build_windows(scaler.apply(test_rows), window, horizons, step_seconds)
    return ForecastData(train, test, scaler, graph, test_rows)


def chronological_split(series, train_fraction=0.8):
    x = np.asarray(series, dtype=np.float64)
    if not 0 < train_fraction < 1:
        raise ValidationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    cut = int(round(x.shape[0] * train_fraction))
    return x[:cut], x[cut:]


# ---------------------------------------------------------------- scaling

@dataclass(frozen=True)
class ScalerParams:
    mins: np.ndarray
    maxs: np.ndarray
    constant_nodes: tuple[int, ...] = field(default=())

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        out = (x - self.mins) / safe
        if self.constant_nodes:
            out[..., list(self.constant_nodes)] = 0.5
        return out

    def invert(self, y):
        y = np.asarray(y, dtype=np.float64)
        span = self.maxs - self.mins
        out = y * span + self.mins
        if self.constant_nodes:
            out[..., list(self.constant_nodes)] = self.mins[list(self.constant_nodes)]
        return out

    def invert_node(self, y, node: int):
        return np.asarray(y, dtype=np.float64) * (self.maxs[node] - self.mins[node]) + self.mins[node]


def minmax_fit(train_rows, shared=False) -> ScalerParams:
    """Per-node min/max from training rows only; constant nodes map to 0.5.

    ``shared=True`` stores the global range for every node, which keeps node
    signals in common units for models whose weights are shared across nodes.
    """
    x = np.asarray(train_rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DimensionError(f"training rows must be a non-empty T x n array, got shape {x.shape}")
    if shared:
        mins, maxs = np.full(x.shape[1], x.min()), np.full(x.shape[1], x.max())
    else:
        mins, maxs = x.min(axis=0), x.max(axis=0)
    constant = tuple(int(i) for i in np.flatnonzero(maxs == mins))
    return ScalerParams(mins, maxs, constant)


# ---------------------------------------------------------------- metrics

@dataclass(frozen=True)
class Metrics:
    mae: float
    mape: float
    rmse: float

    def as_dict(self):
        return {"mae": self.mae, "mape": self.mape, "rmse": self.rmse}


def metrics(pred, actual) -> Metrics:
    """MAE, MAPE (percent; entries with |actual| <= 1e-8 skipped) and RMSE."""
    p = np.asarray(pred, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape:
        raise DimensionError(f"metrics shape mismatch: pred {p.shape} vs actual {a.shape}")
    e = (p - a).ravel()
    av = a.ravel()
    mae = float(np.mean(np.abs(e)))
    rmse = float(math.sqrt(np.mean(e * e)))
    keep = np.abs(av) > MAPE_EPS
    mape = float(np.mean(np.abs(e[keep] / av[keep])) * 100.0) if keep.any() else 0.0
    return Metrics(mae, mape, rmse)


# ---------------------------------------------------------------- CSV I/O

def _parse_timestamp(text: str) -> float:
    text = text.strip()
    try:
        return float(int(text))
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(text.replace("Z", "+00:00")).timestamp()
    except ValueError:
        raise ValidationError(f"bad timestamp {text!r}: expected ISO-8601 or integer epoch seconds") from None


def read_series_csv(path):
    """Read ``timestamp,node_0..node_{n-1}``; returns (values T x n, step seconds, timestamps)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"series file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty series file")
    header = [h.strip() for h in rows[0]]
    n = len(header) - 1
    if header[0] != "timestamp" or n < 1 or header[1:] != [f"node_{i}" for i in range(n)]:
        raise ValidationError(f"{path}: header must be timestamp,node_0,...,node_{{n-1}}, got {header}")
    stamps, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != n + 1:
            raise ValidationError(f"{path}:{lineno}: expected {n + 1} fields, got {len(row)}")
        stamps.append(_parse_timestamp(row[0]))
        try:
            values.append([float(v) for v in row[1:]])
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: non-numeric value") from None
    if len(stamps) < 2:
        raise ValidationError(f"{path}: need at least two rows")
    ts = np.asarray(stamps)
    gaps = np.diff(ts)
    if np.any(gaps <= 0):
        raise ValidationError(f"{path}: timestamps must be strictly increasing")
    if np.any(np.abs(gaps - gaps[0]) > 1e-6):
        raise ValidationError(f"{path}: timestamps must have constant spacing (gap or irregular row)")
    x = np.asarray(values)
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{path}: non-finite values")
    return x, float(gaps[0]), ts


def write_series_csv(path, values, step_seconds=1.0, start=0):
    x = np.asarray(values, dtype=np.float64)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp"] + [f"node_{i}" for i in range(x.shape[1])])
        for t, row in enumerate(x):
            w.writerow([int(start + t * step_seconds)] + [repr(float(v)) for v in row])


def read_adjacency_csv(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"adjacency file not found: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        a = np.asarray([[float(v) for v in r] for r in rows])
    except ValueError:
        raise ValidationError(f"{path}: adjacency must be numeric, no header") from None
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"{path}: adjacency must be n x n, got {a.shape}")
    return a


def write_adjacency_csv(path, adjacency):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(adjacency, dtype=np.float64):
            w.writerow([repr(float(v)) for v in row])
