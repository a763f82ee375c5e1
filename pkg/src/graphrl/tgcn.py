"""T-GCN forecaster: two-layer GCN per time step feeding a shared GRU cell.

Signals are laid out batch-major: B windows over n nodes form a (B*n) x F
matrix where row ``b*n + i`` is node ``i`` of window ``b``.  All dense weights
act row-wise (shared across nodes); only :func:`numkit.graph_propagate` mixes
rows, and only within one window's block.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numkit as nk
from .errors import ConfigError, DimensionError, TrainingError, ValidationError
from .graphsig import NormalizedGraph, ScalerParams, WindowedDataset, normalize_adjacency
from .seeding import glorot, substream

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "graphrl.forecast/1"
KINDS = ("tgcn", "gru", "persistence")


@dataclass
class TgcnConfig:
    n_nodes: int = 1
    window: int = 12
    hidden: int = 8
    horizons: tuple = (1, 2, 3, 4)
    gcn_hidden: int = 8
    gcn_out: int = 0  # 0 -> same as gcn_hidden
    l2: float = 1e-5
    lr: float = 0.01
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        self.horizons = tuple(int(h) for h in self.horizons)
        if not self.gcn_out:
            self.gcn_out = self.gcn_hidden
        for name in ("n_nodes", "window", "hidden", "gcn_hidden", "gcn_out", "epochs", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive count, got {getattr(self, name)}")
        if not self.horizons:
            raise ConfigError("horizons must be non-empty")
        if self.l2 < 0:
            raise ConfigError(f"l2 (lambda) must be >= 0, got {self.l2}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")

    def to_dict(self):
        d = asdict(self)
        d["horizons"] = list(self.horizons)
        return d


def init_params(config: TgcnConfig, kind="tgcn", rng=None) -> nk.ParamStore:
    """Glorot-uniform weights, zero biases."""
    if rng is None:
        rng = substream(config.seed, "init")
    f0, f1, h, k = config.gcn_hidden, config.gcn_out, config.hidden, len(config.horizons)
    p = nk.ParamStore()
    if kind == "tgcn":
        p.add("W0", glorot(rng, 1, f0))
        p.add("W1", glorot(rng, f0, f1))
    elif kind == "gru":
        p.add("W_in", glorot(rng, 1, f1))
        p.add("b_in", np.zeros((1, f1)), bias=True)
    else:
        raise ConfigError(f"no trainable parameters for model kind {kind!r}")
    for gate in ("z", "r", "h"):
        p.add(f"W{gate}", glorot(rng, f1 + h, h))
        p.add(f"b{gate}", np.zeros((1, h)), bias=True)
    p.add("Wo", glorot(rng, h, k))
    p.add("bo", np.zeros((1, k)), bias=True)
    return p


def _check_signal(x, n):
    rows = nk.value_of(x).shape[0]
    if rows % n:
        raise DimensionError(f"signal has {rows} rows, not a multiple of graph size {n}")


def gcn_forward(x, graph: NormalizedGraph, w):
    """sigmoid(P relu(P X W0) W1) for node signals ``x`` ((B*n) x 1)."""
    _check_signal(x, graph.n)
    p = graph.propagation
    hidden = nk.relu(nk.graph_propagate(p, nk.matmul(x, w["W0"])))
    return nk.sigmoid(nk.graph_propagate(p, nk.matmul(hidden, w["W1"])))


def dense_features(x, w):
    """GRU-only baseline feature map: one dense sigmoid layer, no propagation."""
    return nk.sigmoid(nk.add(nk.matmul(x, w["W_in"]), w["b_in"]))


def gru_step(g, h_prev, w):
    """One GRU update; the new state is z*h_prev + (1-z)*candidate."""
    gh = nk.concat_columns(g, h_prev)
    z = nk.sigmoid(nk.add(nk.matmul(gh, w["Wz"]), w["bz"]))
    r = nk.sigmoid(nk.add(nk.matmul(gh, w["Wr"]), w["br"]))
    cand = nk.tanh(nk.add(nk.matmul(nk.concat_columns(g, nk.hadamard(r, h_prev)), w["Wh"]), w["bh"]))
    one_minus_z = nk.add(nk.scale(z, -1.0), np.ones(nk.value_of(z).shape))
    return nk.add(nk.hadamard(z, h_prev), nk.hadamard(one_minus_z, cand))


def encode(windows: np.ndarray, graph: NormalizedGraph | None, w, kind="tgcn", hidden=None):
    """Run the recurrent encoder over (B, w, n) windows; returns final (B*n) x H state."""
    b, steps, n = windows.shape
    if graph is not None and graph.n != n:
        raise DimensionError(f"windows have {n} nodes but graph has {graph.n}")
    hdim = nk.value_of(w["Wz"]).shape[1] if hidden is None else hidden
    h = np.zeros((b * n, hdim))
    for t in range(steps):
        x_t = np.ascontiguousarray(windows[:, t, :]).reshape(b * n, 1)
        g = gcn_forward(x_t, graph, w) if kind == "tgcn" else dense_features(x_t, w)
        h = gru_step(g, h, w)
    return h


def forecast_forward(windows, graph, w, kind="tgcn"):
    """Predictions (B*n) x K in scaled space; row layout matches :func:`encode`."""
    h = encode(windows, graph, w, kind)
    return nk.add(nk.matmul(h, w["Wo"]), w["bo"])


def rows_to_targets(rows: np.ndarray, b: int, n: int) -> np.ndarray:
    """(B*n) x K rows -> (B, K, n)."""
    return rows.reshape(b, n, -1).transpose(0, 2, 1)


def targets_to_rows(targets: np.ndarray) -> np.ndarray:
    b, k, n = targets.shape
    return np.ascontiguousarray(targets.transpose(0, 2, 1)).reshape(b * n, k)


def train_loss(pred, target, nodes, params: nk.ParamStore, l2: float):
    """MSE(pred, target) + l2 * (sum of squared weight entries)."""
    loss = nk.mse(pred, target)
    if l2 > 0:
        loss = nk.add(loss, nk.scale(nk.l2_node(nodes, params), l2))
    return loss


def loss_value(windows, targets, graph, params: nk.ParamStore, l2, kind="tgcn") -> float:
    pred = forecast_forward(windows, graph, params.params, kind)
    data = float(np.mean((pred - targets_to_rows(targets)) ** 2))
    return data + l2 * nk.l2_penalty(params)


@dataclass
class ForecastModel:
    kind: str
    config: TgcnConfig
    scaler: ScalerParams
    graph: NormalizedGraph | None = None
    params: nk.ParamStore | None = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "gru" and self.params is not None and "W0" in self.params:
            raise ConfigError("GRU-only model must not carry GCN weights")

    @property
    def horizons(self):
        return self.config.horizons

    def predict(self, windows) -> np.ndarray:
        """Scaled (B, w, n) windows -> scaled (B, K, n) predictions."""
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim == 2:
            windows = windows[None]
        if windows.shape[1] != self.config.window:
            raise DimensionError(f"window length {windows.shape[1]} != configured {self.config.window}")
        if self.kind == "persistence":
            return persistence_predict(windows, len(self.horizons))
        b, _, n = windows.shape
        rows = forecast_forward(windows, self.graph, self.params.params, self.kind)
        return rows_to_targets(rows, b, n)

    def predict_original(self, windows_scaled) -> np.ndarray:
        return self.scaler.invert(self.predict(windows_scaled))


def persistence_predict(windows, n_horizons: int) -> np.ndarray:
    """Repeat the last observed row for every horizon: (B, w, n) -> (B, K, n)."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim == 2:
        windows = windows[None]
    return np.repeat(windows[:, -1:, :], n_horizons, axis=1)


def train(dataset: WindowedDataset, config: TgcnConfig, graph: NormalizedGraph | None,
          scaler: ScalerParams, kind="tgcn"):
    """Mini-batch Adam on the regularized loss.

    Returns ``(model, history)`` where ``history[0]`` is the full-training-set
    loss of the untrained model and ``history[e]`` the loss after epoch ``e``.
    """
    if len(dataset) == 0:
        raise ValidationError("training dataset is empty")
    if dataset.window != config.window:
        raise DimensionError(f"dataset window {dataset.window} != config window {config.window}")
    if tuple(dataset.horizons) != config.horizons:
        raise ConfigError(f"dataset horizons {dataset.horizons} != config horizons {config.horizons}")
    if kind == "persistence":
        return ForecastModel(kind, config, scaler, graph), []
    if kind == "tgcn" and graph is None:
        raise ConfigError("T-GCN needs a graph")

    params = init_params(config, kind, substream(config.seed, "init"))
    order_rng = substream(config.seed, "shuffle")
    adam = nk.AdamState()
    x_all, y_all = dataset.windows, dataset.targets
    m = len(dataset)

    def full_loss():
        return loss_value(x_all, y_all, graph, params, config.l2, kind)

    history = [full_loss()]
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(m)
        for start in range(0, m, config.batch_size):
            idx = order[start:start + config.batch_size]
            tape = nk.Tape()
            nodes = tape.watch(params)
            pred = forecast_forward(x_all[idx], graph, nodes, kind)
            loss = train_loss(pred, targets_to_rows(y_all[idx]), nodes, params, config.l2)
            if not np.isfinite(loss.value[0, 0]):
                raise TrainingError(f"loss diverged in epoch {epoch}", epoch=epoch)
            tape.backward(loss, params)
            nk.adam_step(params, adam, config.lr)
        current = full_loss()
        if not np.isfinite(current):
            raise TrainingError(f"loss diverged in epoch {epoch}", epoch=epoch)
        history.append(current)
        log.debug("%s epoch %d loss %.6g", kind, epoch, current)
    model = ForecastModel(kind, config, scaler, graph, params, history)
    return model, history


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, model: ForecastModel):
    meta = {
        "format": CHECKPOINT_FORMAT,
        "kind": model.kind,
        "config": model.config.to_dict(),
        "constant_nodes": list(model.scaler.constant_nodes),
    }
    arrays = {
        "__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
        "scaler_min": model.scaler.mins,
        "scaler_max": model.scaler.maxs,
    }
    if model.graph is not None:
        arrays["graph_adjacency"] = model.graph.adjacency
    if model.params is not None:
        for name, v in model.params.params.items():
            arrays[f"param:{name}"] = v
    with Path(path).open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> ForecastModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z:
            raise ValidationError(f"{path}: not a forecast checkpoint (no metadata)")
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValidationError(f"{path}: incompatible checkpoint format {meta.get('format')!r}, expected {CHECKPOINT_FORMAT!r}")
        config = TgcnConfig(**meta["config"])
        scaler = ScalerParams(z["scaler_min"].copy(), z["scaler_max"].copy(), tuple(meta["constant_nodes"]))
        graph = normalize_adjacency(z["graph_adjacency"]) if "graph_adjacency" in z else None
        params = None
        if meta["kind"] != "persistence":
            params = init_params(config, meta["kind"], np.random.default_rng(0))
            params.load_state_dict({k[6:]: z[k] for k in z.files if k.startswith("param:")})
    return ForecastModel(meta["kind"], config, scaler, graph, params)
