"""Gaussian-process surrogate with expected-improvement proposals for loss minimization."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.stats import norm, qmc

from .errors import ConfigError, DimensionError, NumericError, TuningError
from .seeding import substream

log = logging.getLogger(__name__)

JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@dataclass(frozen=True)
class Dimension:
    name: str
    lower: float
    upper: float
    scale: str = "linear"

    def __post_init__(self):
        if self.scale not in ("linear", "log10"):
            raise ConfigError(f"{self.name}: scale must be 'linear' or 'log10', got {self.scale!r}")
        if not self.lower < self.upper:
            raise ConfigError(f"{self.name}: lower {self.lower} must be < upper {self.upper}")
        if self.scale == "log10" and self.lower <= 0:
            raise ConfigError(f"{self.name}: log10 dimension needs lower > 0, got {self.lower}")


class SearchSpace:
    """Box of named dimensions; the GP works in unit-cube coordinates."""

    def __init__(self, dims):
        self.dims = tuple(d if isinstance(d, Dimension) else Dimension(**d) for d in dims)
        if not self.dims:
            raise ConfigError("search space has no dimensions")
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate dimension names in {names}")
        self._lo = np.array([self._fwd(d, d.lower) for d in self.dims])
        self._hi = np.array([self._fwd(d, d.upper) for d in self.dims])

    @staticmethod
    def _fwd(d, v):
        return math.log10(v) if d.scale == "log10" else float(v)

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def names(self):
        return [d.name for d in self.dims]

    def to_unit(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        t = np.array([[self._fwd(d, v) for d, v in zip(self.dims, row)] for row in x])
        return (t - self._lo) / (self._hi - self._lo)

    def from_unit(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        t = self._lo + np.clip(u, 0.0, 1.0) * (self._hi - self._lo)
        out = t.copy()
        for j, dim in enumerate(self.dims):
            if dim.scale == "log10":
                out[:, j] = 10.0 ** t[:, j]
            out[:, j] = np.clip(out[:, j], dim.lower, dim.upper)
        return out


@dataclass(frozen=True)
class SquaredExponential:
    lengthscale: float = 0.2
    variance: float = 1.0

    def __call__(self, a, b) -> np.ndarray:
        a, b = np.atleast_2d(a), np.atleast_2d(b)
        sq = np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2.0 * a @ b.T
        return self.variance * np.exp(-0.5 * np.maximum(sq, 0.0) / self.lengthscale ** 2)


@dataclass
class GpModel:
    x: np.ndarray
    y: np.ndarray
    kernel: SquaredExponential
    noise: float
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0


@dataclass(frozen=True)
class Posterior:
    mean: np.ndarray
    var: np.ndarray


def gp_fit(x, y, kernel: SquaredExponential | None = None, noise=1e-4) -> GpModel:
    """Cholesky of K + noise*I, adding jitter from 1e-10 up to 1e-6 if needed."""
    kernel = kernel or SquaredExponential()
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape[0] < 1 or x.shape[0] != y.shape[0]:
        raise DimensionError(f"need m >= 1 points with matching targets, got X {x.shape}, y {y.shape}")
    if noise < 0:
        raise ConfigError(f"noise variance must be >= 0, got {noise}")
    k = kernel(x, x) + noise * np.eye(x.shape[0])
    for jitter in JITTERS:
        try:
            chol = cholesky(k + jitter * np.eye(x.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            continue
        alpha = cho_solve((chol, True), y)
        return GpModel(x, y, kernel, noise, chol, alpha, jitter)
    cond = np.linalg.cond(k)
    raise NumericError(f"Gram matrix not positive definite even with jitter {JITTERS[-1]} (condition number {cond:.3g})")


def gp_predict(model: GpModel, xq) -> Posterior:
    xq = np.atleast_2d(np.asarray(xq, dtype=np.float64))
    if xq.shape[1] != model.x.shape[1]:
        raise DimensionError(f"query has {xq.shape[1]} dims, model has {model.x.shape[1]}")
    ks = model.kernel(model.x, xq)
    mean = ks.T @ model.alpha
    v = solve_triangular(model.chol, ks, lower=True)
    var = model.kernel.variance - np.sum(v * v, axis=0)
    if np.any(var < -1e-9):
        log.debug("clamping posterior variance %.3g to 0", var.min())
    return Posterior(mean, np.maximum(var, 0.0))


def expected_improvement(post: Posterior, f_best: float) -> np.ndarray:
    """E[max(0, f_best - f)] for f ~ N(mean, var), elementwise."""
    mu = np.atleast_1d(np.asarray(post.mean, dtype=np.float64))
    s = np.sqrt(np.atleast_1d(np.asarray(post.var, dtype=np.float64)))
    delta = f_best - mu
    out = np.maximum(delta, 0.0)
    pos = s > 0
    z = delta[pos] / s[pos]
    out[pos] = delta[pos] * norm.cdf(z) + s[pos] * norm.pdf(z)
    return np.maximum(out, 0.0)


def candidate_pool(d: int, rng: np.random.Generator, count=2048, incumbent=None, local=64, radius=0.05):
    """Scrambled Sobol points in the unit cube plus Gaussian nudges of the incumbent."""
    sob = qmc.Sobol(d, scramble=True, seed=rng)
    pool = sob.random(count)
    if incumbent is not None and local > 0:
        inc = np.asarray(incumbent, dtype=np.float64).reshape(1, d)
        near = np.clip(inc + radius * rng.standard_normal((local, d)), 0.0, 1.0)
        pool = np.vstack([pool, near])
    return pool


def propose_next(model: GpModel, pool, f_best: float) -> tuple[np.ndarray, float]:
    """Pool point with the largest EI (first on ties) and that EI."""
    pool = np.atleast_2d(pool)
    ei = expected_improvement(gp_predict(model, pool), f_best)
    i = int(np.argmax(ei))
    return pool[i], float(ei[i])


@dataclass
class TuneResult:
    best_point: dict
    best_objective: float
    log: list = field(default_factory=list)
    seed: int = 0

    def write_log(self, path, names):
        write_tuning_log(path, self.log, names)


def _penalty(values):
    worst = max(values)
    return worst + 9.0 * max(abs(worst), 1.0)


def _evaluate(objective, point, names):
    try:
        v = float(objective(dict(zip(names, point))))
    except Exception as exc:  # an objective may fail in any way; the tuner records it
        log.warning("objective failed at %s: %s", point, exc)
        return None
    return v if np.isfinite(v) else None


def _record(log_rows, point, value, failed):
    best_before = min((r["objective"] for r in log_rows), default=np.inf)
    log_rows.append({"iteration": len(log_rows), "point": [float(v) for v in point],
                     "objective": value, "failed": failed, "is_best": value < best_before})


def tune(objective, space: SearchSpace, budget=20, seed=0, kernel=None, noise=1e-4, pool_size=2048) -> TuneResult:
    """Minimize ``objective(dict of params) -> float`` over ``space``.

    Failed evaluations (exceptions or non-finite values) are stored as a penalty
    well above the worst successful value so the surrogate steers away.
    """
    kernel = kernel or SquaredExponential()
    n_init = max(3, space.d + 1)
    if budget < n_init:
        raise ConfigError(f"budget {budget} smaller than initial design size {n_init}")
    rng = substream(seed, "tuner")
    names = space.names
    with warnings.catch_warnings():
        # small initial designs are not powers of two; balance is not needed here
        warnings.simplefilter("ignore", UserWarning)
        units = list(qmc.Sobol(space.d, scramble=True, seed=rng).random(n_init))
    raw = [_evaluate(objective, space.from_unit(u)[0], names) for u in units]
    if all(v is None for v in raw):
        raise TuningError(f"objective failed on all {n_init} initial points")
    ok = [v for v in raw if v is not None]
    rows: list[dict] = []
    values = []
    for u, v in zip(units, raw):
        failed = v is None
        v = _penalty(ok) if failed else v
        values.append(v)
        _record(rows, space.from_unit(u)[0], v, failed)

    while len(rows) < budget:
        y = np.array(values)
        mu, sd = y.mean(), y.std()
        ys = (y - mu) / (sd if sd > 0 else 1.0)
        model = gp_fit(np.array(units), ys, kernel, noise)
        inc = units[int(np.argmin(y))]
        pool = candidate_pool(space.d, rng, pool_size, inc)
        u, _ = propose_next(model, pool, float(ys.min()))
        point = space.from_unit(u)[0]
        v = _evaluate(objective, point, names)
        failed = v is None
        if failed:
            v = _penalty([vv for vv, r in zip(values, rows) if not r["failed"]])
        units.append(u)
        values.append(v)
        _record(rows, point, v, failed)

    return _result(rows, names, seed)


def _result(rows, names, seed):
    good = [r for r in rows if not r["failed"]] or rows
    best = min(good, key=lambda r: r["objective"])
    return TuneResult(dict(zip(names, best["point"])), best["objective"], rows, seed)


def random_search(objective, space: SearchSpace, budget=20, seed=0) -> TuneResult:
    rng = substream(seed, "random-search")
    rows: list[dict] = []
    values = []
    for u in rng.random((budget, space.d)):
        point = space.from_unit(u)[0]
        v = _evaluate(objective, point, space.names)
        failed = v is None
        if failed:
            v = _penalty([x for x in values] or [0.0])
        values.append(v)
        _record(rows, point, v, failed)
    return _result(rows, space.names, seed)


def write_tuning_log(path, rows, names):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", *names, "objective", "is_best"])
        for r in rows:
            w.writerow([r["iteration"], *(repr(v) for v in r["point"]), repr(float(r["objective"])), int(r["is_best"])])
