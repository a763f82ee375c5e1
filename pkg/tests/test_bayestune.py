import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphrl import bayestune as bt
from graphrl.errors import ConfigError, DimensionError, TuningError

UNIT = bt.SearchSpace([bt.Dimension("x", 0.0, 1.0)])


def quadratic(p):
    return (p["x"] - 0.3) ** 2


def dense_posterior(x, y, xq, ell=0.2, noise=1e-4):
    # oracle: direct solves on the full Gram matrix, no Cholesky reuse
    def k(a, b):
        d = a[:, None, :] - b[None, :, :]
        return np.exp(-0.5 * np.sum(d * d, axis=2) / ell ** 2)

    g = k(x, x) + noise * np.eye(len(x))
    ks = k(x, xq)
    mean = ks.T @ np.linalg.solve(g, y)
    var = 1.0 - np.einsum("ij,ij->j", ks, np.linalg.solve(g, ks))
    return mean, var


def test_single_point_interpolates():
    m = bt.gp_fit([[0.4]], [2.0], noise=0.0)
    post = bt.gp_predict(m, [[0.4]])
    assert post.mean[0] == pytest.approx(2.0, abs=1e-12)
    assert post.var[0] == pytest.approx(0.0, abs=1e-12)


def test_kernel_unit_diagonal():
    x = np.random.default_rng(0).random((5, 2))
    np.testing.assert_allclose(np.diag(bt.SquaredExponential()(x, x)), 1.0, atol=1e-15)


def test_far_field_reverts_to_prior():
    m = bt.gp_fit([[0.0], [0.1]], [3.0, -1.0])
    post = bt.gp_predict(m, [[50.0]])
    assert post.mean[0] == pytest.approx(0.0, abs=1e-12)
    assert post.var[0] == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 3))
def test_posterior_matches_dense_solve(seed, m, d):
    rng = np.random.default_rng(seed)
    x, y, xq = rng.random((m, d)), rng.normal(size=m), rng.random((7, d))
    model = bt.gp_fit(x, y)
    if model.jitter:
        return
    post = bt.gp_predict(model, xq)
    mean, var = dense_posterior(x, y, xq)
    np.testing.assert_allclose(post.mean, mean, atol=1e-8)
    np.testing.assert_allclose(post.var, np.maximum(var, 0), atol=1e-8)
    assert np.all(post.var >= 0) and np.all(post.var <= 1.0 + 1e-12)


def test_duplicate_points_use_jitter_or_noise():
    m = bt.gp_fit([[0.5], [0.5]], [1.0, 1.0], noise=0.0)
    assert m.jitter > 0
    assert np.isfinite(bt.gp_predict(m, [[0.2]]).mean).all()


def test_fit_shape_checks():
    with pytest.raises(DimensionError):
        bt.gp_fit(np.zeros((3, 1)), np.zeros(2))
    with pytest.raises(DimensionError):
        bt.gp_predict(bt.gp_fit([[0.1]], [1.0]), [[0.1, 0.2]])


def test_ei_examples():
    ei = bt.expected_improvement(bt.Posterior(np.array([0.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])), 0.0)
    assert ei[0] == 0.0
    assert ei[2] == pytest.approx(0.3989422804014327, abs=1e-12)
    assert bt.expected_improvement(bt.Posterior(np.array([0.0]), np.array([0.0])), 1.0)[0] == 1.0


def test_ei_monte_carlo_oracle():
    mu, sd, best = 0.3, 0.7, 0.5
    z = np.random.default_rng(0).normal(mu, sd, 2_000_000)
    mc = np.maximum(best - z, 0).mean()
    ei = bt.expected_improvement(bt.Posterior(np.array([mu]), np.array([sd ** 2])), best)[0]
    assert ei == pytest.approx(mc, abs=3e-3)


@settings(max_examples=60, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 4), st.floats(-5, 5))
def test_ei_nonnegative_and_at_least_plain_gain(mu, var, best):
    ei = bt.expected_improvement(bt.Posterior(np.array([mu]), np.array([var])), best)[0]
    assert ei >= max(best - mu, 0.0) - 1e-12


def test_pool_inside_unit_box():
    rng = np.random.default_rng(1)
    pool = bt.candidate_pool(3, rng, 256, incumbent=[0.99, 0.0, 0.5])
    assert pool.shape == (256 + 64, 3)
    assert pool.min() >= 0 and pool.max() <= 1


def test_proposal_is_pool_argmax():
    rng = np.random.default_rng(2)
    x = rng.random((5, 1))
    model = bt.gp_fit(x, np.sin(6 * x).ravel())
    pool = bt.candidate_pool(1, rng, 128)
    point, ei = bt.propose_next(model, pool, float(model.y.min()))
    full = bt.expected_improvement(bt.gp_predict(model, pool), float(model.y.min()))
    assert ei == full.max() and np.array_equal(point, pool[int(np.argmax(full))])


def test_degenerate_pool_returns_first():
    model = bt.gp_fit([[0.5]], [0.0])
    pool = np.full((4, 1), 0.5)
    point, ei = bt.propose_next(model, pool, 0.0)
    sd = np.sqrt(bt.gp_predict(model, pool).var[0])
    assert ei == pytest.approx(sd * 0.3989422804014327, rel=1e-12) and point[0] == 0.5


def test_search_space_log_scale_round_trip():
    space = bt.SearchSpace([bt.Dimension("lr", 1e-4, 1e-1, "log10"), bt.Dimension("h", 8, 64)])
    x = np.array([[1e-3, 16.0]])
    np.testing.assert_allclose(space.from_unit(space.to_unit(x)), x, rtol=1e-12)
    np.testing.assert_allclose(space.to_unit(x)[0, 0], 1 / 3, rtol=1e-12)


def test_space_validation():
    with pytest.raises(ConfigError):
        bt.Dimension("a", 1.0, 1.0)
    with pytest.raises(ConfigError):
        bt.Dimension("a", 0.0, 1.0, "log10")
    with pytest.raises(ConfigError):
        bt.SearchSpace([bt.Dimension("a", 0, 1), bt.Dimension("a", 0, 2)])


def test_tune_finds_quadratic_minimum():
    res = bt.tune(quadratic, UNIT, budget=20, seed=0)
    assert abs(res.best_point["x"] - 0.3) < 0.05
    assert len(res.log) == 20


def test_reported_best_matches_exhaustive_scan_and_running_min():
    res = bt.tune(quadratic, UNIT, budget=12, seed=3)
    objs = [r["objective"] for r in res.log]
    assert res.best_objective == min(objs)
    running = np.inf
    for r in res.log:
        assert r["is_best"] == (r["objective"] < running)
        running = min(running, r["objective"])


def test_tune_is_deterministic(tmp_path):
    a = bt.tune(quadratic, UNIT, budget=8, seed=5)
    b = bt.tune(quadratic, UNIT, budget=8, seed=5)
    a.write_log(tmp_path / "a.csv", UNIT.names)
    b.write_log(tmp_path / "b.csv", UNIT.names)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    with open(tmp_path / "a.csv") as fh:
        assert next(csv.reader(fh)) == ["iteration", "x", "objective", "is_best"]


def test_failed_evaluations_get_penalty():
    def flaky(p):
        if p["x"] > 0.6:
            raise RuntimeError("diverged")
        return quadratic(p)

    res = bt.tune(flaky, UNIT, budget=10, seed=1)
    ok = [r["objective"] for r in res.log if not r["failed"]]
    for r in res.log:
        if r["failed"]:
            assert r["objective"] > max(ok)
    assert res.best_point["x"] <= 0.6


def test_all_initial_failures_raise():
    with pytest.raises(TuningError):
        bt.tune(lambda p: float("nan"), UNIT, budget=5)


def test_budget_below_initial_design():
    with pytest.raises(ConfigError):
        bt.tune(quadratic, UNIT, budget=2)


def test_random_search_budget_and_determinism():
    a = bt.random_search(quadratic, UNIT, budget=7, seed=2)
    assert len(a.log) == 7
    assert a.log == bt.random_search(quadratic, UNIT, budget=7, seed=2).log
