import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from graphrl.dqnagent import AgentConfig, DQNAgent, QNetwork, ReplayMemory, Transition
from graphrl.errors import ConfigError, DimensionError, ValidationError


def transition(i, done=False, r=10.0):
    return Transition(np.full(5, float(i)), i % 4, r, np.full(5, i + 1.0), done)


def tabular_q_star(gamma):
    """Brute-force value iteration on the 2-state, 2-action MDP used below.

    Action a moves to state a; the reward is +1 when a equals the current state.
    """
    q = np.zeros((2, 2))
    for _ in range(2000):
        v = q.max(axis=1)
        q = np.array([[(1.0 if a == s else -1.0) + gamma * v[a] for a in range(2)] for s in range(2)])
    return q


def tabular_agent(seed=0):
    agent = DQNAgent(2, 2, AgentConfig(gamma=0.5, batch_size=4, lr=0.005, hidden=16, seed=seed))
    states = np.eye(2)
    for s in range(2):
        for a in range(2):
            agent.memorize(Transition(states[s], a, 1.0 if a == s else -1.0, states[a], False))
    return agent, states


def test_config_validation():
    with pytest.raises(ConfigError):
        AgentConfig(epsilon_min=0.5, epsilon=0.1)
    with pytest.raises(ConfigError):
        AgentConfig(gamma=1.0)
    with pytest.raises(ConfigError):
        AgentConfig(trunk="lstm")


def test_memory_fifo_eviction():
    mem = ReplayMemory(2)
    for i in range(3):
        mem.append(transition(i))
    assert len(mem) == 2
    assert [t.s[0] for t in mem] == [1.0, 2.0]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(0, 60))
def test_memory_never_exceeds_capacity(cap, pushes):
    mem = ReplayMemory(cap)
    for i in range(pushes):
        mem.append(transition(i))
        assert len(mem) <= cap
    if pushes:
        assert mem[len(mem) - 1].s[0] == pushes - 1
        assert mem[0].s[0] == max(0, pushes - cap)


def test_memorize_round_trip_and_bad_action():
    agent = DQNAgent(5, 4)
    t = transition(3)
    agent.memorize(t)
    assert agent.memory[0] is t
    with pytest.raises(ValidationError):
        agent.memorize(Transition(t.s, 4, 10.0, t.s_next, False))


def test_act_uniform_when_epsilon_one():
    agent = DQNAgent(5, 4, AgentConfig(seed=3))
    counts = np.bincount([agent.act(np.zeros(5)) for _ in range(10_000)], minlength=4)
    assert chisquare(counts).pvalue > 0.001


def test_act_greedy_when_epsilon_zero():
    agent = DQNAgent(5, 4, AgentConfig(epsilon=0.0, epsilon_min=0.0))
    s = np.linspace(0, 1, 5)
    assert agent.act(s) == int(np.argmax(agent.q_values(s)))


def test_ties_go_to_lowest_action():
    agent = DQNAgent(5, 4, AgentConfig(epsilon=0.0, epsilon_min=0.0))
    for k in agent.net.params:
        agent.net.params.params[k][:] = 0.0
    agent.net.params.params["bq"][:] = [[1.0, 3.0, 3.0, 2.0]]
    assert agent.act(np.ones(5)) == 1


def test_td_target_cases():
    agent = DQNAgent(5, 4)
    assert agent.td_target(transition(0, done=True, r=10.0)) == 10.0
    for k in agent.net.params:
        agent.net.params.params[k][:] = 0.0
    agent.net.params.params["bq"][:] = [[0.0, 2.0, 1.0, -1.0]]
    t = Transition(np.zeros(5), 0, 1.0, np.ones(5), False)
    assert agent.td_target(t, gamma=0.9) == pytest.approx(2.8, abs=1e-15)
    assert agent.td_target(t, gamma=0.0) == 1.0


def test_zero_weights_give_head_bias():
    net = QNetwork(5, 4, 8)
    for k in net.params:
        net.params.params[k][:] = 0.0
    net.params.params["bq"][:] = [[1.0, 2.0, 3.0, 4.0]]
    np.testing.assert_array_equal(net.q_values(np.arange(5.0)), [1, 2, 3, 4])


def test_dense_forward_matches_matrix_oracle():
    net = QNetwork(5, 4, 8, rng=np.random.default_rng(5))
    w = net.params.params
    s = np.random.default_rng(6).random(5)
    h = np.maximum(s @ w["W1"] + w["b1"], 0)
    h = np.maximum(h @ w["W2"] + w["b2"], 0)
    np.testing.assert_allclose(net.q_values(s), (h @ w["Wq"] + w["bq"])[0], atol=1e-14)
    assert np.array_equal(net.q_values(s), net.q_values(s.copy()))


def test_graph_forward_matches_matrix_oracle():
    net = QNetwork(3, 2, 4, trunk="graph", rng=np.random.default_rng(8))
    w = net.params.params
    s = np.array([0.2, 0.5, 0.9])
    at = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=float)
    dm = np.diag(1 / np.sqrt(at.sum(1)))
    p = dm @ at @ dm

    def sig(x):
        return 1 / (1 + np.exp(-x))

    g = sig(p @ np.maximum(p @ s[:, None] @ w["W0"], 0) @ w["W1"])
    gh = np.hstack([g, np.zeros((3, 4))])
    z = sig(gh @ w["Wz"] + w["bz"])
    cand = np.tanh(gh @ w["Wh"] + w["bh"])
    h = (1 - z) * cand
    q = h.reshape(1, -1) @ w["Wq"] + w["bq"]
    np.testing.assert_allclose(net.q_values(s), q[0], atol=1e-14)
    # batched rows agree with single states
    batch = np.stack([s, s[::-1]])
    np.testing.assert_allclose(net.forward(batch)[1], net.q_values(s[::-1]), atol=1e-14)


def test_state_width_checked():
    with pytest.raises(DimensionError):
        QNetwork(5, 4).q_values(np.zeros(3))


def test_replay_skips_when_memory_small():
    agent = DQNAgent(5, 4, AgentConfig(batch_size=8))
    agent.memorize(transition(0))
    eps = agent.epsilon
    assert agent.replay() is None
    assert agent.skipped_replays == 1 and agent.epsilon == eps


def test_replay_decays_epsilon_and_keeps_memory():
    agent = DQNAgent(5, 4, AgentConfig(batch_size=4, epsilon=0.9, epsilon_decay=0.5, epsilon_min=0.2))
    for i in range(6):
        agent.memorize(transition(i))
    before = list(agent.memory)
    old = agent.epsilon
    agent.replay()
    assert agent.epsilon == max(0.2, old * 0.5)
    agent.replay()
    agent.replay()
    assert agent.epsilon == 0.2
    assert list(agent.memory) == before


def test_replay_terminal_batch_targets_reward():
    agent = DQNAgent(5, 4, AgentConfig(batch_size=3, lr=0.05))
    ts = [transition(i, done=True, r=10.0) for i in range(3)]
    for t in ts:
        agent.memorize(t)
    assert all(agent.td_target(t) == 10.0 for t in ts)
    for _ in range(300):
        agent.replay()
    for t in ts:
        assert agent.q_values(t.s)[t.a] == pytest.approx(10.0, abs=0.05)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.5, 1.0), st.integers(0, 40))
def test_epsilon_monotone_with_floor(eps0, decay, replays):
    cfg = AgentConfig(epsilon=eps0, epsilon_decay=decay, epsilon_min=eps0 / 3, batch_size=1)
    agent = DQNAgent(5, 4, cfg)
    agent.memorize(transition(1))
    seen = [agent.epsilon]
    for _ in range(replays):
        agent.replay()
        seen.append(agent.epsilon)
    assert all(b <= a for a, b in zip(seen, seen[1:]))
    assert min(seen) >= cfg.epsilon_min
    assert seen[-1] == max(cfg.epsilon_min, eps0 * decay ** replays)


def test_value_iteration_oracle_values():
    np.testing.assert_allclose(tabular_q_star(0.5), [[2.0, 0.0], [0.0, 2.0]], atol=1e-12)


def test_tabular_mdp_matches_value_iteration():
    agent, states = tabular_agent(0)
    for _ in range(500):
        agent.replay()
    q = np.array([agent.q_values(s) for s in states])
    q_star = tabular_q_star(0.5)
    assert np.array_equal(q.argmax(1), q_star.argmax(1))
    np.testing.assert_allclose(q, q_star, atol=0.05)


def test_one_state_constant_reward_geometric_value():
    gamma, c = 0.9, 1.0
    agent = DQNAgent(1, 2, AgentConfig(gamma=gamma, batch_size=2, lr=0.01, hidden=16))
    s = np.ones(1)
    for a in range(2):
        agent.memorize(Transition(s, a, c, s, False))
    for _ in range(1500):
        agent.replay()
    assert agent.q_values(s).max() == pytest.approx(c / (1 - gamma), rel=0.05)


def test_seeded_trajectory_is_reproducible():
    def trace(seed):
        agent = DQNAgent(5, 4, AgentConfig(batch_size=4, seed=seed))
        acts = []
        for i in range(12):
            s = np.full(5, i / 10)
            a = agent.act(s)
            acts.append(a)
            agent.memorize(Transition(s, a, 10.0 if a == 0 else -10.0, s + 0.1, False))
            agent.replay()
        return acts, agent.net.params.state_dict()

    a1, w1 = trace(4)
    a2, w2 = trace(4)
    assert a1 == a2
    assert all(np.array_equal(w1[k], w2[k]) for k in w1)


def test_checkpoint_round_trip(tmp_path):
    agent = DQNAgent(5, 4, AgentConfig(batch_size=1, trunk="graph", hidden=4))
    agent.memorize(transition(0))
    agent.replay()
    agent.save(tmp_path / "a.npz")
    back = DQNAgent.load(tmp_path / "a.npz")
    assert back.epsilon == agent.epsilon and back.config == agent.config
    s = np.linspace(0, 1, 5)
    np.testing.assert_array_equal(back.q_values(s), agent.q_values(s))
    assert len(back.memory) == 0


def test_checkpoint_rejects_forecast_file(tmp_path):
    np.savez(tmp_path / "x.npz", __meta__=np.frombuffer(b'{"format": "other/1"}', dtype=np.uint8))
    with pytest.raises(ValidationError):
        DQNAgent.load(tmp_path / "x.npz")


def test_frozen_target_mode_bootstraps_from_snapshot():
    agent = DQNAgent(5, 4, AgentConfig(batch_size=2, target_network=True, lr=0.1))
    for i in range(2):
        agent.memorize(transition(i))
    agent.replay()
    assert agent._frozen is None and agent.replays == 1
