import numpy as np
import pytest

from helpers import fd_probe_errors
from uavcov.baselines import (DqnConfig, _actions_for, action_count, decode_action,
                              dqn_select_action, dqn_train_step, equal_power_allocation, run_dqn)
from uavcov.channel import ChannelParams
from uavcov.env import CoverageEnv
from uavcov.marl import Batch
from uavcov.neural import AdamState, backward, forward, init_params
from uavcov.scenario import FieldConfig, build_scenario


def _env(k=3, n=12, seed=0):
    field = FieldConfig(num_ues=n)
    ues, asg, uavs = build_scenario(field, k, np.random.default_rng(seed))
    return CoverageEnv(ues, uavs, asg, ChannelParams(), field)


def _qnet(seed=0, n_in=6, n_out=5):
    net = init_params(np.random.default_rng(seed), (n_in, 16, 16, n_out), "linear")
    net.weights[-1] *= 100
    return net


def test_equal_allocation_examples():
    alloc = equal_power_allocation([5, 1], 1.0)
    np.testing.assert_allclose(alloc.vectors[0], 0.2)
    np.testing.assert_allclose(alloc.vectors[1], 1.0)
    assert alloc.totals().tolist() == pytest.approx([1.0, 1.0])
    with pytest.raises(ValueError):
        equal_power_allocation([3, 0], 1.0)


def test_equal_allocation_is_permutation_invariant():
    vec = equal_power_allocation([7], 2.0).vectors[0]
    perm = np.random.default_rng(0).permutation(7)
    assert np.array_equal(vec[perm], vec)


def test_action_encoding():
    assert action_count(30) == 61
    assert decode_action(0) == (-1, 0)
    assert decode_action(1) == (0, 1) and decode_action(2) == (0, -1)
    assert decode_action(60) == (29, -1)


def test_centralized_action_touches_exactly_one_ue():
    env = _env()
    for idx in range(1, action_count(env.n)):
        acts = _actions_for(env, idx)
        assert np.count_nonzero(acts) == 1
        ue, sign = decode_action(idx)
        j = env.assignment.labels[ue]
        slot = list(env.members[j]).index(ue)
        assert acts[j, slot] == sign
    assert not _actions_for(env, 0).any()


def test_uniform_exploration_frequencies():
    net = _qnet()
    rng = np.random.default_rng(1)
    counts = np.bincount([dqn_select_action(net, np.zeros(6), 1.0, rng) for _ in range(100_000)],
                         minlength=5)
    assert np.all(np.abs(counts / 20_000 - 1) < 0.1)


def test_greedy_picks_unique_max_and_breaks_ties_low():
    net = init_params(np.random.default_rng(2), (3, 4), "linear")
    net.weights[0][...] = 0.0
    net.biases[0][...] = [0.1, 0.5, 0.2, 0.0]
    assert dqn_select_action(net, np.ones(3), 0.0, None) == 1
    net.biases[0][...] = [0.1, 0.7, 0.2, 0.7]
    assert dqn_select_action(net, np.ones(3), 0.0, None) == 1


def test_epsilon_schedule_is_linear_then_flat():
    cfg = DqnConfig(episodes=10, steps_per_episode=10)
    assert cfg.epsilon(0) == 1.0
    assert cfg.epsilon(25) == pytest.approx(1.0 - 0.5 * 0.95)
    assert cfg.epsilon(50) == pytest.approx(0.05)
    assert cfg.epsilon(99) == pytest.approx(0.05)
    assert all(0 <= cfg.epsilon(t) <= 1 for t in range(200))


def _batch(w=8, seed=3):
    rng = np.random.default_rng(seed)
    return Batch(rng.normal(size=(w, 6)), rng.integers(0, 5, (w, 1)).astype(float),
                 rng.normal(size=(w, 1)), rng.normal(size=(w, 6)))


def test_dqn_gradient_matches_finite_differences():
    net, target = _qnet(), _qnet(seed=9)
    batch = _batch()
    w = len(batch.states)
    idx = batch.actions[:, 0].astype(int)
    y = batch.rewards[:, 0] + 0.9 * forward(target, batch.next_states)[0].max(axis=1)

    def loss():
        q = forward(net, batch.states)[0][np.arange(w), idx]
        return float(np.mean((q - y) ** 2))

    q, cache = forward(net, batch.states)
    g = np.zeros_like(q)
    g[np.arange(w), idx] = 2 * (q[np.arange(w), idx] - y) / w
    grads, _ = backward(net, cache, g, input_grad=False)
    assert fd_probe_errors(loss, net.arrays(), grads, 100, np.random.default_rng(4)).max() < 1e-4


def test_dqn_train_step_reports_pre_update_loss():
    net, target = _qnet(), _qnet(seed=9)
    batch = _batch()
    w = len(batch.states)
    idx = batch.actions[:, 0].astype(int)
    y = batch.rewards[:, 0] + 0.9 * forward(target, batch.next_states)[0].max(axis=1)
    expected = float(np.mean((forward(net, batch.states)[0][np.arange(w), idx] - y) ** 2))
    got = dqn_train_step(net, target, AdamState.for_params(net, 1e-4), batch, 0.9, 0.0)
    assert got == pytest.approx(expected, rel=1e-12)


def test_dqn_zero_discount_fits_reward():
    net, target = _qnet(), _qnet(seed=9)
    batch = _batch(w=1)
    opt = AdamState.for_params(net, 1e-3)
    for _ in range(3000):
        dqn_train_step(net, target, opt, batch, 0.0, 0.01)
    q = forward(net, batch.states)[0][0, int(batch.actions[0, 0])]
    assert q == pytest.approx(batch.rewards[0, 0], abs=1e-3)


def test_dqn_tau_zero_keeps_target():
    net, target = _qnet(), _qnet(seed=9)
    before = target.copy()
    dqn_train_step(net, target, AdamState.for_params(net, 1e-3), _batch(), 0.9, 0.0)
    for a, b in zip(target.arrays(), before.arrays()):
        np.testing.assert_array_equal(a, b)


def test_dqn_non_finite_loss_aborts():
    batch = _batch()
    batch.rewards[0, 0] = np.nan
    net = _qnet()
    with pytest.raises(FloatingPointError):
        dqn_train_step(net, _qnet(seed=9), AdamState.for_params(net, 1e-3), batch, 0.9, 0.01)


def test_run_dqn_reproducible_and_feasible():
    cfg = DqnConfig(episodes=2, steps_per_episode=30, batch=8, hidden=(16,))
    a = run_dqn(_env(), cfg, 5)
    b = run_dqn(_env(), cfg, 5)
    assert a.episode_reward.tobytes() == b.episode_reward.tobytes()
    assert a.updates == 60 - 7
    assert a.budget_violations == 0 and a.budget_checks == 60 * 3
