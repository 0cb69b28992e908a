import numpy as np
import pytest

from helpers import fd_probe_errors
from uavcov.channel import ChannelParams
from uavcov.env import CoverageEnv
from uavcov.marl import (AgentBundle, Batch, ReplayBuffer, TrainConfig, Transition, _actor_objective,
                         create_agents, greedy_policy, policy_gradient, run_training,
                         select_action, train_step)
from uavcov.neural import adam_step, backward, forward
from uavcov.scenario import FieldConfig, build_scenario


def _agents(k=3, m=4, obs_w=9, seed=0, hidden=(16, 16)):
    masks = np.ones((k, m), dtype=bool)
    masks[-1, -1] = False
    agents = create_agents(np.random.default_rng(seed), masks, obs_w, hidden)
    for net in (agents.actor, agents.critic):
        net.weights[-1] *= 100
    agents.target_actor = agents.actor.copy()
    agents.target_critic = agents.critic.copy()
    return agents


def _batch(agents, w=8, seed=1):
    rng = np.random.default_rng(seed)
    k, m, o = agents.n_agents, agents.pad_width, agents.obs_width
    acts = rng.uniform(-1, 1, (w, k, m)) * agents.masks
    return Batch(rng.normal(size=(w, k * o)), acts.reshape(w, k * m),
                 np.repeat(rng.normal(size=(w, 1)), k, axis=1), rng.normal(size=(w, k * o)))


def _small_env(k=3, seed=0, n=12, **kw):
    field = FieldConfig(num_ues=n)
    ues, asg, uavs = build_scenario(field, k, np.random.default_rng(seed))
    return CoverageEnv(ues, uavs, asg, ChannelParams(), field, **kw)


def test_replay_is_fifo_and_bounded():
    buf = ReplayBuffer(5, 2, 1, 1)
    for i in range(12):
        buf.add(Transition(np.full(2, i), np.array([i]), np.array([i]), np.full(2, i + 1)))
        assert len(buf) == min(i + 1, 5)
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(40):
        b = buf.sample(5, rng)
        seen |= set(b.rewards[:, 0].astype(int))
        np.testing.assert_array_equal(b.next_states[:, 0], b.states[:, 0] + 1)
    assert seen == {7, 8, 9, 10, 11}


def test_replay_refuses_underfilled_sample():
    buf = ReplayBuffer(10, 1, 1, 1)
    buf.add(Transition(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1)))
    with pytest.raises(ValueError):
        buf.sample(2, np.random.default_rng(0))


def test_select_action_masks_and_clips():
    agents = _agents()
    obs = np.random.default_rng(2).normal(size=(3, 9))
    a = select_action(agents, obs, 5.0, np.random.default_rng(3))
    assert a.shape == (3, 4)
    assert np.all(np.abs(a) <= 1.0)
    assert a[-1, -1] == 0.0
    assert np.array_equal(select_action(agents, obs, 0.0, None),
                          select_action(agents, obs, 0.0, None))


def test_critic_gradient_matches_finite_differences():
    agents = _agents()
    batch = _batch(agents)
    x = np.concatenate([batch.states, batch.actions], 1)
    y = np.random.default_rng(4).normal(size=(3, len(x), 1))

    def loss():
        q, _ = forward(agents.critic, x)
        return float(np.sum(np.mean((q - y) ** 2, axis=(1, 2))))

    q, cache = forward(agents.critic, x)
    grads, _ = backward(agents.critic, cache, 2 * (q - y) / len(x), input_grad=False)
    errs = fd_probe_errors(loss, agents.critic.arrays(), grads, 100, np.random.default_rng(5))
    assert errs.max() < 1e-4


def test_actor_gradient_matches_finite_differences_of_mean_q():
    agents = _agents()
    batch = _batch(agents)

    def loss():
        q = _actor_objective(agents, batch)[0]
        return -float(q.mean(axis=(1, 2)).sum())

    grads, _ = policy_gradient(agents, batch)
    errs = fd_probe_errors(loss, agents.actor.arrays(), grads, 100, np.random.default_rng(6))
    assert errs.max() < 1e-4


def test_actor_regularizer_gradient():
    agents = _agents()
    batch = _batch(agents)
    c = 0.01

    def loss():
        q, cache, _, _ = _actor_objective(agents, batch)
        z = cache[3]
        return float(-q.mean(axis=(1, 2)).sum() + c * np.sum(np.mean(z ** 2, axis=(1, 2))))

    grads, _ = policy_gradient(agents, batch, actor_reg=c)
    errs = fd_probe_errors(loss, agents.actor.arrays(), grads, 60, np.random.default_rng(7))
    assert errs.max() < 1e-4


def test_actor_gradient_ascends_critic():
    agents = _agents()
    batch = _batch(agents)
    agents.actor_opt.learning_rate = 1e-3
    before = _actor_objective(agents, batch)[0].mean()
    for _ in range(20):
        grads, _ = policy_gradient(agents, batch)
        adam_step(agents.actor, grads, agents.actor_opt)
    assert _actor_objective(agents, batch)[0].mean() > before


def test_zero_discount_critic_fits_reward():
    agents = _agents()
    agents.critic_opt.learning_rate = 1e-3
    batch = _batch(agents, w=1)
    batch.rewards[:] = 0.7
    for _ in range(3000):
        train_step(agents, batch, gamma=0.0, tau=0.01)
    q, _ = forward(agents.critic, np.concatenate([batch.states, batch.actions], 1))
    np.testing.assert_allclose(q.ravel(), 0.7, atol=1e-3)


def test_tau_zero_leaves_targets_alone():
    agents = _agents()
    ta, tc = agents.target_actor.copy(), agents.target_critic.copy()
    train_step(agents, _batch(agents), gamma=0.95, tau=0.0)
    for a, b in zip(agents.target_actor.arrays() + agents.target_critic.arrays(),
                    ta.arrays() + tc.arrays()):
        np.testing.assert_array_equal(a, b)
    # online nets did move
    assert not np.array_equal(agents.critic.weights[0], tc.weights[0])


def test_targets_stay_in_envelope_during_training():
    agents = _agents()
    lo = [a.copy() for a in agents.target_critic.arrays()]
    hi = [a.copy() for a in agents.target_critic.arrays()]
    for i in range(30):
        train_step(agents, _batch(agents, seed=i), gamma=0.9, tau=0.2)
        for j, a in enumerate(agents.critic.arrays()):
            lo[j] = np.minimum(lo[j], a)
            hi[j] = np.maximum(hi[j], a)
        for t, l, h in zip(agents.target_critic.arrays(), lo, hi):
            assert np.all(t >= l - 1e-12) and np.all(t <= h + 1e-12)


def test_non_finite_reward_aborts():
    agents = _agents()
    batch = _batch(agents)
    batch.rewards[0, 0] = np.inf
    with pytest.raises(FloatingPointError):
        train_step(agents, batch, 0.9, 0.01)


def test_warm_up_path_stores_without_updating():
    env = _small_env()
    res = run_training(env, TrainConfig(episodes=1, steps_per_episode=1), 0)
    assert res.updates == 0
    assert res.step_rewards.shape == (1, 1)
    assert len(res.episode_reward) == 1


def test_frozen_noise_free_agents_repeat_rewards_in_expected_mode():
    env = _small_env(fading="expected")
    agents = _agents(k=env.k, m=env.pad_width, obs_w=env.obs_width)
    agents.masks = env.masks
    for w in agents.actor.weights:
        w *= 0.0
    for b in agents.actor.biases:
        b *= 0.0
    pol = greedy_policy(agents)
    obs = env.reset(np.random.default_rng(0))
    seen = []
    for _ in range(5):
        obs, _, info = env.step(pol(obs), np.random.default_rng(1))
        seen.append(info.reward)
    assert len(set(seen)) == 1


def test_training_is_bit_reproducible_and_feasible():
    cfg = TrainConfig(episodes=2, steps_per_episode=40, batch=16, hidden=(16, 16))
    a = run_training(_small_env(), cfg, 11)
    b = run_training(_small_env(), cfg, 11)
    assert a.step_rewards.tobytes() == b.step_rewards.tobytes()
    assert a.agents.actor.weights[0].tobytes() == b.agents.actor.weights[0].tobytes()
    assert a.updates == 2 * 40 - 15
    assert a.budget_checks == 2 * 40 * 3 and a.budget_violations == 0
    c = run_training(_small_env(), cfg, 12)
    assert c.step_rewards.tobytes() != a.step_rewards.tobytes()


def test_checkpoint_round_trip(tmp_path):
    agents = _agents()
    paths = agents.save(tmp_path)
    assert len(paths) == 6
    back = AgentBundle.load(tmp_path, agents.masks)
    for a, b in zip(agents.actor.arrays() + agents.critic.arrays(),
                    back.actor.arrays() + back.critic.arrays()):
        assert a.tobytes() == b.tobytes()


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch=64, buffer=10)
