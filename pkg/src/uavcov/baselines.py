"""Comparison policies: equal power split and a centralized DQN.

The DQN sees the concatenated observations of all clusters and picks one
discrete action per step: no-op, or raise/lower one UE's power by delta_max.
Action index 0 is the no-op; ``1 + 2*u`` raises UE ``u`` and ``2 + 2*u``
lowers it, where ``u`` is the global UE index.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .env import CoverageEnv
from .marl import Batch, ReplayBuffer, Transition, training_streams
from .neural import AdamState, MlpParams, adam_step, backward, forward, init_params, soft_update
from .scenario import PowerAllocation

log = logging.getLogger(__name__)


def equal_power_allocation(cluster_sizes, power_budget: float) -> PowerAllocation:
    sizes = [int(n) for n in cluster_sizes]
    if any(n < 1 for n in sizes):
        raise ValueError("every cluster needs at least one UE")
    return PowerAllocation([np.full(n, power_budget / n) for n in sizes], power_budget)


def equal_policy(env: CoverageEnv):
    zeros = np.zeros((env.k, env.pad_width))
    return lambda obs: zeros


@dataclass(frozen=True)
class DqnConfig:
    episodes: int = 100
    steps_per_episode: int = 200
    batch: int = 64
    buffer: int = 100_000
    gamma: float = 0.95
    tau: float = 0.01
    lr: float = 1e-4
    hidden: tuple[int, ...] = (128, 128)
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.5  # of all training steps
    reward_scale: float | None = None  # None -> 1/N

    def __post_init__(self):
        if not (0.0 <= self.eps_end <= 1.0 and 0.0 <= self.eps_start <= 1.0):
            raise ValueError("epsilon bounds must lie in [0, 1]")
        if not 0.0 < self.gamma < 1.0 or not 0.0 < self.tau <= 1.0:
            raise ValueError("need 0 < gamma < 1 and 0 < tau <= 1")

    def epsilon(self, step: int) -> float:
        """Linear schedule from eps_start to eps_end, then flat."""
        decay = max(1, int(self.eps_decay_frac * self.episodes * self.steps_per_episode))
        frac = min(1.0, step / decay)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


def action_count(num_ues: int) -> int:
    return 2 * num_ues + 1


def decode_action(index: int) -> tuple[int, int]:
    """Map an action index to ``(ue, sign)``; sign 0 is the no-op."""
    if index == 0:
        return -1, 0
    ue, rem = divmod(index - 1, 2)
    return ue, (1 if rem == 0 else -1)


def dqn_select_action(qnet: MlpParams, global_state, epsilon: float,
                      rng: np.random.Generator) -> int:
    n_actions = qnet.layer_sizes[-1]
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(n_actions))
    q, _ = forward(qnet, global_state)
    return int(np.argmax(q))  # first maximum on ties


def dqn_train_step(qnet: MlpParams, target: MlpParams, opt: AdamState, batch: Batch,
                   gamma: float, tau: float, reward_scale: float = 1.0) -> float:
    """One Adam step on the squared TD error, then a Polyak target update."""
    w = len(batch.states)
    q_next, _ = forward(target, batch.next_states)
    y = reward_scale * batch.rewards[:, 0] + gamma * q_next.max(axis=1)
    q, cache = forward(qnet, batch.states)
    idx = batch.actions[:, 0].astype(int)
    err = q[np.arange(w), idx] - y
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite DQN loss {loss}")
    grad_out = np.zeros_like(q)
    grad_out[np.arange(w), idx] = 2.0 * err / w
    grads, _ = backward(qnet, cache, grad_out, input_grad=False)
    adam_step(qnet, grads, opt)
    soft_update(target, qnet, tau)
    return loss


def _actions_for(env: CoverageEnv, index: int) -> np.ndarray:
    actions = np.zeros((env.k, env.pad_width))
    ue, sign = decode_action(index)
    if sign:
        j = int(env.assignment.labels[ue])
        slot = int(np.searchsorted(env.members[j], ue))
        actions[j, slot] = sign
    return actions


def dqn_policy(env: CoverageEnv, qnet: MlpParams):
    return lambda obs: _actions_for(env, dqn_select_action(qnet, obs.ravel(), 0.0, None))


@dataclass
class DqnResult:
    qnet: MlpParams
    episode_reward: np.ndarray
    episode_served: np.ndarray
    episode_power: np.ndarray
    updates: int
    budget_checks: int
    budget_violations: int


def run_dqn(env: CoverageEnv, config: DqnConfig, seed) -> DqnResult:
    init_rng, explore_rng, env_rng, replay_rng = training_streams(seed)
    state_dim = env.k * env.obs_width
    qnet = init_params(init_rng, (state_dim, *config.hidden, action_count(env.n)), "linear")
    target = qnet.copy()
    opt = AdamState.for_params(qnet, config.lr)
    buffer = ReplayBuffer(config.buffer, state_dim, 1, 1)
    scale = config.reward_scale if config.reward_scale is not None else 1.0 / env.n
    E, T = config.episodes, config.steps_per_episode
    rewards, served, power = np.zeros((E, T)), np.zeros((E, T)), np.zeros((E, T))
    updates = 0
    for ep in range(E):
        obs = env.reset(env_rng)
        for t in range(T):
            state = obs.ravel()
            a = dqn_select_action(qnet, state, config.epsilon(ep * T + t), explore_rng)
            obs, _, info = env.step(_actions_for(env, a), env_rng)
            buffer.add(Transition(state, np.array([a]), np.array([info.reward]), obs.ravel()))
            rewards[ep, t], served[ep, t], power[ep, t] = info.reward, info.served, info.power_fraction
            if len(buffer) >= config.batch:
                dqn_train_step(qnet, target, opt, buffer.sample(config.batch, replay_rng),
                               config.gamma, config.tau, scale)
                updates += 1
        log.debug("dqn episode %d reward %.3f", ep, rewards[ep].mean())
    return DqnResult(qnet, rewards.mean(axis=1), served.mean(axis=1), power.mean(axis=1),
                     updates, env.budget_checks, env.budget_violations)
