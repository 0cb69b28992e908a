"""MADDPG over the UAV agents: replay, centralized critics, decentralized actors.

All K agents share one architecture, so their networks are stored stacked on a
leading axis and trained with batched matmuls; slice ``j`` of every array is
agent ``j``. No parameters are shared between agents.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import CoverageEnv
from .neural import (AdamState, MlpParams, adam_step, backward, forward, init_params,
                     load_params, output_preactivation, save_params, soft_update)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 100
    steps_per_episode: int = 200
    batch: int = 64
    buffer: int = 100_000
    gamma: float = 0.95
    tau: float = 0.01
    noise_sigma: float = 0.2
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    hidden: tuple[int, ...] = (128, 128)
    delta_max: float | None = None  # W per step; None -> 5% of the budget
    pad_width: int | None = None  # None -> largest cluster
    reward_mode: str = "dense"
    reward_sharing: str = "shared"
    power_weight: float = 0.0
    reward_scale: float | None = None  # critic target scale; None -> 1/N
    actor_reg: float = 1.0  # L2 on the actor's pre-tanh output

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if self.delta_max is not None and self.delta_max <= 0:
            raise ValueError("delta_max must be > 0")
        if self.batch < 1 or self.buffer < self.batch:
            raise ValueError("need 1 <= batch <= buffer")
        if self.episodes < 0 or self.steps_per_episode < 1:
            raise ValueError("episodes must be >= 0 and steps_per_episode >= 1")


@dataclass(frozen=True)
class Transition:
    global_state: np.ndarray
    joint_action: np.ndarray
    reward: np.ndarray  # (K,) - identical entries when the reward is shared
    next_global_state: np.ndarray


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray


class ReplayBuffer:
    """FIFO ring of transitions; storage grows on demand up to ``capacity``."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int, reward_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._dims = (state_dim, action_dim, reward_dim, state_dim)
        self._arrays = [np.zeros((min(capacity, 1024), d)) for d in self._dims]
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, t: Transition) -> None:
        rows = len(self._arrays[0])
        if self.cursor >= rows and rows < self.capacity:
            grow = min(self.capacity, 2 * rows)
            self._arrays = [np.concatenate([a, np.zeros((grow - rows, a.shape[1]))])
                            for a in self._arrays]
        for arr, value in zip(self._arrays, (t.global_state, t.joint_action, t.reward,
                                             t.next_global_state)):
            arr[self.cursor] = value
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator) -> Batch:
        """Uniform with replacement."""
        if self.size < batch:
            raise ValueError(f"buffer holds {self.size} transitions, batch needs {batch}")
        idx = rng.integers(0, self.size, size=batch)
        return Batch(*(a[idx] for a in self._arrays))


def store_and_sample(buffer: ReplayBuffer, transition: Transition, batch: int,
                     rng: np.random.Generator) -> Batch:
    buffer.add(transition)
    return buffer.sample(batch, rng)


@dataclass
class AgentBundle:
    """Online and target actor/critic for K agents, stacked on axis 0."""

    actor: MlpParams
    critic: MlpParams
    target_actor: MlpParams
    target_critic: MlpParams
    actor_opt: AdamState
    critic_opt: AdamState
    masks: np.ndarray  # (K, pad_width) valid UE slots

    @property
    def n_agents(self) -> int:
        return self.masks.shape[0]

    @property
    def pad_width(self) -> int:
        return self.masks.shape[1]

    @property
    def obs_width(self) -> int:
        return self.actor.layer_sizes[0]

    def save(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for j in range(self.n_agents):
            for name, net in (("actor", self.actor), ("critic", self.critic)):
                p = out / f"agent{j}_{name}.bin"
                save_params(p, net.member(j))
                paths.append(p)
        return paths

    @classmethod
    def load(cls, out_dir, masks: np.ndarray, actor_lr: float = 1e-4,
             critic_lr: float = 1e-4) -> "AgentBundle":
        out = Path(out_dir)
        k = masks.shape[0]
        actor = MlpParams.stack([load_params(out / f"agent{j}_actor.bin") for j in range(k)])
        critic = MlpParams.stack([load_params(out / f"agent{j}_critic.bin") for j in range(k)])
        return cls(actor, critic, actor.copy(), critic.copy(),
                   AdamState.for_params(actor, actor_lr), AdamState.for_params(critic, critic_lr),
                   np.asarray(masks, dtype=bool))


def create_agents(rng: np.random.Generator, masks: np.ndarray, obs_width: int,
                  hidden=(128, 128), actor_lr: float = 1e-4, critic_lr: float = 1e-4) -> AgentBundle:
    masks = np.asarray(masks, dtype=bool)
    k, m = masks.shape
    critic_in = k * obs_width + k * m
    actor = init_params(rng, (obs_width, *hidden, m), "tanh", stack=(k,))
    critic = init_params(rng, (critic_in, *hidden, 1), "linear", stack=(k,))
    return AgentBundle(actor, critic, actor.copy(), critic.copy(),
                       AdamState.for_params(actor, actor_lr),
                       AdamState.for_params(critic, critic_lr), masks)


def select_action(agents: AgentBundle, obs: np.ndarray, noise_sigma: float,
                  rng: np.random.Generator | None) -> np.ndarray:
    """mu(o) + N(0, sigma^2) per slot, clipped to [-1, 1], padded slots zeroed.

    ``obs`` is ``(K, obs_width)``; returns ``(K, pad_width)``.
    """
    mu, _ = forward(agents.actor, np.asarray(obs)[:, None, :])
    act = mu[:, 0, :]
    if noise_sigma > 0:
        act = act + rng.normal(0.0, noise_sigma, act.shape)
    return np.clip(act, -1.0, 1.0) * agents.masks


def _split_obs(states: np.ndarray, k: int) -> np.ndarray:
    w = len(states)
    return states.reshape(w, k, -1).transpose(1, 0, 2)


def _actor_objective(agents: AgentBundle, batch: Batch):
    """Forward pass of mean Q_j(s, a_1..mu_j(o_j)..a_K); returns the pieces backprop needs."""
    k, m = agents.n_agents, agents.pad_width
    w = len(batch.states)
    obs = _split_obs(batch.states, k)
    mu, actor_cache = forward(agents.actor, obs)
    mask = agents.masks[:, None, :]
    mu = mu * mask
    joint = np.broadcast_to(batch.actions.reshape(w, k, m), (k, w, k, m)).copy()
    idx = np.arange(k)
    joint[idx, :, idx, :] = mu
    ds = batch.states.shape[1]
    xin = np.concatenate([np.broadcast_to(batch.states, (k, w, ds)), joint.reshape(k, w, k * m)], -1)
    q, critic_cache = forward(agents.critic, xin)
    return q, actor_cache, critic_cache, ds


def policy_gradient(agents: AgentBundle, batch: Batch, actor_reg: float = 0.0):
    """Gradients of ``-(1/W) sum Q_j(s, ..., mu_j(o_j), ...)`` w.r.t. each actor.

    ``actor_reg`` adds ``actor_reg * mean(z^2)`` on the pre-tanh outputs ``z``.
    Returns ``(grads, objective)``; ``objective`` is the per-agent mean Q.
    """
    k, m = agents.n_agents, agents.pad_width
    w = len(batch.states)
    q, actor_cache, critic_cache, ds = _actor_objective(agents, batch)
    _, dx = backward(agents.critic, critic_cache, np.full(q.shape, -1.0 / w), param_grads=False)
    idx = np.arange(k)
    da = dx[..., ds:].reshape(k, w, k, m)[idx, :, idx, :] * agents.masks[:, None, :]
    reg = None
    if actor_reg:
        z = output_preactivation(actor_cache)
        reg = 2.0 * actor_reg * z / (z.shape[-2] * z.shape[-1])
    grads, _ = backward(agents.actor, actor_cache, da, input_grad=False, preact_gradient=reg)
    return grads, q.mean(axis=(1, 2))


@dataclass
class StepDiagnostics:
    critic_loss: np.ndarray
    actor_objective: np.ndarray


def td_targets(agents: AgentBundle, batch: Batch, gamma: float,
               reward_scale: float = 1.0) -> np.ndarray:
    """``y_j = scale * r_j + gamma * Q'_j(s', mu'(o'))``, shape ``(K, W, 1)``."""
    k, m = agents.n_agents, agents.pad_width
    w = len(batch.states)
    a_next, _ = forward(agents.target_actor, _split_obs(batch.next_states, k))
    a_next = (a_next * agents.masks[:, None, :]).transpose(1, 0, 2).reshape(w, k * m)
    q_next, _ = forward(agents.target_critic, np.concatenate([batch.next_states, a_next], 1))
    return reward_scale * batch.rewards.T[:, :, None] + gamma * q_next


def critic_gradient(agents: AgentBundle, batch: Batch, targets: np.ndarray):
    """Gradients of each critic's mean squared TD error; returns ``(grads, loss)``."""
    q, cache = forward(agents.critic, np.concatenate([batch.states, batch.actions], 1))
    err = q - targets
    loss = np.mean(err * err, axis=(1, 2))
    if not np.all(np.isfinite(loss)):
        raise FloatingPointError(f"non-finite critic loss {loss}")
    grads, _ = backward(agents.critic, cache, 2.0 * err / len(batch.states), input_grad=False)
    return grads, loss


def train_step(agents: AgentBundle, batch: Batch, gamma: float, tau: float,
               reward_scale: float = 1.0, actor_reg: float = 0.0) -> StepDiagnostics:
    """One critic step, one actor step and Polyak target updates for every agent."""
    grads, critic_loss = critic_gradient(agents, batch,
                                         td_targets(agents, batch, gamma, reward_scale))
    adam_step(agents.critic, grads, agents.critic_opt)

    actor_grads, objective = policy_gradient(agents, batch, actor_reg)
    if not np.all(np.isfinite(objective)):
        raise FloatingPointError(f"non-finite actor objective {objective}")
    adam_step(agents.actor, actor_grads, agents.actor_opt)

    soft_update(agents.target_actor, agents.actor, tau)
    soft_update(agents.target_critic, agents.critic, tau)
    return StepDiagnostics(critic_loss, objective)


@dataclass
class TrainingResult:
    agents: AgentBundle
    episode_reward: np.ndarray  # mean step reward per episode
    episode_served: np.ndarray
    episode_power: np.ndarray
    step_rewards: np.ndarray  # (episodes, steps)
    updates: int
    budget_checks: int
    budget_violations: int
    critic_loss: list[float] = field(default_factory=list)


def training_streams(seed_or_rng):
    """Independent generators for init, exploration, fading and replay sampling."""
    if isinstance(seed_or_rng, np.random.Generator):
        seed_or_rng = int(seed_or_rng.integers(2**63 - 1))
    children = np.random.SeedSequence(seed_or_rng).spawn(4)
    return [np.random.default_rng(c) for c in children]


def run_training(env: CoverageEnv, config: TrainConfig, seed) -> TrainingResult:
    """Episodes of noisy rollouts; one update per step once the buffer holds a batch."""
    init_rng, noise_rng, env_rng, replay_rng = training_streams(seed)
    agents = create_agents(init_rng, env.masks, env.obs_width, config.hidden,
                           config.actor_lr, config.critic_lr)
    k, m = env.k, env.pad_width
    buffer = ReplayBuffer(config.buffer, k * env.obs_width, k * m, k)
    scale = config.reward_scale if config.reward_scale is not None else 1.0 / env.n
    T = config.steps_per_episode
    step_rewards = np.zeros((config.episodes, T))
    served = np.zeros((config.episodes, T))
    power = np.zeros((config.episodes, T))
    updates = 0
    losses = []
    for ep in range(config.episodes):
        obs = env.reset(env_rng)
        for t in range(T):
            actions = select_action(agents, obs, config.noise_sigma, noise_rng)
            next_obs, rewards, info = env.step(actions, env_rng)
            buffer.add(Transition(obs.ravel(), actions.ravel(), rewards, next_obs.ravel()))
            obs = next_obs
            step_rewards[ep, t] = info.reward
            served[ep, t] = info.served
            power[ep, t] = info.power_fraction
            if len(buffer) >= config.batch:
                diag = train_step(agents, buffer.sample(config.batch, replay_rng),
                                  config.gamma, config.tau, scale, config.actor_reg)
                updates += 1
                if t == T - 1:
                    losses.append(float(diag.critic_loss.mean()))
        log.debug("episode %d reward %.3f served %.2f power %.3f", ep,
                  step_rewards[ep].mean(), served[ep].mean(), power[ep].mean())
    return TrainingResult(agents, step_rewards.mean(axis=1), served.mean(axis=1),
                          power.mean(axis=1), step_rewards, updates, env.budget_checks,
                          env.budget_violations, losses)


def greedy_policy(agents: AgentBundle):
    return lambda obs: select_action(agents, obs, 0.0, None)
