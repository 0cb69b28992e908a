"""Power-allocation environment shared by the MADDPG, DQN and equal-power runs.

One step: every UAV nudges the powers of its own UEs, the per-cluster budget
is enforced by the nearest-first projection, fading is redrawn, and the whole
network is re-evaluated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelParams, FadingMode
from .clustering import ClusterAssignment
from .scenario import BUDGET_SLACK, EvaluationResult, FieldConfig, NetworkModel, PowerAllocation


@dataclass(frozen=True)
class Observation:
    powers: np.ndarray  # W, padded
    rates: np.ndarray  # normalized by R_th, padded
    count: float  # cluster size / pad width
    mask: np.ndarray  # bool

    def vector(self, power_budget: float = 1.0) -> np.ndarray:
        """Network input: powers as a budget fraction, normalized rates, count."""
        return np.concatenate([self.powers / power_budget, self.rates, [self.count]])


def obs_width(pad_width: int) -> int:
    return 2 * pad_width + 1


def build_observation(cluster_id: int, allocation: PowerAllocation, eval_result: EvaluationResult,
                      pad_width: int) -> Observation:
    members = np.flatnonzero(eval_result.labels == cluster_id)
    n = len(members)
    if n > pad_width:
        raise ValueError(f"cluster {cluster_id} has {n} UEs, pad width is {pad_width}")
    powers = np.zeros(pad_width)
    rates = np.zeros(pad_width)
    mask = np.zeros(pad_width, dtype=bool)
    powers[:n] = allocation.vectors[cluster_id]
    rates[:n] = eval_result.rate[members] / eval_result.rate_threshold
    mask[:n] = True
    return Observation(powers, rates, n / pad_width, mask)


def apply_action(powers, action, delta_max: float, distances, power_budget: float) -> np.ndarray:
    """Add scaled deltas, clamp to [0, P_t], then grant nearest UEs first if over budget.

    ``action`` may be padded; only its first ``len(powers)`` entries are used.
    """
    if power_budget < 0:
        raise ValueError("power budget must be >= 0")
    powers = np.asarray(powers, dtype=float)
    n = len(powers)
    act = np.asarray(action, dtype=float)[:n]
    cand = np.clip(powers + delta_max * act, 0.0, power_budget)
    if cand.sum() <= power_budget:
        return cand
    order = np.argsort(np.asarray(distances, dtype=float), kind="stable")
    out = np.zeros(n)
    remaining = power_budget
    for i in order:
        grant = min(cand[i], remaining)
        out[i] = grant
        remaining -= grant
        if remaining <= 0.0:
            break
    return out


@dataclass(frozen=True)
class RewardBreakdown:
    served: int
    rate_term: float
    wasted: float
    power_penalty: float
    total: float


def compute_reward(eval_result: EvaluationResult, rate_threshold: float, mode: str = "dense",
                   power_used: float = 0.0, power_weight: float = 0.0,
                   ues=None) -> RewardBreakdown:
    """Served count plus threshold-normalized useful rate, minus an optional power cost.

    ``mode="dense"`` sums rates over every UE and subtracts the served UEs'
    excess, so a served UE is worth exactly 2 and an unserved one R/R_th.
    ``mode="literal"`` sums rates over served UEs only. ``power_used`` is in
    units of one UAV budget. ``ues`` restricts the sums to a subset of UEs.
    """
    rate = eval_result.rate if ues is None else eval_result.rate[ues]
    served = eval_result.served if ues is None else eval_result.served[ues]
    wasted = float(np.sum(rate[served] - rate_threshold))
    if mode == "dense":
        rate_sum = float(np.sum(rate))
    elif mode == "literal":
        rate_sum = float(np.sum(rate[served]))
    else:
        raise ValueError(f"unknown reward mode {mode!r}")
    count = int(np.sum(served))
    rate_term = (rate_sum - wasted) / rate_threshold
    penalty = power_weight * power_used
    return RewardBreakdown(count, rate_term, wasted, penalty, count + rate_term - penalty)


@dataclass
class StepInfo:
    result: EvaluationResult
    reward: float
    served: int
    power_fraction: float


class CoverageEnv:
    """Fixed deployment (UEs, clusters, UAVs) with a mutable power allocation."""

    def __init__(self, ue_positions, uav_positions, assignment: ClusterAssignment,
                 params: ChannelParams, field: FieldConfig, pad_width: int | None = None,
                 delta_max: float | None = None, fading: FadingMode | str = FadingMode.SAMPLED,
                 interference_power: str = "mean", reward_mode: str = "dense",
                 reward_sharing: str = "shared", power_weight: float = 0.0):
        self.model = NetworkModel(ue_positions, uav_positions, assignment, params, field,
                                  interference_power)
        self.assignment = assignment
        self.field = field
        self.params = params
        self.k = assignment.k
        self.n = len(assignment.labels)
        self.members = [assignment.members(j) for j in range(self.k)]
        self.pad_width = int(pad_width or assignment.sizes.max())
        if assignment.sizes.max() > self.pad_width:
            raise ValueError("pad width smaller than the largest cluster")
        self.delta_max = 0.05 * field.power_budget if delta_max is None else float(delta_max)
        self.fading = FadingMode(fading)
        self.reward_mode = reward_mode
        if reward_sharing not in ("shared", "per_agent"):
            raise ValueError(f"unknown reward sharing {reward_sharing!r}")
        self.reward_sharing = reward_sharing
        self.power_weight = power_weight
        self.masks = np.zeros((self.k, self.pad_width), dtype=bool)
        for j, m in enumerate(self.members):
            self.masks[j, :len(m)] = True
        self.budget_checks = 0
        self.budget_violations = 0
        self.allocation: PowerAllocation | None = None
        self.last: EvaluationResult | None = None

    @property
    def obs_width(self) -> int:
        return obs_width(self.pad_width)

    def equal_allocation(self) -> PowerAllocation:
        pt = self.field.power_budget
        return PowerAllocation([np.full(len(m), pt / len(m)) for m in self.members], pt)

    def reset(self, rng: np.random.Generator, allocation: PowerAllocation | None = None) -> np.ndarray:
        self.allocation = (allocation or self.equal_allocation()).copy()
        self.last = self.model.evaluate(self.allocation.flat(self.assignment), rng, self.fading)
        return self.observations()

    def observations(self) -> np.ndarray:
        """Stacked network inputs, shape ``(K, obs_width)``."""
        pt = self.field.power_budget
        return np.stack([build_observation(j, self.allocation, self.last, self.pad_width).vector(pt)
                         for j in range(self.k)])

    def power_fraction(self) -> float:
        used = sum(float(np.sum(v)) for v in self.allocation.vectors)
        return round(used / (self.k * self.field.power_budget), 12)

    def rewards(self, result: EvaluationResult) -> tuple[np.ndarray, float]:
        pt = self.field.power_budget
        totals = self.allocation.totals() / pt
        shared = compute_reward(result, self.field.rate_threshold, self.reward_mode,
                                float(totals.sum()), self.power_weight).total
        if self.reward_sharing == "shared":
            return np.full(self.k, shared), shared
        per = np.array([
            compute_reward(result, self.field.rate_threshold, self.reward_mode, totals[j],
                           self.power_weight, ues=self.members[j]).total
            for j in range(self.k)])
        return per, shared

    def step(self, actions, rng: np.random.Generator):
        """Apply ``(K, pad_width)`` actions in [-1, 1]; returns ``(obs, rewards, info)``."""
        actions = np.asarray(actions, dtype=float)
        pt = self.field.power_budget
        vectors = []
        for j in range(self.k):
            new = apply_action(self.allocation.vectors[j], actions[j], self.delta_max,
                               self.model.distances[j], pt)
            self.budget_checks += 1
            if not (new.sum() <= pt + BUDGET_SLACK and np.all(new >= 0) and np.all(new <= pt)):
                self.budget_violations += 1
            vectors.append(new)
        self.allocation = PowerAllocation(vectors, pt)
        self.last = self.model.evaluate(self.allocation.flat(self.assignment), rng, self.fading)
        rewards, shared = self.rewards(self.last)
        info = StepInfo(self.last, shared, self.last.total_served, self.power_fraction())
        return self.observations(), rewards, info


def rollout(env: CoverageEnv, policy, steps: int, rng: np.random.Generator,
            fading: FadingMode | str | None = None):
    """Run ``policy(obs) -> actions`` from an equal split; returns per-step arrays.

    Output dict keys: ``reward``, ``served``, ``power_fraction``.
    """
    saved = env.fading
    if fading is not None:
        env.fading = FadingMode(fading)
    try:
        obs = env.reset(rng)
        rewards, served, power = [], [], []
        for _ in range(steps):
            obs, _, info = env.step(policy(obs), rng)
            rewards.append(info.reward)
            served.append(info.served)
            power.append(info.power_fraction)
    finally:
        env.fading = saved
    return {"reward": np.array(rewards), "served": np.array(served),
            "power_fraction": np.array(power)}
