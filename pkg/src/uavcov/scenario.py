"""Field construction, UE drops, UAV placement and whole-network evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .channel import (ChannelParams, FadingMode, LinkGeometry, LinkStats,
                      los_probability, sample_fading)
from .clustering import ClusterAssignment, kmeans

BUDGET_SLACK = 1e-9


@dataclass(frozen=True)
class FieldConfig:
    side_len: float = 10_000.0  # m
    uav_height: float = 500.0  # m
    num_ues: int = 30
    power_budget: float = 1.0  # W per UAV
    rate_threshold: float = 30e6  # bit/s
    grid_dim: int = 100

    def __post_init__(self):
        if self.side_len <= 0 or self.uav_height <= 0:
            raise ValueError("side_len and uav_height must be > 0")
        if self.num_ues < 1:
            raise ValueError("num_ues must be >= 1")
        if self.power_budget <= 0 or self.rate_threshold <= 0:
            raise ValueError("power_budget and rate_threshold must be > 0")

    @property
    def cell_side(self) -> float:
        return self.side_len / self.grid_dim


@dataclass
class PowerAllocation:
    """Per-cluster transmit power vectors in cluster-internal UE order."""

    vectors: list[np.ndarray]
    budget: float

    def flat(self, assignment: ClusterAssignment) -> np.ndarray:
        out = np.zeros(len(assignment.labels))
        for j, vec in enumerate(self.vectors):
            out[assignment.members(j)] = vec
        return out

    def totals(self) -> np.ndarray:
        return np.array([float(np.sum(v)) for v in self.vectors])

    def copy(self) -> "PowerAllocation":
        return PowerAllocation([v.copy() for v in self.vectors], self.budget)


@dataclass
class NetworkSnapshot:
    ue_positions: np.ndarray  # (N, 2)
    uav_positions: np.ndarray  # (K, 3)
    assignment: ClusterAssignment
    allocation: PowerAllocation
    # explicit a[i, j]; derived from the assignment labels when omitted
    association: np.ndarray | None = None

    def association_matrix(self) -> np.ndarray:
        if self.association is not None:
            return np.asarray(self.association)
        return self.assignment.indicator()


@dataclass
class EvaluationResult:
    horiz_dist: np.ndarray
    slant_dist: np.ndarray
    elevation: np.ndarray
    p_los: np.ndarray
    p_eff: np.ndarray
    interference: np.ndarray
    rate: np.ndarray
    served: np.ndarray
    labels: np.ndarray
    rate_threshold: float
    served_per_cluster: np.ndarray = dc_field(init=False)

    def __post_init__(self):
        k = int(self.labels.max()) + 1 if len(self.labels) else 0
        self.served_per_cluster = np.bincount(self.labels, weights=self.served,
                                              minlength=k).astype(int)

    @property
    def total_served(self) -> int:
        return int(self.served.sum())

    @property
    def total_rate(self) -> float:
        return float(self.rate.sum())

    @property
    def wasted_rate(self) -> float:
        return float(np.sum((self.rate - self.rate_threshold)[self.served]))

    @property
    def per_ue(self) -> list[LinkStats]:
        return [
            LinkStats(LinkGeometry(float(self.horiz_dist[i]), float(self.slant_dist[i]),
                                   float(self.elevation[i])),
                      float(self.p_los[i]), float(self.p_eff[i]),
                      float(self.interference[i]), float(self.rate[i]),
                      bool(self.served[i]))
            for i in range(len(self.rate))
        ]


def generate_ues(rng: np.random.Generator, field: FieldConfig) -> np.ndarray:
    """Drop UEs on distinct grid-cell centers, uniformly without replacement."""
    cells = field.grid_dim ** 2
    if field.num_ues > cells:
        raise ValueError(f"{field.num_ues} UEs do not fit in {cells} cells")
    idx = rng.choice(cells, size=field.num_ues, replace=False)
    col, row = idx % field.grid_dim, idx // field.grid_dim
    return np.column_stack([(col + 0.5) * field.cell_side, (row + 0.5) * field.cell_side])


def place_uavs(assignment: ClusterAssignment, field: FieldConfig) -> np.ndarray:
    c = np.asarray(assignment.centroids, dtype=float)
    if len(c) < 1:
        raise ValueError("need at least one centroid")
    if np.any(c < 0) or np.any(c > field.side_len):
        raise ValueError("centroid outside the field")
    return np.column_stack([c, np.full(len(c), field.uav_height)])


def build_scenario(field: FieldConfig, k: int, rng: np.random.Generator,
                   restarts: int = 10):
    """UE drop -> k-means -> UAV positions; returns ``(ues, assignment, uavs)``."""
    ues = generate_ues(rng, field)
    assignment = kmeans(ues, k, rng, restarts=restarts, tol=1e-4 * field.side_len)
    return ues, assignment, place_uavs(assignment, field)


class NetworkModel:
    """Static link geometry cached for repeated evaluation of one deployment.

    ``interference_power`` selects the interferer's power: ``"mean"`` uses the
    mean of its current allocation vector, ``"static"`` uses P_t / N_s.
    """

    def __init__(self, ue_positions, uav_positions, assignment: ClusterAssignment,
                 params: ChannelParams, field: FieldConfig, interference_power: str = "mean"):
        if interference_power not in ("mean", "static"):
            raise ValueError(f"unknown interference_power {interference_power!r}")
        self.params = params
        self.field = field
        self.assignment = assignment
        self.labels = np.asarray(assignment.labels)
        self.sizes = np.asarray(assignment.sizes)
        self.interference_power = interference_power
        ues = np.asarray(ue_positions, dtype=float)
        uavs = np.asarray(uav_positions, dtype=float)
        self.n, self.k = len(ues), len(uavs)
        rows = np.arange(self.n)
        h = uavs[None, :, 2]
        horiz = np.hypot(uavs[None, :, 0] - ues[:, None, 0], uavs[None, :, 1] - ues[:, None, 1])
        slant = np.hypot(horiz, h)
        self.horiz = horiz[rows, self.labels]
        self.slant = slant[rows, self.labels]
        self.elevation = np.arcsin(np.minimum(uavs[self.labels, 2] / self.slant, 1.0))
        self.p_los = los_probability(self.elevation, params)
        self.path_los = self.slant ** (-params.alpha_los)
        self.path_nlos = self.slant ** (-params.alpha_nlos)
        self.path_interf = slant ** (-params.alpha_nlos)
        self.path_interf[rows, self.labels] = 0.0
        self.share = self.sizes[self.labels]
        self.distances = [self.horiz[assignment.members(j)] for j in range(self.k)]

    def cluster_avg_power(self, flat_powers: np.ndarray) -> np.ndarray:
        if self.interference_power == "static":
            return self.field.power_budget / self.sizes
        return np.bincount(self.labels, weights=flat_powers, minlength=self.k) / self.sizes

    def evaluate(self, flat_powers, rng: np.random.Generator | None,
                 mode: FadingMode | str = FadingMode.SAMPLED) -> EvaluationResult:
        p = np.asarray(flat_powers, dtype=float)
        mode = FadingMode(mode)
        prm = self.params
        if mode is FadingMode.EXPECTED:
            g = k_own = prm.mu_gain
            k_all = prm.mu_gain
        else:
            g = sample_fading(rng, prm, mode, size=self.n).g_los
            k_all = sample_fading(rng, prm, mode, size=(self.n, self.k)).k_nlos
            k_own = k_all[np.arange(self.n), self.labels]
        p_eff = self.p_los * p * g * self.path_los + (1.0 - self.p_los) * p * k_own * self.path_nlos
        avg = self.cluster_avg_power(p)
        interference = (k_all * self.path_interf) @ avg if self.k > 1 else np.zeros(self.n)
        rate = prm.bandwidth / self.share * np.log2(1.0 + p_eff / (interference + prm.noise_power))
        served = rate >= self.field.rate_threshold
        return EvaluationResult(self.horiz, self.slant, self.elevation, self.p_los, p_eff,
                                interference, rate, served, self.labels,
                                self.field.rate_threshold)


def evaluate_network(snapshot: NetworkSnapshot, params: ChannelParams, field: FieldConfig,
                     rng: np.random.Generator | None, mode: FadingMode | str = FadingMode.SAMPLED,
                     interference_power: str = "mean") -> EvaluationResult:
    for j, vec in enumerate(snapshot.allocation.vectors):
        if len(vec) != snapshot.assignment.sizes[j]:
            raise ValueError(f"allocation vector {j} has length {len(vec)}, "
                             f"cluster size is {snapshot.assignment.sizes[j]}")
    model = NetworkModel(snapshot.ue_positions, snapshot.uav_positions, snapshot.assignment,
                         params, field, interference_power)
    return model.evaluate(snapshot.allocation.flat(snapshot.assignment), rng, mode)


@dataclass(frozen=True)
class ConstraintReport:
    c1_rate: bool
    c2_single_uav: bool
    c3_binary: bool
    c4_budget: bool
    c5_in_field: bool
    budget_ok_per_cluster: tuple[bool, ...] = ()

    @property
    def all_ok(self) -> bool:
        return all((self.c1_rate, self.c2_single_uav, self.c3_binary,
                    self.c4_budget, self.c5_in_field))


def check_constraints(snapshot: NetworkSnapshot, result: EvaluationResult,
                      field: FieldConfig) -> ConstraintReport:
    """Feasibility report for the coverage problem's constraints; never raises."""
    try:
        a = snapshot.association_matrix()
        c3 = bool(np.all((a == 0) | (a == 1)))
        c2 = bool(np.all(a.sum(axis=1) <= 1))
        served = np.asarray(result.served, dtype=bool)
        rate = np.asarray(result.rate)
        c1 = bool(np.array_equal(served, rate >= field.rate_threshold)
                  and np.all(a.sum(axis=1)[served] >= 1))
    except Exception:
        c1 = c2 = c3 = False
    budget_ok = tuple(
        bool(np.all(np.asarray(v) >= 0) and float(np.sum(v)) <= field.power_budget + BUDGET_SLACK)
        for v in snapshot.allocation.vectors)
    L = field.side_len
    uav_xy = np.asarray(snapshot.uav_positions)[:, :2]
    ue_xy = np.asarray(snapshot.ue_positions)
    c5 = bool(np.all((uav_xy >= 0) & (uav_xy <= L)) and np.all((ue_xy >= 0) & (ue_xy <= L)))
    return ConstraintReport(c1, c2, c3, all(budget_ok), c5, budget_ok)
