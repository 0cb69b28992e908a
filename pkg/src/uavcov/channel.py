"""Air-to-ground propagation and rate model.

All functions are pure and accept numpy arrays where it makes sense, so the
same code evaluates one link or a whole UE x UAV matrix. Randomness only
enters through an explicitly passed ``numpy.random.Generator``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class FadingMode(str, enum.Enum):
    SAMPLED = "sampled"
    EXPECTED = "expected"


@dataclass(frozen=True)
class ChannelParams:
    alpha_los: float = 3.0
    alpha_nlos: float = 4.0
    b_env: float = 0.136
    c_env: float = 11.95
    rice_k: float = 10.0
    mu_gain: float = 0.5
    noise_power: float = 4e-15  # W
    bandwidth: float = 10e6  # Hz

    def __post_init__(self):
        for name in ("alpha_los", "alpha_nlos", "b_env", "c_env", "rice_k",
                     "mu_gain", "noise_power", "bandwidth"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be finite and > 0, got {value}")
        if self.alpha_nlos <= self.alpha_los:
            raise ValueError("alpha_nlos must exceed alpha_los")


@dataclass(frozen=True)
class LinkGeometry:
    horiz_dist: np.ndarray | float
    slant_dist: np.ndarray | float
    elevation: np.ndarray | float


@dataclass(frozen=True)
class FadingDraw:
    g_los: np.ndarray | float
    k_nlos: np.ndarray | float
    mode: FadingMode


@dataclass(frozen=True)
class LinkStats:
    geometry: LinkGeometry
    p_los: float
    p_eff: float
    interference: float
    rate: float
    served: bool


def link_geometry(ue_xy, uav_xyz) -> LinkGeometry:
    """Horizontal distance, slant range and elevation from UE(s) to UAV(s).

    Broadcasts: ``ue_xy`` has trailing dimension 2, ``uav_xyz`` trailing 3.
    """
    ue = np.asarray(ue_xy, dtype=float)
    uav = np.asarray(uav_xyz, dtype=float)
    if not (np.all(np.isfinite(ue)) and np.all(np.isfinite(uav))):
        raise ValueError("coordinates must be finite")
    h = uav[..., 2]
    if np.any(h <= 0):
        raise ValueError("UAV height must be > 0")
    d = np.hypot(uav[..., 0] - ue[..., 0], uav[..., 1] - ue[..., 1])
    r = np.hypot(d, h)
    theta = np.arcsin(np.minimum(h / r, 1.0))
    if d.ndim == 0:
        return LinkGeometry(float(d), float(r), float(theta))
    return LinkGeometry(d, r, theta)


def los_probability(elevation, params: ChannelParams):
    """Sigmoid LoS probability of the elevation angle (radians)."""
    deg = np.degrees(elevation)
    return 1.0 / (1.0 + params.c_env * np.exp(-params.b_env * (deg - params.c_env)))


def sample_fading(rng: np.random.Generator, params: ChannelParams,
                  mode: FadingMode | str = FadingMode.SAMPLED, size=None) -> FadingDraw:
    """Draw LoS (Rician power) and NLoS (exponential power) gains with mean mu.

    The Rician gain is |los + scatter|^2 with a unit-variance complex normal
    scatter term, which fixes both the mean and the Rice factor exactly.
    """
    mode = FadingMode(mode)
    mu = params.mu_gain
    if mode is FadingMode.EXPECTED:
        if size is None:
            return FadingDraw(mu, mu, mode)
        return FadingDraw(np.full(size, mu), np.full(size, mu), mode)
    kf = params.rice_k
    los_amp = np.sqrt(mu * kf / (kf + 1.0))
    scatter_amp = np.sqrt(mu / (kf + 1.0))
    z = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    g = np.abs(los_amp + scatter_amp * z / np.sqrt(2.0)) ** 2
    k = rng.exponential(mu, size)
    return FadingDraw(g, k, mode)


def effective_received_power(p_tx, geom: LinkGeometry, fading: FadingDraw,
                             params: ChannelParams):
    """LoS-probability-weighted mix of the LoS and NLoS received powers."""
    if np.any(np.asarray(p_tx) < 0):
        raise ValueError("transmit power must be >= 0")
    p_los = los_probability(geom.elevation, params)
    r = geom.slant_dist
    rx_los = p_tx * fading.g_los * r ** (-params.alpha_los)
    rx_nlos = p_tx * fading.k_nlos * r ** (-params.alpha_nlos)
    return p_los * rx_los + (1.0 - p_los) * rx_nlos


def inter_cluster_interference(ue_xy, own_cluster: int, uav_positions, avg_powers,
                               fading_draws, params: ChannelParams) -> float:
    """NLoS-only interference from every UAV except the serving one.

    ``fading_draws`` holds one ``FadingDraw`` (or bare NLoS gain) per UAV;
    the entry at ``own_cluster`` is ignored.
    """
    uavs = np.asarray(uav_positions, dtype=float).reshape(-1, 3)
    powers = np.asarray(avg_powers, dtype=float)
    if not (len(uavs) == len(powers) == len(fading_draws)):
        raise ValueError("uav_positions, avg_powers and fading_draws lengths differ")
    if not 0 <= own_cluster < len(uavs):
        raise ValueError(f"own_cluster {own_cluster} out of range")
    if np.any(powers < 0):
        raise ValueError("average powers must be >= 0")
    k = np.array([f.k_nlos if isinstance(f, FadingDraw) else f for f in fading_draws],
                 dtype=float)
    geom = link_geometry(np.asarray(ue_xy, dtype=float)[None, :], uavs)
    terms = powers * k * np.asarray(geom.slant_dist) ** (-params.alpha_nlos)
    terms[own_cluster] = 0.0
    return float(terms.sum())


def data_rate(p_eff, interference, share_count, params: ChannelParams):
    """Shannon rate with the bandwidth split evenly across ``share_count`` UEs."""
    if np.any(np.asarray(share_count) < 1):
        raise ValueError("share_count must be >= 1")
    sinr = p_eff / (interference + params.noise_power)
    return params.bandwidth / share_count * np.log2(1.0 + sinr)
