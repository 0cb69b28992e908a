"""Experiment runner: config loading, seed fan-out, sweeps, evaluation and output files.

Every run is identified by a sweep point ``(algorithm, K, R_th, L)`` and a
master seed. The seed is split into independent streams for the UE drop and
clustering, for training, and for evaluation, so changing K or L with the same
seed keeps the same grid cells and only rescales or re-clusters them.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from itertools import product
from pathlib import Path

import numpy as np
import yaml
from scipy import stats

from . import __version__
from .baselines import DqnConfig, dqn_policy, equal_policy, run_dqn
from .channel import ChannelParams, FadingMode
from .env import CoverageEnv, rollout
from .marl import TrainConfig, greedy_policy, run_training
from .neural import save_params
from .scenario import FieldConfig, build_scenario

log = logging.getLogger(__name__)

ALGORITHMS = ("maddpg", "dqn", "equal")
PAPER_SCALE = {"episodes": 500, "steps_per_episode": 500}


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class ExperimentConfig:
    field: FieldConfig = FieldConfig()
    channel: ChannelParams = ChannelParams()
    train: TrainConfig = TrainConfig()
    algorithm: str = "maddpg"
    clusters: tuple[int, ...] = (5,)
    rate_thresholds: tuple[float, ...] = (30e6,)  # bit/s
    side_lens: tuple[float, ...] = (10_000.0,)  # m
    seeds: tuple[int, ...] = (0,)
    fading: str = "sampled"
    eval_steps: int = 100
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.5
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        for name in ("clusters", "rate_thresholds", "side_lens", "seeds"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"{name} must not be empty")
        if any(k < 1 or k > self.field.num_ues for k in self.clusters):
            raise ConfigError(f"clusters must lie in [1, {self.field.num_ues}]")
        if any(r <= 0 for r in self.rate_thresholds) or any(s <= 0 for s in self.side_lens):
            raise ConfigError("rate thresholds and side lengths must be > 0")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.fading not in ("sampled", "expected"):
            raise ConfigError(f"fading must be 'sampled' or 'expected', got {self.fading!r}")
        if self.eval_steps < 10:
            raise ConfigError("eval_steps must be >= 10")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def points(self) -> list[tuple[int, float, float]]:
        """Sweep points ``(K, R_th, L)`` in deterministic order."""
        return list(product(self.clusters, self.rate_thresholds, self.side_lens))

    def dqn_config(self) -> DqnConfig:
        t = self.train
        return DqnConfig(episodes=t.episodes, steps_per_episode=t.steps_per_episode,
                         batch=t.batch, buffer=t.buffer, gamma=t.gamma, tau=t.tau,
                         lr=t.critic_lr, hidden=t.hidden, eps_start=self.eps_start,
                         eps_end=self.eps_end, eps_decay_frac=self.eps_decay_frac,
                         reward_scale=t.reward_scale)


# ---------------------------------------------------------------- config files

_FIELD_KEYS = {f.name for f in dataclasses.fields(FieldConfig)} - {"side_len", "rate_threshold"}
_CHANNEL_KEYS = {f.name for f in dataclasses.fields(ChannelParams)}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_TOP_KEYS = {"algorithm", "clusters", "rate_threshold_mbps", "side_len", "seeds", "fading",
             "eval_steps", "eps_start", "eps_end", "eps_decay_frac", "workers", "paper_scale"}


def _as_tuple(value, cast):
    if isinstance(value, (list, tuple)):
        return tuple(cast(v) for v in value)
    if isinstance(value, str) and "," in value:
        return tuple(cast(v) for v in value.split(",") if v.strip())
    return (cast(value),)


def parse_seeds(value) -> tuple[int, ...]:
    """``"0,3,7"`` or a list gives those seeds; a single integer n gives 0..n-1."""
    if isinstance(value, (list, tuple)) or (isinstance(value, str) and "," in value):
        return _as_tuple(value, int)
    n = int(value)
    if n < 1:
        raise ConfigError("need at least one seed")
    return tuple(range(n))


def config_from_mapping(values: dict) -> ExperimentConfig:
    """Build a config from flat key-value pairs; unknown keys are an error."""
    values = dict(values)
    unknown = set(values) - _FIELD_KEYS - _CHANNEL_KEYS - _TRAIN_KEYS - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if values.pop("paper_scale", False):
        values.update(PAPER_SCALE)
    try:
        fld = FieldConfig(**{k: values[k] for k in _FIELD_KEYS if k in values})
        channel = ChannelParams(**{k: float(values[k]) for k in _CHANNEL_KEYS if k in values})
        train_kw = {k: values[k] for k in _TRAIN_KEYS if k in values}
        if "hidden" in train_kw:
            train_kw["hidden"] = _as_tuple(train_kw["hidden"], int)
        train = TrainConfig(**train_kw)
        top = {}
        if "clusters" in values:
            top["clusters"] = _as_tuple(values["clusters"], int)
        if "rate_threshold_mbps" in values:
            top["rate_thresholds"] = tuple(1e6 * r for r in
                                           _as_tuple(values["rate_threshold_mbps"], float))
        if "side_len" in values:
            top["side_lens"] = _as_tuple(values["side_len"], float)
        if "seeds" in values:
            top["seeds"] = parse_seeds(values["seeds"])
        for key in ("algorithm", "fading"):
            if key in values:
                top[key] = str(values[key])
        for key in ("eval_steps", "workers"):
            if key in values:
                top[key] = int(values[key])
        for key in ("eps_start", "eps_end", "eps_decay_frac"):
            if key in values:
                top[key] = float(values[key])
        return ExperimentConfig(field=fld, channel=channel, train=train, **top)
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err


def load_config_file(path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected key-value pairs at the top level")
    return data


def config_to_mapping(cfg: ExperimentConfig) -> dict:
    """Flat mapping that ``config_from_mapping`` turns back into ``cfg``."""
    out = {"algorithm": cfg.algorithm, "clusters": list(cfg.clusters),
           "rate_threshold_mbps": [r / 1e6 for r in cfg.rate_thresholds],
           "side_len": list(cfg.side_lens), "seeds": list(cfg.seeds), "fading": cfg.fading,
           "eval_steps": cfg.eval_steps, "eps_start": cfg.eps_start, "eps_end": cfg.eps_end,
           "eps_decay_frac": cfg.eps_decay_frac, "workers": cfg.workers}
    for section, keys in ((cfg.field, _FIELD_KEYS), (cfg.channel, _CHANNEL_KEYS),
                          (cfg.train, _TRAIN_KEYS)):
        for k in sorted(keys):
            v = getattr(section, k)
            out[k] = list(v) if isinstance(v, tuple) else v
    return out


# ---------------------------------------------------------------- single runs

@dataclass(frozen=True)
class RunSpec:
    algorithm: str
    k: int
    rate_threshold: float
    side_len: float
    seed: int
    field: FieldConfig
    channel: ChannelParams
    train: TrainConfig
    dqn: DqnConfig
    fading: str
    eval_steps: int

    def key(self):
        return (self.algorithm, self.k, self.rate_threshold, self.side_len)


@dataclass
class RunSummary:
    algorithm: str
    k: int
    rate_threshold: float
    side_len: float
    seed: int
    config_hash: str
    episode_reward: np.ndarray = dc_field(default_factory=lambda: np.zeros(0))
    episode_served: np.ndarray = dc_field(default_factory=lambda: np.zeros(0))
    episode_power: np.ndarray = dc_field(default_factory=lambda: np.zeros(0))
    served: float = float("nan")  # final policy, expected fading
    power_fraction: float = float("nan")
    served_sampled: float = float("nan")
    power_fraction_sampled: float = float("nan")
    budget_checks: int = 0
    budget_violations: int = 0
    wall_clock: float = 0.0
    error: str | None = None
    artifacts: object = None  # trained networks, kept in memory only

    @property
    def ok(self) -> bool:
        return self.error is None

    def key(self):
        return (self.algorithm, self.k, self.rate_threshold, self.side_len)


def config_hash(spec: RunSpec) -> str:
    """Digest of everything that defines a run except its seed."""
    payload = {"algorithm": spec.algorithm, "k": spec.k, "rate_threshold": spec.rate_threshold,
               "side_len": spec.side_len, "field": dataclasses.asdict(spec.field),
               "channel": dataclasses.asdict(spec.channel),
               "train": dataclasses.asdict(spec.train), "dqn": dataclasses.asdict(spec.dqn),
               "fading": spec.fading, "eval_steps": spec.eval_steps}
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def run_streams(seed: int):
    """Scenario, training and evaluation seeds derived from one master seed."""
    scenario, train, evaluation = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(scenario), int(train.generate_state(1)[0]),
            int(evaluation.generate_state(1)[0]))


def make_env(spec: RunSpec, rng: np.random.Generator) -> CoverageEnv:
    fld = dataclasses.replace(spec.field, side_len=spec.side_len,
                              rate_threshold=spec.rate_threshold)
    ues, assignment, uavs = build_scenario(fld, spec.k, rng)
    t = spec.train
    return CoverageEnv(ues, uavs, assignment, spec.channel, fld, pad_width=t.pad_width,
                       delta_max=t.delta_max, fading=spec.fading, reward_mode=t.reward_mode,
                       reward_sharing=t.reward_sharing, power_weight=t.power_weight)


def evaluate_policy(env: CoverageEnv, policy, steps: int, seed: int) -> dict:
    """Greedy rollouts from an equal split; metrics are means over the last 10% of steps."""
    tail = max(1, steps // 10)
    out = {}
    for mode in (FadingMode.EXPECTED, FadingMode.SAMPLED):
        r = rollout(env, policy, steps, np.random.default_rng(seed), mode)
        out[mode.value] = (float(r["served"][-tail:].mean()),
                           float(r["power_fraction"][-tail:].mean()))
    return out


def _equal_series(env: CoverageEnv, spec: RunSpec, seed: int):
    t = spec.train
    rng = np.random.default_rng(seed)
    shape = (t.episodes, t.steps_per_episode)
    rewards, served, power = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    policy = equal_policy(env)
    for ep in range(t.episodes):
        r = rollout(env, policy, t.steps_per_episode, rng)
        rewards[ep], served[ep], power[ep] = r["reward"], r["served"], r["power_fraction"]
    return rewards.mean(axis=1), served.mean(axis=1), power.mean(axis=1)


def run_single(spec: RunSpec) -> RunSummary:
    """Build the scenario, train (unless equal power) and evaluate; never raises."""
    summary = RunSummary(spec.algorithm, spec.k, spec.rate_threshold, spec.side_len,
                         spec.seed, config_hash(spec))
    start = time.perf_counter()
    try:
        scenario_rng, train_seed, eval_seed = run_streams(spec.seed)
        env = make_env(spec, scenario_rng)
        if spec.algorithm == "maddpg":
            res = run_training(env, spec.train, train_seed)
            policy = greedy_policy(res.agents)
            series = (res.episode_reward, res.episode_served, res.episode_power)
            summary.artifacts = res.agents
        elif spec.algorithm == "dqn":
            res = run_dqn(env, spec.dqn, train_seed)
            policy = dqn_policy(env, res.qnet)
            series = (res.episode_reward, res.episode_served, res.episode_power)
            summary.artifacts = res.qnet
        else:
            series = _equal_series(env, spec, train_seed)
            policy = equal_policy(env)
        summary.episode_reward, summary.episode_served, summary.episode_power = series
        summary.budget_checks, summary.budget_violations = env.budget_checks, env.budget_violations
        ev = evaluate_policy(env, policy, spec.eval_steps, eval_seed)
        summary.served, summary.power_fraction = ev["expected"]
        summary.served_sampled, summary.power_fraction_sampled = ev["sampled"]
        if summary.budget_violations:
            raise RuntimeError(f"{summary.budget_violations} allocations broke the power budget")
    except Exception as err:  # recorded, the sweep continues
        log.exception("run %s seed %d failed", spec.key(), spec.seed)
        summary.error = f"{type(err).__name__}: {err}"
    summary.wall_clock = time.perf_counter() - start
    return summary


def run_specs(cfg: ExperimentConfig) -> list[RunSpec]:
    dqn = cfg.dqn_config()
    return [RunSpec(cfg.algorithm, k, r, s, seed, cfg.field, cfg.channel, cfg.train, dqn,
                    cfg.fading, cfg.eval_steps)
            for (k, r, s) in cfg.points() for seed in cfg.seeds]


def _strip(summary: RunSummary) -> RunSummary:
    summary.artifacts = None
    return summary


def run_experiment(cfg: ExperimentConfig, keep_artifacts: bool = False) -> list[RunSummary]:
    """Every (sweep point, seed) run, merged in (point, seed) order."""
    specs = run_specs(cfg)
    if cfg.workers > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_stripped, specs))
    else:
        results = [run_single(s) for s in specs]
        if not keep_artifacts:
            results = [_strip(r) for r in results]
    order = {(s.key(), s.seed): i for i, s in enumerate(specs)}
    return sorted(results, key=lambda r: order[(r.key(), r.seed)])


def _run_stripped(spec: RunSpec) -> RunSummary:
    return _strip(run_single(spec))


# ---------------------------------------------------------------- aggregation

def mean_ci95(values) -> tuple[float, float, float]:
    """Mean with a Student-t 95% interval (n-1 dof); a single value has zero width."""
    x = np.asarray(values, dtype=float)
    mean = float(x.mean())
    if len(x) < 2:
        return mean, mean, mean
    half = float(stats.t.ppf(0.975, len(x) - 1) * x.std(ddof=1) / np.sqrt(len(x)))
    return mean, mean - half, mean + half


def aggregate(summaries: list[RunSummary]) -> list[dict]:
    groups: dict = {}
    for s in summaries:
        if s.ok:
            groups.setdefault(s.key(), []).append(s)
    rows = []
    for (algo, k, rth, side), runs in groups.items():
        row = {"algorithm": algo, "clusters": k, "rate_threshold_mbps": rth / 1e6,
               "side_len": side, "seeds": [r.seed for r in runs]}
        for name in ("served", "power_fraction", "served_sampled", "power_fraction_sampled"):
            m, lo, hi = mean_ci95([getattr(r, name) for r in runs])
            row[name] = {"mean": m, "ci95_low": lo, "ci95_high": hi}
        m, lo, hi = mean_ci95([float(r.episode_reward[-1]) if len(r.episode_reward) else 0.0
                               for r in runs])
        row["final_episode_reward"] = {"mean": m, "ci95_low": lo, "ci95_high": hi}
        rows.append(row)
    return rows


# ---------------------------------------------------------------- output files

def ensure_writable(out_dir) -> Path:
    """Create ``out_dir`` and prove it is writable before any run starts."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out, prefix=".probe", delete=True):
            pass
    except OSError as err:
        raise ConfigError(f"output directory {out} is not writable: {err}") from err
    return out


def run_name(s: RunSummary | RunSpec) -> str:
    return f"{s.algorithm}_K{s.k}_R{s.rate_threshold / 1e6:g}_L{s.side_len:g}_seed{s.seed}"


def episode_table(s: RunSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "mean_step_reward", "served", "power_fraction"])
    for i, (r, u, p) in enumerate(zip(s.episode_reward, s.episode_served, s.episode_power)):
        w.writerow([i, repr(float(r)), repr(float(u)), repr(float(p))])
    return buf.getvalue()


def emit_outputs(summaries: list[RunSummary], out_dir, cfg: ExperimentConfig) -> list[Path]:
    """Per-run episode tables, the aggregate summary and the run manifest.

    Wall-clock times are logged but kept out of the files so that repeated
    sweeps produce identical bytes.
    """
    if not summaries:
        raise ValueError("nothing to write")
    out = ensure_writable(out_dir)
    runs_dir = out / "runs"
    runs_dir.mkdir(exist_ok=True)
    written = []
    for s in summaries:
        if s.ok:
            p = runs_dir / f"{run_name(s)}.csv"
            p.write_text(episode_table(s))
            written.append(p)
    agg = out / "aggregate.json"
    agg.write_text(json.dumps(aggregate(summaries), indent=2, sort_keys=True) + "\n")
    manifest = {
        "version": __version__,
        "config": config_to_mapping(cfg),
        "runs": [{"name": run_name(s), "algorithm": s.algorithm, "clusters": s.k,
                  "rate_threshold_mbps": s.rate_threshold / 1e6, "side_len": s.side_len,
                  "seed": s.seed, "config_hash": s.config_hash,
                  "episodes": len(s.episode_reward), "status": "ok" if s.ok else "failed",
                  "error": s.error, "served": s.served, "power_fraction": s.power_fraction,
                  "served_sampled": s.served_sampled,
                  "power_fraction_sampled": s.power_fraction_sampled,
                  "budget_checks": s.budget_checks, "budget_violations": s.budget_violations}
                 for s in summaries],
    }
    man = out / "manifest.json"
    man.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    written += [agg, man]
    for s in summaries:
        log.info("%s: served %.2f power %.3f (%.1fs)%s", run_name(s), s.served,
                 s.power_fraction, s.wall_clock, "" if s.ok else f" FAILED {s.error}")
    return written


def save_checkpoints(summaries: list[RunSummary], out_dir) -> list[Path]:
    """Network files for every trained run that still carries its networks."""
    paths = []
    for s in summaries:
        if s.artifacts is None:
            continue
        target = Path(out_dir) / "checkpoints" / run_name(s)
        if s.algorithm == "maddpg":
            paths += s.artifacts.save(target)
        else:
            target.mkdir(parents=True, exist_ok=True)
            save_params(target / "qnet.bin", s.artifacts)
            paths.append(target / "qnet.bin")
    return paths
