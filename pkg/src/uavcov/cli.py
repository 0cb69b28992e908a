"""Command line entry point: ``train``, ``sweep`` and ``eval``.

Exit codes: 0 success, 1 at least one run failed, 2 invalid configuration.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .baselines import dqn_policy, equal_policy
from .harness import (ALGORITHMS, ConfigError, RunSpec, config_from_mapping, emit_outputs,
                      ensure_writable, evaluate_policy, load_config_file, make_env, run_experiment,
                      run_name, run_specs, run_streams, save_checkpoints)
from .marl import AgentBundle, greedy_policy
from .neural import load_params

log = logging.getLogger("uavcov")

# CLI flag -> flat config key
_FLAG_KEYS = {"algo": "algorithm", "clusters": "clusters", "ues": "num_ues",
              "rate_threshold_mbps": "rate_threshold_mbps", "field_side_m": "side_len",
              "seeds": "seeds", "episodes": "episodes", "steps": "steps_per_episode",
              "fading": "fading", "workers": "workers"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uavcov", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("train", "train one configuration and save its networks"),
                            ("sweep", "run every sweep point and seed, write tables"),
                            ("eval", "evaluate networks saved by train")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="flat key-value YAML file")
        p.add_argument("--algo", choices=ALGORITHMS)
        p.add_argument("--clusters", help="K, or a comma list for sweeps")
        p.add_argument("--ues", type=int)
        p.add_argument("--rate-threshold-mbps", help="R_th in Mbit/s, or a comma list")
        p.add_argument("--field-side-m", help="field side L in m, or a comma list")
        p.add_argument("--seeds", help="seed count n (0..n-1) or a comma list")
        p.add_argument("--episodes", type=int)
        p.add_argument("--steps", type=int, help="steps per episode")
        p.add_argument("--fading", choices=("sampled", "expected"))
        p.add_argument("--paper-scale", action="store_true",
                       help="500 episodes of 500 steps")
        p.add_argument("--workers", type=int)
        p.add_argument("--out", type=Path, default=Path("results"))
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args):
    values = load_config_file(args.config) if args.config else {}
    for flag, key in _FLAG_KEYS.items():
        v = getattr(args, flag)
        if v is not None:
            values[key] = v
    if args.paper_scale:
        values["paper_scale"] = True
    return config_from_mapping(values)


def cmd_train(cfg, out: Path) -> int:
    summaries = run_experiment(cfg, keep_artifacts=True)
    emit_outputs(summaries, out, cfg)
    save_checkpoints(summaries, out)
    return 0 if all(s.ok for s in summaries) else 1


def cmd_sweep(cfg, out: Path) -> int:
    summaries = run_experiment(cfg)
    emit_outputs(summaries, out, cfg)
    return 0 if all(s.ok for s in summaries) else 1


def _load_policy(spec: RunSpec, env, ckpt: Path):
    if spec.algorithm == "equal":
        return equal_policy(env)
    if spec.algorithm == "maddpg":
        return greedy_policy(AgentBundle.load(ckpt, env.masks))
    return dqn_policy(env, load_params(ckpt / "qnet.bin"))


def cmd_eval(cfg, out: Path) -> int:
    """Rebuild each run's scenario from its seed and evaluate the saved networks."""
    rows, status = [], 0
    for spec in run_specs(cfg):
        name = run_name(spec)
        try:
            scenario_rng, _, eval_seed = run_streams(spec.seed)
            env = make_env(spec, scenario_rng)
            policy = _load_policy(spec, env, out / "checkpoints" / name)
            ev = evaluate_policy(env, policy, spec.eval_steps, eval_seed)
            rows.append({"name": name, "served": ev["expected"][0],
                         "power_fraction": ev["expected"][1], "served_sampled": ev["sampled"][0],
                         "power_fraction_sampled": ev["sampled"][1], "status": "ok"})
        except (OSError, ValueError) as err:
            log.error("eval %s failed: %s", name, err)
            rows.append({"name": name, "status": "failed", "error": str(err)})
            status = 1
    (out / "eval.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    for r in rows:
        print(json.dumps(r, sort_keys=True))
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = ensure_writable(args.out)
    except ConfigError as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return 2
    command = {"train": cmd_train, "sweep": cmd_sweep, "eval": cmd_eval}[args.command]
    return command(cfg, out)


if __name__ == "__main__":
    sys.exit(main())
