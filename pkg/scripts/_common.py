"""Shared argument handling for the experiment scripts."""
import argparse
import logging
from pathlib import Path

from uavcov.harness import config_from_mapping, emit_outputs, run_experiment


def parser(description, episodes, steps, seeds):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--episodes", type=int, default=episodes)
    p.add_argument("--steps", type=int, default=steps)
    p.add_argument("--seeds", default=str(seeds), help="seed count or comma list")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    return p


def run(args, name, **values):
    """One sweep into ``args.out / name``; returns the run summaries."""
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = config_from_mapping({"episodes": args.episodes, "steps_per_episode": args.steps,
                               "seeds": args.seeds, "workers": args.workers, **values})
    summaries = run_experiment(cfg)
    emit_outputs(summaries, args.out / name, cfg)
    failed = [s for s in summaries if not s.ok]
    for s in failed:
        logging.error("%s K=%d seed %d failed: %s", s.algorithm, s.k, s.seed, s.error)
    return summaries


def mean_by(summaries, key, attr):
    groups = {}
    for s in summaries:
        if s.ok:
            groups.setdefault(key(s), []).append(getattr(s, attr))
    return {k: sum(v) / len(v) for k, v in groups.items()}
