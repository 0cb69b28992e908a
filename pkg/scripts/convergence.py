"""Per-episode MADDPG training reward for 3, 5 and 7 clusters."""
import numpy as np

from _common import parser, run


def main():
    args = parser(__doc__, episodes=100, steps=200, seeds=10).parse_args()
    summaries = run(args, "convergence", algorithm="maddpg", clusters=[3, 5, 7])
    print("K  seed  first10%  last20%")
    for s in summaries:
        if s.ok:
            r = s.episode_reward
            print(f"{s.k:<3}{s.seed:<6}{r[:max(1, len(r) // 10)].mean():<10.3f}"
                  f"{r[-max(1, len(r) // 5):].mean():.3f}")
    curves = np.array([s.episode_reward for s in summaries if s.ok])
    np.savetxt(args.out / "convergence" / "curves.csv", curves, delimiter=",")


if __name__ == "__main__":
    main()
