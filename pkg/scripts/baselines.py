"""Served UEs for MADDPG, DQN and equal power over K and the rate threshold."""
from _common import mean_by, parser, run


def main():
    p = parser(__doc__, episodes=40, steps=200, seeds=5)
    p.add_argument("--clusters", default="3,5,7,10")
    p.add_argument("--rate-threshold-mbps", default="30")
    args = p.parse_args()
    served = {}
    for algo in ("maddpg", "dqn", "equal"):
        summaries = run(args, algo, algorithm=algo, clusters=args.clusters,
                        rate_threshold_mbps=args.rate_threshold_mbps)
        served[algo] = mean_by(summaries, lambda s: (s.k, s.rate_threshold / 1e6), "served")
    print("K   R_th  MADDPG  DQN     equal")
    for key in sorted(served["equal"]):
        print(f"{key[0]:<4}{key[1]:<6g}" + "".join(f"{served[a].get(key, float('nan')):<8.2f}"
                                                  for a in ("maddpg", "dqn", "equal")))


if __name__ == "__main__":
    main()
