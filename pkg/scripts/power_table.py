"""Mean transmit power fraction against the number of clusters."""
from _common import mean_by, parser, run

CLUSTERS = [5, 10, 15, 20, 25]


def main():
    args = parser(__doc__, episodes=30, steps=200, seeds=3).parse_args()
    table = {}
    for algo in ("maddpg", "dqn", "equal"):
        summaries = run(args, algo, algorithm=algo, clusters=CLUSTERS)
        table[algo] = mean_by(summaries, lambda s: s.k, "power_fraction")
    print("K   MADDPG   DQN      equal")
    for k in CLUSTERS:
        print(f"{k:<4}" + "".join(f"{100 * table[a].get(k, float('nan')):<9.2f}"
                                  for a in ("maddpg", "dqn", "equal")))


if __name__ == "__main__":
    main()
