"""Served UEs for a 10 km and a 50 km field at several cluster counts."""
from _common import mean_by, parser, run


def main():
    p = parser(__doc__, episodes=30, steps=200, seeds=3)
    p.add_argument("--algo", default="maddpg", choices=("maddpg", "dqn", "equal"))
    args = p.parse_args()
    summaries = run(args, f"cell_{args.algo}", algorithm=args.algo, clusters=[5, 10, 15],
                    side_len=[10_000, 50_000])
    served = mean_by(summaries, lambda s: (s.k, s.side_len), "served")
    print("K   L=10km  L=50km")
    for k in (5, 10, 15):
        print(f"{k:<4}{served.get((k, 10_000.0), float('nan')):<8.2f}"
              f"{served.get((k, 50_000.0), float('nan')):.2f}")


if __name__ == "__main__":
    main()
