"""Stage-1 soft-only vs soft+hard grounding reward: only the hard bonus keeps grounding alive."""

import time

from report import parser, per_seed, write_curves

from twg.experiments import shaping_ablation


def main() -> None:
    args = parser(__doc__, 150).parse_args()
    t0 = time.perf_counter()
    res = shaping_ablation(args.seeds, args.steps, args.samples)
    print(f"shaping ablation, {len(args.seeds)} seeds x {args.steps} steps, {time.perf_counter() - t0:.0f} s")
    for arm in ("soft_only", "soft_hard"):
        for col in ("grounded_fraction", "mean_r_acc"):
            print(
                f"  {arm:<9} {col:<17} first 10: {res.mean(arm, col, 0, 10):.3f}"
                f"  last 20: {res.mean(arm, col, -20):.3f}  [{per_seed(res, arm, col, -20)}]"
            )
    if args.csv:
        write_curves(res, ["grounded_fraction", "mean_r_acc", "mean_r_soft", "mean_r_hard"], args.csv)


if __name__ == "__main__":
    main()
