"""Self-confirm penalty on vs off: grounding on global questions should drop, accuracy hold."""

import time

from report import parser, per_seed, write_curves

from twg.experiments import pseudo_ablation


def main() -> None:
    args = parser(__doc__, 150).parse_args()
    t0 = time.perf_counter()
    res = pseudo_ablation(args.seeds, args.steps, args.samples)
    print(f"pseudo ablation, {len(args.seeds)} seeds x {args.steps} steps, {time.perf_counter() - t0:.0f} s")
    for arm in ("pseudo_off", "pseudo_on"):
        for col in ("grounded_fraction", "mean_r_acc"):
            print(f"  {arm:<10} {col:<17} last 30: {res.mean(arm, col, -30):.3f}  [{per_seed(res, arm, col, -30)}]")
    if args.csv:
        write_curves(res, ["grounded_fraction", "mean_r_acc", "mean_r_pseudo"], args.csv)


if __name__ == "__main__":
    main()
