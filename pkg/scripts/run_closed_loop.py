"""Two-stage toy training on the needle world; accuracy should leave the 1/4 floor."""

import time

from report import parser, per_seed, write_curves

from twg.experiments import closed_loop


def main() -> None:
    args = parser(__doc__, 200).parse_args()
    t0 = time.perf_counter()
    res = closed_loop(args.seeds, args.steps, args.samples)
    print(f"closed loop, {len(args.seeds)} seeds x {args.steps} steps, {time.perf_counter() - t0:.0f} s")
    for label, lo, hi in (("first 10", 0, 10), ("last 10", -10, None)):
        print(f"  mean r_acc {label:>8}: {res.mean('default', 'mean_r_acc', lo, hi):.3f}  [{per_seed(res, 'default', 'mean_r_acc', lo, hi)}]")
    if args.csv:
        write_curves(res, ["mean_r_acc", "grounded_fraction", "mean_total"], args.csv)


if __name__ == "__main__":
    main()
