"""Shared printing and CSV output for the experiment scripts."""

import argparse
import csv
from pathlib import Path

from twg.experiments import SEEDS, ExperimentResult


def parser(description: str, steps: int) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--steps", type=int, default=steps)
    p.add_argument("--seeds", type=int, nargs="+", default=list(SEEDS))
    p.add_argument("--samples", type=int, default=400, help="synthetic corpus size")
    p.add_argument("--csv", type=Path, help="write per-step arm means here")
    return p


def per_seed(res: ExperimentResult, arm: str, column: str, lo: int, hi: int | None = None) -> str:
    return " ".join(f"{r.window(column, lo, hi):.3f}" for r in res.arm(arm))


def write_curves(res: ExperimentResult, columns: list[str], path: Path) -> None:
    arms = list(dict.fromkeys(r.arm for r in res.runs))
    steps = min(len(r.rows) for r in res.runs)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "arm", *columns])
        for arm in arms:
            for i in range(steps):
                w.writerow([i, arm, *(f"{res.mean(arm, c, i, i + 1):.6f}" for c in columns)])
