"""Closed-loop toy experiments on the synthetic corpus.

Three runs, each repeated over seeds:

``closed_loop``
    two-stage training on the default needle world; accuracy should climb
    from the 1/4 chance floor.
``pseudo_ablation``
    two-stage training on labeled and unlabeled needles plus global questions,
    some of which show a distracting blob. The self-confirm penalty is the only
    signal against zooming when the coarse gist already answers.
``shaping_ablation``
    stage-1 training where a coarse gist answers 70% of the time and a zoomed
    clip is read correctly half the time. Needles are short, so the IoU of a
    correct window is small; only the hard overlap bonus makes grounding worth
    more than the shortcut.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .config import EngineConfig
from .harness.train import MetricsRow, TrainResult, run_train_toy
from .policy.toy import FEATURES, ToyPolicyParams
from .synthetic import WorldConfig, make_corpus

SEEDS = (0, 1, 2, 3, 4)


@dataclass
class RunSummary:
    seed: int
    arm: str
    rows: list[MetricsRow]
    params: ToyPolicyParams

    def window(self, column: str, lo: int, hi: int | None = None) -> float:
        xs = [getattr(r, column) for r in self.rows[lo:hi]]
        xs = [x for x in xs if not math.isnan(x)]
        return float(np.mean(xs)) if xs else math.nan


@dataclass
class ExperimentResult:
    name: str
    runs: list[RunSummary] = field(default_factory=list)

    def arm(self, arm: str) -> list[RunSummary]:
        return [r for r in self.runs if r.arm == arm]

    def mean(self, arm: str, column: str, lo: int, hi: int | None = None) -> float:
        return float(np.mean([r.window(column, lo, hi) for r in self.arm(arm)]))


def _toy_cfg(seed: int, **overrides) -> EngineConfig:
    base = {"grpo.batch_size": 8, "curriculum.max_degenerate_batches": 10_000, "seed": seed}
    return EngineConfig().replace(**{**base, **overrides})


def _run(name_arm: str, seed: int, data, cfg: EngineConfig, steps: int, params=None) -> RunSummary:
    res: TrainResult = run_train_toy(data, cfg, steps, params=params)
    return RunSummary(seed, name_arm, res.rows, res.params)


def closed_loop(seeds: Sequence[int] = SEEDS, steps: int = 200, n_samples: int = 400) -> ExperimentResult:
    out = ExperimentResult("closed_loop")
    for seed in seeds:
        data = make_corpus(n_samples, seed=seed, labeled_fraction=0.5)
        out.runs.append(_run("default", seed, data, _toy_cfg(seed), steps))
    return out


PSEUDO_WORLD = WorldConfig(distractor_fraction=0.5)


def pseudo_ablation(seeds: Sequence[int] = SEEDS, steps: int = 150, n_samples: int = 400) -> ExperimentResult:
    out = ExperimentResult("pseudo_ablation")
    for seed in seeds:
        data = make_corpus(n_samples, seed=seed, labeled_fraction=0.5, gist_fraction=0.4, cfg=PSEUDO_WORLD)
        for arm, on in (("pseudo_off", False), ("pseudo_on", True)):
            cfg = _toy_cfg(seed, **{"gate.use_pseudo": on, "curriculum.stage1_steps": 50})
            out.runs.append(_run(arm, seed, data, cfg, steps))
    return out


SHAPING_WORLD = WorldConfig(gist_reliability=1.0, needle_fraction=(0.05, 0.15))
GIST_READ = 0.7  # chance the frozen reader answers the gist letter from the coarse view
CLIP_READ = 0.5  # chance it reads the zoomed sign correctly


def shaping_prior(gist_read: float = GIST_READ, clip_read: float = CLIP_READ) -> ToyPolicyParams:
    """Starting point for the shaping ablation.

    Perception weights are set so that, among the four answers, the right
    letter gets ``gist_read`` (coarse gist) or ``clip_read`` (zoomed clip) of
    the mass. Grounding on the blob is as likely as answering at the start,
    and repeated grounding and babbling are unlikely.
    """
    w = dict.fromkeys(FEATURES, 0.0)
    w["answer_gist"] = math.log(3 * gist_read / (1 - gist_read))
    w["answer_seen"] = math.log(3 * clip_read / (1 - clip_read))
    w["ground_on_blur"] = math.log(math.exp(w["answer_gist"]) + 3)
    w["reground"] = -6.0
    w["babble"] = -6.0
    return ToyPolicyParams(np.array([w[f] for f in FEATURES]), FEATURES, zoom_hides_gist=True)


def shaping_ablation(seeds: Sequence[int] = SEEDS, steps: int = 150, n_samples: int = 400) -> ExperimentResult:
    out = ExperimentResult("shaping_ablation")
    for seed in seeds:
        data = make_corpus(n_samples, seed=seed, labeled_fraction=1.0, cfg=SHAPING_WORLD)
        for arm, hard in (("soft_only", False), ("soft_hard", True)):
            cfg = _toy_cfg(
                seed,
                **{
                    "curriculum.stage": "stage1",
                    "gate.use_hard": hard,
                    "toy.zoom_hides_gist": True,
                    "toy.frozen": ("answer_seen", "answer_gist"),
                },
            )
            out.runs.append(_run(arm, seed, data, cfg, steps, shaping_prior()))
    return out
