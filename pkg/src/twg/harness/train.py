"""Closed-loop training driver for the toy policy.

Each step: draw a batch from the curriculum, roll out G trajectories per
sample, score them, resample groups with no reward variance, standardize
rewards within groups, and take one finite-difference step on the GRPO
objective. One metrics row is emitted per step.
"""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..config import EngineConfig
from ..data import CurriculumStage, Sample, Stage, curriculum_batches
from ..grpo import Group, dynamic_resample, kl_terms, toy_policy_step, with_advantages
from ..policy.toy import ToyBatch, ToyPolicy, ToyPolicyParams
from ..rewards import RewardBreakdown, total_reward
from ..rollout import Trajectory, run_many, run_trajectory

log = logging.getLogger(__name__)


@dataclass
class MetricsRow:
    step: int
    stage: str
    n_groups: int
    n_trajectories: int
    mean_r_acc: float
    mean_r_format: float
    mean_iou: float
    mean_r_soft: float
    mean_r_hard: float
    mean_r_grounding: float
    mean_r_pseudo: float
    mean_total: float
    gated_fraction: float
    mean_turns: float
    mean_groundings: float
    grounded_fraction: float
    resampled_groups: int
    abandoned_groups: int
    kl_to_ref: float


METRICS_COLUMNS = tuple(f.name for f in fields(MetricsRow))


def _mean(xs) -> float:
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else math.nan


def metrics_row(step: int, stage: str, groups: Sequence[Group], resampled: int, abandoned: int, kl: float) -> MetricsRow:
    trajs = [t for g in groups for t in g.trajectories]
    bds = [b for g in groups for b in g.breakdowns]
    return MetricsRow(
        step=step,
        stage=stage,
        n_groups=len(groups),
        n_trajectories=len(trajs),
        mean_r_acc=_mean(b.r_acc for b in bds),
        mean_r_format=_mean(b.r_format for b in bds),
        mean_iou=_mean(b.iou for b in bds),
        mean_r_soft=_mean(b.r_soft for b in bds),
        mean_r_hard=_mean(b.r_hard for b in bds),
        mean_r_grounding=_mean(b.r_grounding for b in bds),
        mean_r_pseudo=_mean(b.r_pseudo for b in bds),
        mean_total=_mean(b.total for b in bds),
        gated_fraction=_mean(float(b.gated) for b in bds),
        mean_turns=_mean(len(t.turns) for t in trajs),
        mean_groundings=_mean(t.n_groundings for t in trajs),
        grounded_fraction=_mean(float(t.n_groundings > 0) for t in trajs),
        resampled_groups=resampled,
        abandoned_groups=abandoned,
        kl_to_ref=kl,
    )


def emit_metrics(rows: Sequence[MetricsRow], path: str | Path) -> Path:
    """Write rows as CSV with the fixed ``METRICS_COLUMNS`` order."""
    if not rows:
        raise ValueError("no metrics rows")
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for r in rows:
            d = asdict(r)
            w.writerow([_fmt(d[c]) for c in METRICS_COLUMNS])
    return path


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def rollout_group(policy: ToyPolicy, sample: Sample, cfg: EngineConfig, seeds: Sequence[int]) -> Group:
    trajs = run_many(policy, [(sample, s) for s in seeds], cfg, cfg.train_sampling)
    bds = [total_reward(t, sample, policy, cfg.gate, cfg.views) for t in trajs]
    return Group(sample.sample_id, list(trajs), [b.total for b in bds], bds)


def stage_at(cfg: EngineConfig, step: int) -> Stage:
    mode = cfg.curriculum.stage
    if mode == "stage1":
        return Stage.STAGE1
    if mode == "stage2":
        return Stage.STAGE2
    if mode == "two_stage":
        return Stage.STAGE1 if step < cfg.curriculum.stage1_steps else Stage.STAGE2
    raise ValueError(f"unknown curriculum mode {mode!r}")


@dataclass
class TrainResult:
    params: ToyPolicyParams
    rows: list[MetricsRow]
    stopped_early: bool = False


def run_train_toy(
    dataset: Sequence[Sample],
    cfg: EngineConfig,
    steps: int,
    params: ToyPolicyParams | None = None,
    metrics_path: str | Path | None = None,
) -> TrainResult:
    params = params or ToyPolicyParams.zeros(cfg.toy.features, cfg.toy.windows, cfg.toy.zoom_hides_gist)
    ref = params.theta.copy()
    policy = ToyPolicy(params)
    G = cfg.grpo.group_size
    streams = {}
    rows: list[MetricsRow] = []
    degenerate_run = 0
    stopped = False

    for step in range(steps):
        stage = stage_at(cfg, step)
        if stage not in streams:
            streams[stage] = curriculum_batches(
                CurriculumStage.of(stage), dataset, cfg.grpo.batch_size, _seed(cfg.seed, 17, list(Stage).index(stage))
            )
        batch = next(streams[stage])

        groups = [
            rollout_group(policy, s, cfg, [_seed(cfg.seed, step, b, i) for i in range(G)])
            for b, s in enumerate(batch)
        ]
        by_id = {s.sample_id: (b, s) for b, s in enumerate(batch)}

        def resample(g: Group, attempt: int) -> Group:
            b, s = by_id[g.sample_id]
            return rollout_group(policy, s, cfg, [_seed(cfg.seed, step, b, i, attempt) for i in range(G)])

        abandoned: list = []
        kept = dynamic_resample(groups, cfg.grpo.resample_budget, resample, abandoned)
        resampled = sum(g.resample_attempts > 0 for g in kept)

        kl = math.nan
        if kept:
            degenerate_run = 0
            kept = [with_advantages(g, cfg.grpo.std) for g in kept]
            tb = ToyBatch.from_trajectories(policy, [t for g in kept for t in g.trajectories])
            old = tb.logp(params.theta)
            refl = tb.logp(ref)
            kl = float(np.mean(kl_terms(old, refl, cfg.grpo.kl_estimator, cfg.grpo.kl_clip)))
            off = 0
            for g in kept:
                g.logp_old = old[off : off + g.size].tolist()
                g.logp_ref = refl[off : off + g.size].tolist()
                off += g.size
            params = toy_policy_step(params, kept, cfg.grpo, cfg.toy.step_size, cfg.toy.fd_eps, len(batch), cfg.toy.frozen)
            policy.set_params(params)
        else:
            degenerate_run += 1

        rows.append(metrics_row(step, stage.value, groups, resampled, len(abandoned), kl))
        if degenerate_run >= cfg.curriculum.max_degenerate_batches:
            log.warning("stopping at step %d: %d consecutive batches without learning signal", step, degenerate_run)
            stopped = True
            break

    if metrics_path is not None:
        emit_metrics(rows, metrics_path)
    return TrainResult(params, rows, stopped)


def sampled_trajectories(policy: ToyPolicy, samples: Sequence[Sample], cfg: EngineConfig, seed: int, n: int = 1
                         ) -> list[tuple[Sample, Trajectory, RewardBreakdown]]:
    """Sample ``n`` training-temperature rollouts per sample and score them (for post-training analysis)."""
    out = []
    for b, s in enumerate(samples):
        for i in range(n):
            t = run_trajectory(policy, s, cfg, cfg.train_sampling, _seed(seed, 99, b, i))
            out.append((s, t, total_reward(t, s, policy, cfg.gate, cfg.views)))
    return out
