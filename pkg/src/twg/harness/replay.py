"""Recompute rewards from a trajectory log.

Self-confirm answers are taken from the logged breakdown, so replay makes no
policy calls and is deterministic.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping

from ..config import GateConfig, ViewConfig
from ..data import Sample
from ..policy.scripted import ScriptedPolicy
from ..rewards import RewardBreakdown, total_reward
from .logs import trajectory_from_record


def replay_record(rec: dict, sample: Sample, gate: GateConfig, views: ViewConfig) -> RewardBreakdown:
    traj = trajectory_from_record(rec)
    logged = rec.get("reward") or {}
    recorded = logged.get("self_confirm_text")
    policy = ScriptedPolicy([], self_confirm=recorded, name="replay") if recorded is not None else None
    return total_reward(traj, sample, policy, gate, views)


def replay_rewards(
    records: Iterable[dict],
    samples: Mapping[str, Sample],
    gate: GateConfig,
    views: ViewConfig,
) -> list[tuple[dict, RewardBreakdown]]:
    out = []
    for rec in records:
        if rec.get("failed"):
            continue
        out.append((rec, replay_record(rec, samples[rec["sample_id"]], gate, views)))
    return out


def compare(logged: dict | None, replayed: RewardBreakdown) -> list[str]:
    """Fields where the logged breakdown differs from the replayed one (exact comparison)."""
    if logged is None:
        return ["reward missing from log"]
    mine = replayed.to_dict()
    return [k for k in sorted(set(mine) | set(logged)) if logged.get(k) != mine.get(k)]
