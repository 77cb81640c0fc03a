from __future__ import annotations

import dataclasses
import logging
from collections import Counter, defaultdict
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import EngineConfig
from ..data import Sample
from ..policy.base import Policy, TransportError
from ..rewards import total_reward
from ..rollout import run_trajectory
from ..tagfmt import option_letter
from .logs import failure_record, trajectory_record, write_jsonl

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    n_samples: int
    accuracy: float
    split_accuracy: dict[str, float]
    mean_groundings: float
    grounded_samples: int
    turn_histogram: dict[int, int]
    stop_counts: dict[str, int]
    retries: int
    retried_samples: int
    failed_samples: int
    grounding_counts: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["turn_histogram"] = {str(k): v for k, v in sorted(self.turn_histogram.items())}
        d["grounding_counts"] = {str(k): v for k, v in sorted(self.grounding_counts.items())}
        return d


def report_from_records(records: Iterable[dict], answer_keys: dict[str, str], splits: dict[str, str]) -> EvalReport:
    """Every statistic is a recount over the log records.

    Accuracy counts failed and unanswered samples as wrong.
    """
    records = list(records)
    n = len(records)
    correct = 0
    per_split = defaultdict(lambda: [0, 0])
    turns, stops, groundings = Counter(), Counter(), Counter()
    retries = retried = failed = 0
    for r in records:
        split = splits.get(r["sample_id"], "all")
        per_split[split][1] += 1
        if r.get("failed"):
            failed += 1
            stops["failed"] += 1
            continue
        ok = r["final_answer"] is not None and option_letter(r["final_answer"]) == answer_keys[r["sample_id"]]
        correct += ok
        per_split[split][0] += ok
        turns[len(r["turns"])] += 1
        stops[r["stop"]] += 1
        groundings[r["n_groundings"]] += 1
        retries += r["retry_count"]
        retried += r["retry_count"] > 0
    ok_records = n - failed
    total_groundings = sum(k * v for k, v in groundings.items())
    return EvalReport(
        n_samples=n,
        accuracy=correct / n if n else 0.0,
        split_accuracy={k: c / t for k, (c, t) in sorted(per_split.items())},
        mean_groundings=total_groundings / ok_records if ok_records else 0.0,
        grounded_samples=sum(v for k, v in groundings.items() if k > 0),
        turn_histogram=dict(sorted(turns.items())),
        stop_counts=dict(sorted(stops.items())),
        retries=retries,
        retried_samples=retried,
        failed_samples=failed,
        grounding_counts=dict(sorted(groundings.items())),
    )


def _eval_one(policy: Policy, s: Sample, cfg: EngineConfig, seed: int, score_pseudo: bool) -> dict:
    try:
        traj = run_trajectory(policy, s, cfg, cfg.eval_sampling, seed)
        retries = 0
        # unparseable predictions fall back to training sampling, as in the published protocol
        while traj.final_answer is None and retries < cfg.eval_retries:
            retries += 1
            traj = run_trajectory(policy, s, cfg, cfg.train_sampling, int(np.random.SeedSequence([seed, retries]).generate_state(1)[0]))
        gate = cfg.gate if score_pseudo else dataclasses.replace(cfg.gate, use_pseudo=False)
        reward = total_reward(traj, s, policy, gate, cfg.views)
        return trajectory_record(traj, reward, retries)
    except TransportError as e:
        log.warning("sample %s failed: %s", s.sample_id, e)
        return failure_record(s.sample_id, str(e))


def run_eval(
    policy: Policy,
    dataset: Sequence[Sample],
    cfg: EngineConfig,
    log_path: str | Path | None = None,
    score_pseudo: bool = False,
) -> tuple[EvalReport, list[dict]]:
    """Greedy rollouts over ``dataset``; returns the report and the trajectory records it was computed from."""
    if not dataset:
        raise ValueError("dataset is empty")
    seeds = [int(x) for x in np.random.SeedSequence([cfg.seed, 1]).generate_state(len(dataset))]
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            records = list(pool.map(lambda a: _eval_one(policy, a[0], cfg, a[1], score_pseudo), zip(dataset, seeds)))
    else:
        records = [_eval_one(policy, s, cfg, seed, score_pseudo) for s, seed in zip(dataset, seeds)]
    if log_path is not None:
        write_jsonl(records, log_path)
    keys = {s.sample_id: s.answer_key for s in dataset}
    splits = {s.sample_id: s.source.value for s in dataset}
    return report_from_records(records, keys, splits), records
