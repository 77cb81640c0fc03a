"""JSON-lines trajectory log (format ``twg.trajectory.v1``).

One object per line::

    {"format": "twg.trajectory.v1", "sample_id": "...", "template_version": "twg-prompts/1",
     "seed": 123, "K": 3, "stop": "answered" | "malformed" | "max_turns",
     "video": {"video_id": "...", "duration_s": 640.0, "uri": "..."},
     "initial_view": {ViewSpec}, "initial_prompt": {PromptKind},
     "turns": [{"raw": "...", "kind": "grounding" | "answering" | "malformed",
                "think": "..." | null, "ground": [s, e] | null, "answer": "..." | null,
                "prompt_used": {PromptKind}, "injected_view": {ViewSpec} | null,
                "next_prompt": {PromptKind} | null, "logprob": float | null}],
     "n_groundings": 1, "final_answer": "B" | null,
     "reward": {RewardBreakdown} | null, "retry_count": 0}

A sample whose rollout failed at the transport level is logged as
``{"format": ..., "sample_id": "...", "failed": true, "error": "..."}``.
"""

from __future__ import annotations

import json
import queue
import threading
from collections.abc import Iterable, Iterator
from pathlib import Path

from ..prompts import PromptKind
from ..rewards import RewardBreakdown
from ..rollout import StopReason, Trajectory, Turn
from ..tagfmt import TurnKind, parse_turn_output
from ..videorep import VideoMeta, ViewSpec

LOG_FORMAT = "twg.trajectory.v1"


def trajectory_record(
    traj: Trajectory, reward: RewardBreakdown | None = None, retry_count: int = 0
) -> dict:
    turns = []
    for t in traj.turns:
        p = t.parsed
        turns.append(
            {
                "raw": t.raw,
                "kind": p.kind.value,
                "think": p.think,
                "ground": [p.ground.start_frame, p.ground.end_frame] if p.ground else None,
                "answer": p.answer.answer_text if p.answer else None,
                "prompt_used": t.prompt_used.to_dict(),
                "injected_view": t.injected_view.to_dict() if t.injected_view else None,
                "next_prompt": t.next_prompt.to_dict() if t.next_prompt else None,
                "logprob": t.logprob,
            }
        )
    fa = traj.final_answer
    return {
        "format": LOG_FORMAT,
        "sample_id": traj.sample_id,
        "template_version": traj.template_version,
        "seed": traj.seed,
        "K": traj.K,
        "stop": traj.stop.value,
        "video": {"video_id": traj.video.video_id, "duration_s": traj.video.duration, "uri": traj.video.source_uri},
        "initial_view": traj.initial_view.to_dict(),
        "initial_prompt": traj.initial_prompt.to_dict(),
        "turns": turns,
        "n_groundings": traj.n_groundings,
        "final_answer": fa.answer_text if fa else None,
        "reward": reward.to_dict() if reward else None,
        "retry_count": retry_count,
    }


def failure_record(sample_id: str, error: str) -> dict:
    return {"format": LOG_FORMAT, "sample_id": sample_id, "failed": True, "error": error}


class LogFormatError(ValueError):
    pass


def trajectory_from_record(rec: dict) -> Trajectory:
    """Rebuild a trajectory; each turn is re-parsed from its raw text and checked against the logged form."""
    if rec.get("format") != LOG_FORMAT:
        raise LogFormatError(f"unknown log format {rec.get('format')!r}")
    v = rec["video"]
    video = VideoMeta(v["video_id"], float(v["duration_s"]), v.get("uri", ""))
    view0 = ViewSpec.from_dict(rec["initial_view"])
    turns = []
    for i, t in enumerate(rec["turns"]):
        parsed = parse_turn_output(t["raw"], view0.frame_count)
        if parsed.kind is not TurnKind(t["kind"]):
            raise LogFormatError(f"{rec['sample_id']} turn {i}: logged kind {t['kind']} but raw parses as {parsed.kind.value}")
        turns.append(
            Turn(
                parsed=parsed,
                prompt_used=PromptKind.from_dict(t["prompt_used"]),
                injected_view=ViewSpec.from_dict(t["injected_view"]) if t["injected_view"] else None,
                next_prompt=PromptKind.from_dict(t["next_prompt"]) if t["next_prompt"] else None,
                logprob=t.get("logprob"),
            )
        )
    return Trajectory(
        sample_id=rec["sample_id"],
        video=video,
        initial_view=view0,
        initial_prompt=PromptKind.from_dict(rec["initial_prompt"]),
        turns=tuple(turns),
        stop=StopReason(rec["stop"]),
        K=int(rec["K"]),
        seed=int(rec["seed"]),
        template_version=rec["template_version"],
    )


def write_jsonl(records: Iterable[dict], path: str | Path) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path) as f:
        for line in f:
            if line.strip():
                yield json.loads(line)


class LogWriter:
    """Single background writer fed through an ordered queue."""

    _STOP = object()

    def __init__(self, path: str | Path):
        self._f = open(path, "w")
        self._q: queue.Queue = queue.Queue()
        self._t = threading.Thread(target=self._run, daemon=True)
        self._t.start()

    def _run(self):
        while True:
            item = self._q.get()
            if item is self._STOP:
                break
            self._f.write(json.dumps(item, sort_keys=True) + "\n")
        self._f.close()

    def put(self, record: dict) -> None:
        self._q.put(record)

    def close(self) -> None:
        self._q.put(self._STOP)
        self._t.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
