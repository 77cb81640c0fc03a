"""Sample schema, corpus filters, and the two-stage curriculum stream.

Dataset files are JSON lines, one sample per line (schema ``twg.sample.v1``)::

    {"schema": "twg.sample.v1",                     # optional; must match if present
     "sample_id": "nextgqa-0001",
     "video": {"video_id": "v1", "duration_s": 63.5, "uri": "file:///videos/v1.mp4",
               "attachments": [{"t": 12.0, "handle": "..."}]},   # attachments optional
     "question": "Why did the boy pick up the ball?",
     "options": ["...", "...", "...", "..."],
     "answer_key": "B",
     "grounding": {"start_s": 10.0, "end_s": 21.5},   # optional
     "source": "NextGQA"}                             # NextGQA | CGBench | GeneralQA | Synthetic
"""

from __future__ import annotations

import enum
import json
import logging
import string
from collections import Counter
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rewards import Interval, temporal_iou
from .videorep import VideoMeta

__all__ = [
    "Interval",
    "Source",
    "Sample",
    "Stage",
    "CurriculumStage",
    "DatasetError",
    "DatasetStats",
    "SCHEMA_TAG",
    "load_samples",
    "parse_sample",
    "sample_to_record",
    "dump_samples",
    "filter_min_duration",
    "filter_label_coverage",
    "curriculum_batches",
    "dataset_stats",
]

log = logging.getLogger(__name__)

SCHEMA_TAG = "twg.sample.v1"
DURATION_BINS = (0.0, 20.0, 60.0, 180.0, 600.0, 1800.0, 3600.0)


class Source(str, enum.Enum):
    NEXTGQA = "NextGQA"
    CGBENCH = "CGBench"
    GENERALQA = "GeneralQA"
    SYNTHETIC = "Synthetic"


@dataclass(frozen=True)
class Sample:
    sample_id: str
    video: VideoMeta
    question: str
    options: tuple[str, ...]
    answer_key: str
    gt_grounding: Interval | None = None
    source: Source = Source.GENERALQA

    def __post_init__(self):
        if not self.question.strip():
            raise ValueError("question must be non-empty")
        if len(self.options) < 2:
            raise ValueError("need at least two options")
        letters = string.ascii_uppercase[: len(self.options)]
        if len(self.answer_key) != 1 or self.answer_key not in letters:
            raise ValueError(f"answer_key {self.answer_key!r} does not index one of {len(self.options)} options")
        g = self.gt_grounding
        if g is not None and not (0.0 <= g.start_s <= g.end_s <= self.video.duration):
            raise ValueError(f"grounding [{g.start_s}, {g.end_s}] outside [0, {self.video.duration}]")

    @property
    def labeled(self) -> bool:
        return self.gt_grounding is not None


class DatasetError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


def parse_sample(rec: dict) -> Sample:
    if not isinstance(rec, dict):
        raise ValueError("record is not a JSON object")
    schema = rec.get("schema", SCHEMA_TAG)
    if schema != SCHEMA_TAG:
        raise ValueError(f"unknown schema {schema!r}")
    missing = [k for k in ("sample_id", "video", "question", "options", "answer_key", "source") if k not in rec]
    if missing:
        raise ValueError(f"missing fields: {', '.join(missing)}")
    v = rec["video"]
    atts = tuple((float(a["t"]), str(a["handle"])) for a in v.get("attachments", ()))
    video = VideoMeta(str(v["video_id"]), float(v["duration_s"]), str(v.get("uri", "")), atts)
    g = rec.get("grounding")
    grounding = Interval(float(g["start_s"]), float(g["end_s"])) if g is not None else None
    if not isinstance(rec["options"], list) or not all(isinstance(o, str) for o in rec["options"]):
        raise ValueError("options must be a list of strings")
    return Sample(
        sample_id=str(rec["sample_id"]),
        video=video,
        question=str(rec["question"]),
        options=tuple(rec["options"]),
        answer_key=str(rec["answer_key"]),
        gt_grounding=grounding,
        source=Source(rec["source"]),
    )


def sample_to_record(s: Sample) -> dict:
    rec = {
        "schema": SCHEMA_TAG,
        "sample_id": s.sample_id,
        "video": {"video_id": s.video.video_id, "duration_s": s.video.duration, "uri": s.video.source_uri},
        "question": s.question,
        "options": list(s.options),
        "answer_key": s.answer_key,
        "source": s.source.value,
    }
    if s.video.frame_attachments:
        rec["video"]["attachments"] = [{"t": t, "handle": h} for t, h in s.video.frame_attachments]
    if s.gt_grounding is not None:
        rec["grounding"] = {"start_s": s.gt_grounding.start_s, "end_s": s.gt_grounding.end_s}
    return rec


def dump_samples(samples: Iterable[Sample], path: str | Path) -> None:
    with open(path, "w") as f:
        for s in samples:
            f.write(json.dumps(sample_to_record(s), sort_keys=True) + "\n")


def load_samples(path: str | Path) -> list[Sample]:
    """Read and validate a dataset file; every bad line is reported, then DatasetError is raised."""
    samples, problems, seen = [], [], {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                s = parse_sample(json.loads(line))
            except (ValueError, KeyError, TypeError) as e:
                problems.append(f"line {lineno}: {e}")
                continue
            if s.sample_id in seen:
                problems.append(f"line {lineno}: duplicate sample_id {s.sample_id!r} (first on line {seen[s.sample_id]})")
                continue
            seen[s.sample_id] = lineno
            samples.append(s)
    if problems:
        raise DatasetError(problems)
    return samples


def filter_min_duration(samples: Iterable[Sample], min_s: float = 20.0) -> list[Sample]:
    if min_s <= 0:
        raise ValueError("min_s must be positive")
    return [s for s in samples if s.video.duration >= min_s]


def filter_label_coverage(samples: Iterable[Sample], min_iou: float = 0.01) -> list[Sample]:
    """Drop labeled samples whose label covers too little of the video (IoU with the whole video)."""
    if not 0 < min_iou < 1:
        raise ValueError("min_iou must be in (0, 1)")
    out = []
    for s in samples:
        if s.gt_grounding is not None:
            if temporal_iou(s.gt_grounding, Interval(0.0, s.video.duration)) < min_iou:
                continue
        out.append(s)
    return out


class Stage(str, enum.Enum):
    STAGE1 = "stage1"
    STAGE2 = "stage2"


@dataclass(frozen=True)
class CurriculumStage:
    stage: Stage
    admitted_sources: frozenset[Source] = field(default=frozenset())

    @classmethod
    def stage1(cls) -> CurriculumStage:
        # cold start on short labeled GQA; synthetic labeled samples stand in for it at desk scale
        return cls(Stage.STAGE1, frozenset({Source.NEXTGQA, Source.SYNTHETIC}))

    @classmethod
    def stage2(cls) -> CurriculumStage:
        return cls(Stage.STAGE2, frozenset(Source))

    @classmethod
    def of(cls, stage: Stage | str) -> CurriculumStage:
        return cls.stage1() if Stage(stage) is Stage.STAGE1 else cls.stage2()

    def admits(self, s: Sample) -> bool:
        if s.source not in self.admitted_sources:
            return False
        return s.labeled if self.stage is Stage.STAGE1 else True


def curriculum_batches(
    stage: CurriculumStage,
    samples: Sequence[Sample],
    batch_size: int,
    seed: int,
    source_weights: dict[Source, float] | None = None,
) -> Iterator[list[Sample]]:
    """Endless deterministic stream of batches.

    Default: each epoch is a seeded shuffle of the admitted samples cut into
    disjoint batches (the last one may be short). With ``source_weights``,
    batches are drawn with replacement, each sample weighted by its source.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    pool = [s for s in samples if stage.admits(s)]
    if not pool:
        raise ValueError(f"no samples admitted by {stage.stage.value}")

    if source_weights is not None:
        w = np.array([source_weights.get(s.source, 0.0) for s in pool], dtype=float)
        if w.sum() <= 0:
            raise ValueError("source_weights give zero mass to every admitted sample")
        rng = np.random.default_rng([seed, 1])
        while True:
            idx = rng.choice(len(pool), size=batch_size, replace=True, p=w / w.sum())
            yield [pool[i] for i in idx]

    epoch = 0
    while True:
        order = np.random.default_rng([seed, 0, epoch]).permutation(len(pool))
        for i in range(0, len(pool), batch_size):
            yield [pool[j] for j in order[i : i + batch_size]]
        epoch += 1


@dataclass
class DatasetStats:
    total: int
    per_source: dict[str, int]
    labeled: int
    unlabeled: int
    duration_histogram: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "per_source": dict(sorted(self.per_source.items())),
            "labeled": self.labeled,
            "unlabeled": self.unlabeled,
            "duration_histogram": self.duration_histogram,
        }


def _duration_bin(d: float) -> str:
    for lo, hi in zip(DURATION_BINS, DURATION_BINS[1:]):
        if lo <= d < hi:
            return f"[{lo:g},{hi:g})"
    return f"[{DURATION_BINS[-1]:g},inf)"


def dataset_stats(samples: Iterable[Sample]) -> DatasetStats:
    samples = list(samples)
    hist = {_duration_bin(lo): 0 for lo in DURATION_BINS}
    for s in samples:
        hist[_duration_bin(s.video.duration)] += 1
    labeled = sum(s.labeled for s in samples)
    return DatasetStats(
        total=len(samples),
        per_source=dict(Counter(s.source.value for s in samples)),
        labeled=labeled,
        unlabeled=len(samples) - labeled,
        duration_histogram=hist,
    )
