"""Coarse/fine frame sampling plans and grounding-to-clip conversion.

Videos are metadata plus opaque frame attachments keyed by timestamp; nothing
is decoded here. A view samples ``frame_count`` midpoint timestamps over a time
range and each sampled frame stands for its whole segment, so it carries every
attachment whose timestamp falls inside that segment.
"""

from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field

from .tagfmt import GroundAction


class Grain(str, enum.Enum):
    COARSE = "coarse"
    FINE = "fine"


@dataclass(frozen=True)
class VideoMeta:
    video_id: str
    duration: float
    source_uri: str = ""
    # sorted (timestamp_s, handle) pairs
    frame_attachments: tuple[tuple[float, str], ...] = ()

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"video {self.video_id!r}: duration must be positive, got {self.duration}")
        atts = tuple(sorted((float(t), str(h)) for t, h in self.frame_attachments))
        for t, _ in atts:
            if not 0.0 <= t <= self.duration:
                raise ValueError(f"video {self.video_id!r}: attachment at {t}s outside [0, {self.duration}]")
        object.__setattr__(self, "frame_attachments", atts)

    def attachments_between(self, lo: float, hi: float, include_hi: bool = False) -> tuple[str, ...]:
        times = [t for t, _ in self.frame_attachments]
        i = bisect.bisect_left(times, lo)
        j = bisect.bisect_right(times, hi) if include_hi else bisect.bisect_left(times, hi)
        return tuple(h for _, h in self.frame_attachments[i:j])


@dataclass(frozen=True)
class ClipSpec:
    start_s: float
    end_s: float
    parent: VideoMeta = field(compare=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.start_s < self.end_s <= self.parent.duration:
            raise ValueError(
                f"clip [{self.start_s}, {self.end_s}] invalid for duration {self.parent.duration}"
            )


@dataclass(frozen=True)
class ViewSpec:
    grain: Grain
    frame_count: int
    tokens_per_frame: int
    timestamps: tuple[float, ...]
    start_s: float
    end_s: float
    video_id: str = ""
    source_uri: str = ""
    # attachment handles covered by each sampled frame, parallel to timestamps
    frames: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        if self.frame_count < 1 or self.tokens_per_frame < 1:
            raise ValueError("frame_count and tokens_per_frame must be positive")
        if len(self.timestamps) != self.frame_count:
            raise ValueError("timestamps length must equal frame_count")
        if any(b <= a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise ValueError("timestamps must be strictly increasing")
        if self.timestamps and not (self.start_s <= self.timestamps[0] and self.timestamps[-1] <= self.end_s):
            raise ValueError("timestamps must lie inside the view range")

    def to_dict(self) -> dict:
        return {
            "grain": self.grain.value,
            "frame_count": self.frame_count,
            "tokens_per_frame": self.tokens_per_frame,
            "timestamps": list(self.timestamps),
            "start_s": self.start_s,
            "end_s": self.end_s,
            "video_id": self.video_id,
            "source_uri": self.source_uri,
            "frames": [list(f) for f in self.frames],
        }

    @classmethod
    def from_dict(cls, d: dict) -> ViewSpec:
        return cls(
            grain=Grain(d["grain"]),
            frame_count=int(d["frame_count"]),
            tokens_per_frame=int(d["tokens_per_frame"]),
            timestamps=tuple(float(t) for t in d["timestamps"]),
            start_s=float(d["start_s"]),
            end_s=float(d["end_s"]),
            video_id=d.get("video_id", ""),
            source_uri=d.get("source_uri", ""),
            frames=tuple(tuple(f) for f in d.get("frames", ())),
        )


def _check_budget(F: int, f: int) -> None:
    if not (isinstance(F, int) and F >= 1):
        raise ValueError(f"frame count must be a positive integer, got {F!r}")
    if not (isinstance(f, int) and f >= 1):
        raise ValueError(f"tokens per frame must be a positive integer, got {f!r}")


def _plan(video: VideoMeta, start: float, end: float, F: int, f: int, grain: Grain) -> ViewSpec:
    width = end - start
    timestamps = tuple(start + (i + 0.5) * width / F for i in range(F))
    edges = [start + i * width / F for i in range(F)] + [end]
    frames = tuple(
        video.attachments_between(edges[i], edges[i + 1], include_hi=(i == F - 1)) for i in range(F)
    )
    return ViewSpec(
        grain=grain,
        frame_count=F,
        tokens_per_frame=f,
        timestamps=timestamps,
        start_s=start,
        end_s=end,
        video_id=video.video_id,
        source_uri=video.source_uri,
        frames=frames,
    )


def coarse_view(video: VideoMeta, F: int, f: int) -> ViewSpec:
    _check_budget(F, f)
    return _plan(video, 0.0, video.duration, F, f, Grain.COARSE)


def fine_view(clip: ClipSpec, F: int, f: int) -> ViewSpec:
    _check_budget(F, f)
    return _plan(clip.parent, clip.start_s, clip.end_s, F, f, Grain.FINE)


def frames_to_seconds(start_frame: int, end_frame: int, duration: float, f_coarse: int) -> tuple[float, float]:
    """Seconds covered by coarse segments ``start_frame..end_frame`` inclusive."""
    return start_frame * duration / f_coarse, (end_frame + 1) * duration / f_coarse


def ground_to_clip(video: VideoMeta, g: GroundAction, F_coarse: int) -> ClipSpec:
    if F_coarse < 1:
        raise ValueError("F_coarse must be positive")
    if not g.valid_for(F_coarse):
        raise ValueError(f"grounding {g} outside [0, {F_coarse - 1}]")
    start, end = frames_to_seconds(g.start_frame, g.end_frame, video.duration, F_coarse)
    if g.end_frame == F_coarse - 1:
        # F*d/F is not always exactly d in floating point
        end = video.duration
    return ClipSpec(start, end, video)
