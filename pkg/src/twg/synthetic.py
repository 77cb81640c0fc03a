"""Synthetic needle-in-a-haystack videos for desk-scale experiments.

Each video carries symbolic frame attachments instead of pixels:

``needle:<L>:<detail>``
    the answer-bearing event; its letter resolves only in views whose
    per-frame token budget is at least ``detail`` (fine views), and shows up
    as an unresolved blob in coarse views.
``gist:<L>``
    holistic evidence, perceivable only from a coarse whole-video view.
``blob``
    a salient but irrelevant event: a blur in coarse views like a needle, and
    nothing legible up close.

Needle samples put the answer in one short window. Gist samples ("global"
questions) have no needle and answer from the coarse view alone; grounding
on them never helps, and with ``distractor_fraction`` some carry a blob that
invites it anyway. Optionally needle samples also carry a noisy gist whose
letter is right with probability ``gist_reliability``, and a share of needles
can be made too small to resolve even in a fine view (``legible_fraction``).
"""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from .data import Interval, Sample, Source
from .videorep import VideoMeta

NEEDLE_DETAIL = 32
ILLEGIBLE_DETAIL = 1024  # beyond any fine-view token budget


@dataclass(frozen=True)
class Evidence:
    kind: str
    letter: str
    detail: int = 0


def encode_handle(ev: Evidence) -> str:
    if ev.kind == "needle":
        return f"needle:{ev.letter}:{ev.detail}"
    if ev.kind == "blob":
        return "blob"
    return f"{ev.kind}:{ev.letter}"


def decode_handle(handle: str) -> Evidence | None:
    parts = handle.split(":")
    if parts[0] == "needle" and len(parts) == 3:
        return Evidence("needle", parts[1], int(parts[2]))
    if parts[0] == "gist" and len(parts) == 2:
        return Evidence("gist", parts[1])
    if handle == "blob":
        return Evidence("blob", "")
    return None


@dataclass(frozen=True)
class WorldConfig:
    n_options: int = 4
    min_duration: float = 320.0
    max_duration: float = 1280.0
    coarse_frames: int = 64
    windows: int = 8
    needle_fraction: tuple[float, float] = (0.25, 0.5)  # of one window
    needle_spacing: float = 1.0  # attachment every this many seconds inside the needle
    gist_frames: int = 16
    gist_reliability: float | None = None  # None: needle samples carry no gist
    legible_fraction: float = 1.0  # share of needles that a fine view resolves
    distractor_fraction: float = 0.0  # share of gist samples that also show a blob


def _needle_sample(rng: np.random.Generator, sid: str, cfg: WorldConfig, labeled: bool, source: Source) -> Sample:
    letters = string.ascii_uppercase[: cfg.n_options]
    duration = float(np.round(rng.uniform(cfg.min_duration, cfg.max_duration), 1))
    key = letters[rng.integers(cfg.n_options)]
    # keep the needle inside one grounding window so the right window fully covers it
    w = int(rng.integers(cfg.windows))
    win = duration / cfg.windows
    length = win * rng.uniform(*cfg.needle_fraction)
    margin = 0.05 * win
    start = w * win + margin + rng.uniform(0.0, win - length - 2 * margin)
    end = start + length
    n_att = max(2, int(length / cfg.needle_spacing))
    detail = NEEDLE_DETAIL if cfg.legible_fraction >= 1.0 or rng.random() < cfg.legible_fraction else ILLEGIBLE_DETAIL
    atts = [(float(t), encode_handle(Evidence("needle", key, detail))) for t in np.linspace(start, end, n_att)]
    if cfg.gist_reliability is not None:
        if rng.random() < cfg.gist_reliability:
            gist = key
        else:
            gist = letters[(letters.index(key) + 1 + rng.integers(cfg.n_options - 1)) % cfg.n_options]
        atts += _gist_attachments(duration, gist, cfg)
    video = VideoMeta(sid, duration, f"synthetic://{sid}", tuple(atts))
    return Sample(
        sample_id=sid,
        video=video,
        question=f"Which letter is written on the sign in video {sid}?",
        options=tuple(f"letter {c}" for c in letters),
        answer_key=key,
        gt_grounding=Interval(float(start), float(end)) if labeled else None,
        source=source,
    )


def _gist_attachments(duration: float, letter: str, cfg: WorldConfig) -> list[tuple[float, str]]:
    h = encode_handle(Evidence("gist", letter))
    return [(float(t), h) for t in np.linspace(0.0, duration, cfg.gist_frames + 2)[1:-1]]


def _gist_sample(rng: np.random.Generator, sid: str, cfg: WorldConfig) -> Sample:
    letters = string.ascii_uppercase[: cfg.n_options]
    duration = float(np.round(rng.uniform(cfg.min_duration, cfg.max_duration), 1))
    key = letters[rng.integers(cfg.n_options)]
    atts = _gist_attachments(duration, key, cfg)
    if cfg.distractor_fraction > 0 and rng.random() < cfg.distractor_fraction:
        win = duration / cfg.windows
        lo = (int(rng.integers(cfg.windows)) + 0.25) * win
        atts += [(float(t), encode_handle(Evidence("blob", ""))) for t in np.linspace(lo, lo + 0.5 * win, 8)]
    video = VideoMeta(sid, duration, f"synthetic://{sid}", tuple(atts))
    return Sample(
        sample_id=sid,
        video=video,
        question=f"What is the overall theme of video {sid}?",
        options=tuple(f"theme {c}" for c in letters),
        answer_key=key,
        gt_grounding=None,
        source=Source.SYNTHETIC,
    )


def make_corpus(
    n: int,
    seed: int = 0,
    labeled_fraction: float = 1.0,
    gist_fraction: float = 0.0,
    cfg: WorldConfig | None = None,
    labeled_source: Source = Source.SYNTHETIC,
    prefix: str = "syn",
) -> list[Sample]:
    """``n`` samples: a ``gist_fraction`` share of global questions, the rest needles.

    Needle samples are labeled (``gt_grounding`` set) with probability
    ``labeled_fraction``.
    """
    cfg = cfg or WorldConfig()
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        sid = f"{prefix}-{seed}-{i:05d}"
        if rng.random() < gist_fraction:
            out.append(_gist_sample(rng, sid, cfg))
        else:
            labeled = bool(rng.random() < labeled_fraction)
            out.append(_needle_sample(rng, sid, cfg, labeled, labeled_source))
    return out
