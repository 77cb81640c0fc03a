"""Trajectory rewards: accuracy, format, grounding, self-confirmed pseudo reward, and the gated total.

The total is composed per trajectory:

(a) no grounding action           R = R_acc + R_format
(b) grounding, labeled sample     R = R_acc + R_format + [R_acc > 0] * R_grounding
(c) grounding, unlabeled sample   R = R_acc + R_format + [R_acc > 0] * R_pseudo

with R_grounding = IoU + 0.5 * [IoU > 0] on the last grounding action (in
seconds) and R_pseudo = 0 if the policy, shown only the last grounded clip,
answers correctly, else -gamma.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING

import numpy as np

from .config import GateConfig, ViewConfig
from .policy.base import GenerationRequest, Message, Policy, SamplingParams
from .prompts import PromptKind, PromptRole, render_prompt
from .tagfmt import TurnKind, parse_turn_output
from .videorep import ViewSpec, frames_to_seconds

if TYPE_CHECKING:
    from .data import Sample
    from .rollout import Trajectory

ACC_REWARD = 1.0
FORMAT_REWARD = 0.2
HARD_REWARD = 0.5


@dataclass(frozen=True)
class Interval:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not (math.isfinite(self.start_s) and math.isfinite(self.end_s)):
            raise ValueError("interval bounds must be finite")
        if self.start_s > self.end_s:
            raise ValueError(f"interval start {self.start_s} > end {self.end_s}")

    @property
    def length(self) -> float:
        return self.end_s - self.start_s


def temporal_iou(a: Interval, b: Interval) -> float:
    """|a & b| / |a | b| in seconds. Two zero-length intervals give 0.0."""
    inter = max(0.0, min(a.end_s, b.end_s) - max(a.start_s, b.start_s))
    union = a.length + b.length - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def is_degenerate_pair(a: Interval, b: Interval) -> bool:
    return a.length == 0.0 and b.length == 0.0


def grounding_components(iou: float) -> tuple[float, float]:
    """(soft, hard) grounding terms for a given IoU."""
    return iou, (HARD_REWARD if iou > 0.0 else 0.0)


def grounding_reward(g_last: Interval, g_gt: Interval) -> float:
    soft, hard = grounding_components(temporal_iou(g_last, g_gt))
    return soft + hard


def accuracy_reward(traj: Trajectory, answer_key: str) -> float:
    ans = traj.final_answer
    if ans is None:
        return 0.0
    return ACC_REWARD if ans.letter == answer_key else 0.0


def format_reward(traj: Trajectory) -> float:
    return FORMAT_REWARD if all(t.parsed.is_wellformed for t in traj.turns) else 0.0


def last_grounding_interval(traj: Trajectory, f_coarse: int) -> Interval | None:
    g = traj.groundings[-1] if traj.groundings else None
    if g is None:
        return None
    start, end = frames_to_seconds(g.start_frame, g.end_frame, traj.video.duration, f_coarse)
    if g.end_frame == f_coarse - 1:
        end = traj.video.duration
    return Interval(start, end)


def widen_degenerate(gt: Interval, duration: float, f_coarse: int) -> Interval:
    """A zero-length label becomes the coarse segment that contains it."""
    if gt.length > 0.0:
        return gt
    seg = duration / f_coarse
    i = min(int(gt.start_s // seg), f_coarse - 1)
    end = duration if i == f_coarse - 1 else (i + 1) * seg
    return Interval(i * seg, end)


@dataclass(frozen=True)
class PseudoOutcome:
    reward: float
    text: str
    parsed_ok: bool
    correct: bool


def self_confirm_request(v_last: ViewSpec, question: PromptKind, seed: int = 0) -> GenerationRequest:
    if question.role is not PromptRole.SELF_CONFIRM:
        raise ValueError("self-confirm query needs a SELF_CONFIRM prompt")
    return GenerationRequest(
        (Message("user", render_prompt(question), (v_last,), question),),
        SamplingParams.greedy(),
        seed,
    )


def pseudo_reward(
    policy: Policy,
    v_last: ViewSpec,
    question: PromptKind,
    answer_key: str,
    gamma: float,
    f_coarse: int = 64,
    seed: int = 0,
) -> PseudoOutcome:
    """Ask the policy to answer from the last grounded clip alone (greedy decoding)."""
    resp = policy.generate(self_confirm_request(v_last, question, seed))
    parsed = parse_turn_output(resp.text, f_coarse)
    ok = parsed.kind is TurnKind.ANSWERING
    correct = ok and parsed.answer.letter == answer_key
    return PseudoOutcome(0.0 if correct else -gamma, resp.text, ok, correct)


@dataclass(frozen=True)
class RewardBreakdown:
    case: str  # "a" no grounding, "b" labeled, "c" unlabeled
    r_acc: float
    r_format: float
    total: float
    gated: bool = False
    iou: float | None = None
    r_soft: float | None = None
    r_hard: float | None = None
    r_grounding: float | None = None
    degenerate_iou: bool = False
    r_pseudo: float | None = None
    self_confirm_text: str | None = None
    self_confirm_parsed: bool | None = None

    def __post_init__(self):
        if self.r_grounding is not None and self.r_pseudo is not None:
            raise ValueError("grounding and pseudo rewards are mutually exclusive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RewardBreakdown:
        return cls(**d)


def _pseudo_seed(traj: Trajectory) -> int:
    return int(np.random.SeedSequence([traj.seed, 7919]).generate_state(1)[0])


def total_reward(
    traj: Trajectory,
    sample: Sample,
    policy: Policy | None,
    cfg: GateConfig,
    views: ViewConfig | None = None,
) -> RewardBreakdown:
    views = views or ViewConfig()
    r_acc = accuracy_reward(traj, sample.answer_key)
    r_format = format_reward(traj)
    total = r_acc + r_format
    g_last = last_grounding_interval(traj, views.coarse_frames)
    if g_last is None:
        return RewardBreakdown("a", r_acc, r_format, total)

    gate_open = r_acc > 0.0 or not cfg.gate_enabled
    gated = not gate_open

    if sample.gt_grounding is not None:
        gt = widen_degenerate(sample.gt_grounding, sample.video.duration, views.coarse_frames)
        iou = temporal_iou(g_last, gt)
        soft, hard = grounding_components(iou)
        if not (cfg.use_grounding and cfg.use_soft):
            soft = 0.0
        if not (cfg.use_grounding and cfg.use_hard):
            hard = 0.0
        r_grounding = soft + hard
        if gate_open:
            total = total + r_grounding
        return RewardBreakdown(
            "b", r_acc, r_format, total, gated=gated, iou=iou, r_soft=soft, r_hard=hard,
            r_grounding=r_grounding, degenerate_iou=is_degenerate_pair(g_last, gt),
        )

    if not cfg.use_pseudo:
        return RewardBreakdown("c", r_acc, r_format, total, gated=gated, r_pseudo=0.0)
    if policy is None:
        raise ValueError("pseudo reward needs a policy")
    v_last = traj.last_grounding_turn.injected_view
    question = PromptKind(PromptRole.SELF_CONFIRM, sample.question, tuple(sample.options), views.coarse_frames)
    out = pseudo_reward(policy, v_last, question, sample.answer_key, cfg.gamma, views.coarse_frames, _pseudo_seed(traj))
    if gate_open:
        total = total + out.reward
    return RewardBreakdown(
        "c", r_acc, r_format, total, gated=gated, r_pseudo=out.reward,
        self_confirm_text=out.text, self_confirm_parsed=out.parsed_ok,
    )
