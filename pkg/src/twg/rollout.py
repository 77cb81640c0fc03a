"""Multi-turn think-with-grounding rollouts.

The context starts with the coarse view and the initial prompt. Each turn the
policy sees the whole context and either grounds (the named clip is cut,
re-sampled as a fine view and appended with an intermediate prompt), answers
(stop), or produces something unparseable (stop). After K calls without an
answer the trajectory stops with ``MAX_TURNS``.
"""

from __future__ import annotations

import enum
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .config import EngineConfig
from .policy.base import GenerationRequest, Message, Policy, SamplingParams
from .prompts import TEMPLATE_VERSION, PromptKind, PromptRole, render_prompt
from .tagfmt import AnswerAction, GroundAction, ParsedTurn, TurnKind, parse_turn_output
from .videorep import Grain, VideoMeta, ViewSpec, coarse_view, fine_view, ground_to_clip

if TYPE_CHECKING:
    from .data import Sample


class StopReason(str, enum.Enum):
    ANSWERED = "answered"
    MALFORMED = "malformed"
    MAX_TURNS = "max_turns"


@dataclass(frozen=True)
class Turn:
    parsed: ParsedTurn
    prompt_used: PromptKind
    injected_view: ViewSpec | None = None
    next_prompt: PromptKind | None = None
    logprob: float | None = None

    def __post_init__(self):
        grounding = self.parsed.kind is TurnKind.GROUNDING
        if grounding != (self.injected_view is not None):
            raise ValueError("exactly the grounding turns carry an injected view")
        if grounding and self.injected_view.grain is not Grain.FINE:
            raise ValueError("injected views must be fine-grained")

    @property
    def raw(self) -> str:
        return self.parsed.raw


@dataclass(frozen=True)
class Trajectory:
    sample_id: str
    video: VideoMeta
    initial_view: ViewSpec
    initial_prompt: PromptKind
    turns: tuple[Turn, ...]
    stop: StopReason
    K: int
    seed: int = 0
    template_version: str = TEMPLATE_VERSION

    def __post_init__(self):
        check_trajectory(self)

    @property
    def final_answer(self) -> AnswerAction | None:
        if self.stop is StopReason.ANSWERED:
            return self.turns[-1].parsed.answer
        return None

    @property
    def groundings(self) -> list[GroundAction]:
        return [t.parsed.ground for t in self.turns if t.parsed.kind is TurnKind.GROUNDING]

    @property
    def n_groundings(self) -> int:
        return len(self.groundings)

    @property
    def last_grounding_turn(self) -> Turn | None:
        for t in reversed(self.turns):
            if t.parsed.kind is TurnKind.GROUNDING:
                return t
        return None

    def context_before(self, i: int) -> tuple[Message, ...]:
        """The exact context the policy saw when producing turn ``i``."""
        msgs = [Message("user", render_prompt(self.initial_prompt), (self.initial_view,), self.initial_prompt)]
        for t in self.turns[:i]:
            msgs.append(Message("assistant", t.raw))
            if t.injected_view is not None:
                msgs.append(Message("user", render_prompt(t.next_prompt), (t.injected_view,), t.next_prompt))
        return tuple(msgs)


class TrajectoryInvariantError(AssertionError):
    pass


def check_trajectory(traj: Trajectory) -> None:
    turns = traj.turns
    n = len(turns)

    def fail(msg):
        raise TrajectoryInvariantError(f"{traj.sample_id}: {msg}")

    if traj.initial_view.grain is not Grain.COARSE:
        fail("initial view must be coarse")
    if traj.initial_prompt.role is not PromptRole.INITIAL:
        fail("first prompt must be the initial prompt")
    if not 1 <= n <= traj.K:
        fail(f"{n} turns outside [1, {traj.K}]")
    if any(t.parsed.kind is not TurnKind.GROUNDING for t in turns[:-1]):
        fail("every turn before the last must be a grounding turn")
    last = turns[-1].parsed.kind
    expected = {
        TurnKind.ANSWERING: StopReason.ANSWERED,
        TurnKind.MALFORMED: StopReason.MALFORMED,
        TurnKind.GROUNDING: StopReason.MAX_TURNS,
    }[last]
    if traj.stop is not expected:
        fail(f"stop {traj.stop.value} inconsistent with last turn {last.value}")
    if traj.stop is StopReason.MAX_TURNS and n != traj.K:
        fail("max-turn stop before K turns")
    if any(t.prompt_used.role is PromptRole.INITIAL for t in turns[1:]):
        fail("initial prompt may only open the trajectory")


def make_prompt(sample: Sample, role: PromptRole, cfg: EngineConfig, remaining: int | None = None,
                grounded: tuple[int, int] | None = None) -> PromptKind:
    return PromptKind(
        role=role,
        question=sample.question,
        options=tuple(sample.options),
        coarse_frames=cfg.views.coarse_frames,
        remaining_turns=remaining,
        grounded=grounded,
    )


def _turn_seed(rng_seed: int, k: int) -> int:
    return int(np.random.SeedSequence([rng_seed, k]).generate_state(1)[0])


def run_trajectory(
    policy: Policy,
    sample: Sample,
    cfg: EngineConfig,
    sampling: SamplingParams,
    rng_seed: int,
) -> Trajectory:
    v = cfg.views
    video = sample.video
    view0 = coarse_view(video, v.coarse_frames, v.coarse_tokens)
    p0 = make_prompt(sample, PromptRole.INITIAL, cfg)
    context = [Message("user", render_prompt(p0), (view0,), p0)]
    turns: list[Turn] = []
    prompt = p0
    stop = StopReason.MAX_TURNS

    for k in range(cfg.K):
        req = GenerationRequest(tuple(context), sampling, _turn_seed(rng_seed, k))
        resp = policy.generate(req)
        parsed = parse_turn_output(resp.text, v.coarse_frames)
        context.append(Message("assistant", resp.text))

        if parsed.kind is TurnKind.GROUNDING:
            g = parsed.ground
            clip = ground_to_clip(video, g, v.coarse_frames)
            view = fine_view(clip, v.fine_frames, v.fine_tokens)
            nxt = make_prompt(sample, PromptRole.INTERMEDIATE, cfg, cfg.K - k - 1, (g.start_frame, g.end_frame))
            turns.append(Turn(parsed, prompt, view, nxt, resp.total_logprob))
            context.append(Message("user", render_prompt(nxt), (view,), nxt))
            prompt = nxt
            continue

        turns.append(Turn(parsed, prompt, None, None, resp.total_logprob))
        stop = StopReason.ANSWERED if parsed.kind is TurnKind.ANSWERING else StopReason.MALFORMED
        break

    return Trajectory(
        sample_id=sample.sample_id,
        video=video,
        initial_view=view0,
        initial_prompt=p0,
        turns=tuple(turns),
        stop=stop,
        K=cfg.K,
        seed=rng_seed,
        template_version=cfg.template_version,
    )


def run_many(
    policy: Policy,
    jobs: Sequence[tuple[Sample, int]],
    cfg: EngineConfig,
    sampling: SamplingParams,
) -> list[Trajectory]:
    """Roll out ``(sample, seed)`` jobs on up to ``cfg.workers`` threads; output keeps job order."""
    if cfg.workers == 1 or len(jobs) <= 1:
        return [run_trajectory(policy, s, cfg, sampling, seed) for s, seed in jobs]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        futs = [pool.submit(run_trajectory, policy, s, cfg, sampling, seed) for s, seed in jobs]
        return [f.result() for f in futs]
