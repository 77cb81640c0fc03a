from __future__ import annotations

import math
from collections.abc import Callable, Mapping, Sequence
from typing import TYPE_CHECKING

from .base import (
    GenerationRequest,
    GenerationResponse,
    PolicyKind,
    ScriptError,
    rough_token_count,
)

if TYPE_CHECKING:
    from ..rollout import Trajectory

ScriptFn = Callable[[GenerationRequest], str]


class ScriptedPolicy:
    """Deterministic policy replaying fixed outputs.

    ``script`` is either a sequence of outputs indexed by turn, a mapping from
    turn index to output, or a callable receiving the full request (for
    observation-dependent scripts). ``self_confirm`` answers the self-confirm
    query the same way; it may be omitted when no pseudo reward is computed.
    """

    kind = PolicyKind.SCRIPTED
    reports_logprobs = True

    def __init__(
        self,
        script: Sequence[str] | Mapping[int, str] | ScriptFn,
        self_confirm: str | ScriptFn | None = None,
        name: str = "scripted",
    ):
        self.script = script
        self.self_confirm = self_confirm
        self.name = name
        self.calls = 0

    def _lookup(self, turn: int, req: GenerationRequest | None) -> str:
        s = self.script
        if callable(s):
            if req is None:
                raise ScriptError("callable script cannot be replayed without a request")
            return s(req)
        try:
            return s[turn]
        except (IndexError, KeyError):
            raise ScriptError(f"{self.name}: no script entry for turn {turn}") from None

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        self.calls += 1
        if req.is_self_confirm:
            sc = self.self_confirm
            if sc is None:
                raise ScriptError(f"{self.name}: no self-confirm entry")
            text = sc(req) if callable(sc) else sc
        else:
            text = self._lookup(req.turn_index, req)
        return GenerationResponse(text=text, total_logprob=0.0, token_count=rough_token_count(text))

    def score_trajectory(self, traj: Trajectory) -> float:
        if callable(self.script):
            return 0.0
        for i, turn in enumerate(traj.turns):
            try:
                expected = self._lookup(i, None)
            except ScriptError:
                return -math.inf
            if expected != turn.raw:
                return -math.inf
        return 0.0


def always_answer(letter: str, think: str = "the coarse view is enough") -> ScriptedPolicy:
    out = f"<think>{think}</think><answer>{letter}</answer>"
    return ScriptedPolicy(lambda req: out, self_confirm=out, name=f"always-{letter}")
