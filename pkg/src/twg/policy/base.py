from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Protocol, runtime_checkable

from ..prompts import PromptKind, PromptRole
from ..videorep import ViewSpec

if TYPE_CHECKING:
    from ..rollout import Trajectory


class PolicyKind(str, enum.Enum):
    SCRIPTED = "scripted"
    REMOTE = "remote"
    TOY = "toy"


class TransportError(RuntimeError):
    """The policy endpoint could not be reached after all retries."""


class ScriptError(RuntimeError):
    """A scripted policy was asked for a turn it has no entry for."""


class Unsupported(RuntimeError):
    """The policy cannot report log-probabilities."""


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 1.0
    top_p: float = 0.9
    top_k: int = 50
    repetition_penalty: float = 1.0
    max_new_tokens: int = 1024

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be positive")
        if self.repetition_penalty <= 0:
            raise ValueError("repetition_penalty must be positive")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be positive")

    @classmethod
    def training(cls) -> SamplingParams:
        return cls(1.0, 0.9, 50, 1.0)

    @classmethod
    def greedy(cls) -> SamplingParams:
        return cls(temperature=0.0)


@dataclass(frozen=True)
class Message:
    role: str  # "user" (environment) or "assistant" (policy)
    text: str
    views: tuple[ViewSpec, ...] = ()
    prompt: PromptKind | None = field(default=None, compare=False)


@dataclass(frozen=True)
class GenerationRequest:
    context: tuple[Message, ...]
    sampling: SamplingParams
    seed: int = 0

    def __post_init__(self):
        if not self.context:
            raise ValueError("context must be non-empty")

    @property
    def turn_index(self) -> int:
        """0-based index of the turn being requested (assistant messages so far)."""
        return sum(1 for m in self.context if m.role == "assistant")

    @property
    def last_prompt(self) -> PromptKind | None:
        for m in reversed(self.context):
            if m.prompt is not None:
                return m.prompt
        return None

    @property
    def is_self_confirm(self) -> bool:
        p = self.last_prompt
        return p is not None and p.role is PromptRole.SELF_CONFIRM


@dataclass(frozen=True)
class GenerationResponse:
    text: str
    total_logprob: float | None = None
    token_count: int = 0

    def __post_init__(self):
        if self.text and self.token_count < 1:
            raise ValueError("token_count must be >= 1 for non-empty text")


def rough_token_count(text: str) -> int:
    return max(1, len(text.split())) if text else 0


@runtime_checkable
class Policy(Protocol):
    kind: PolicyKind
    reports_logprobs: bool

    def generate(self, req: GenerationRequest) -> GenerationResponse: ...

    def score_trajectory(self, traj: Trajectory) -> float: ...
