"""Versioned prompt templates for the initial, intermediate and self-confirm turns."""

from __future__ import annotations

import enum
import string
from dataclasses import dataclass

TEMPLATE_VERSION = "twg-prompts/1"


class PromptRole(str, enum.Enum):
    INITIAL = "initial"
    INTERMEDIATE = "intermediate"
    SELF_CONFIRM = "self_confirm"


@dataclass(frozen=True)
class PromptKind:
    role: PromptRole
    question: str
    options: tuple[str, ...] = ()
    coarse_frames: int = 64
    remaining_turns: int | None = None
    grounded: tuple[int, int] | None = None

    def to_dict(self) -> dict:
        return {
            "role": self.role.value,
            "question": self.question,
            "options": list(self.options),
            "coarse_frames": self.coarse_frames,
            "remaining_turns": self.remaining_turns,
            "grounded": list(self.grounded) if self.grounded else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> PromptKind:
        g = d.get("grounded")
        return cls(
            role=PromptRole(d["role"]),
            question=d["question"],
            options=tuple(d.get("options", ())),
            coarse_frames=int(d.get("coarse_frames", 64)),
            remaining_turns=d.get("remaining_turns"),
            grounded=tuple(g) if g else None,
        )


def _options_block(options: tuple[str, ...]) -> str:
    return "\n".join(f"({string.ascii_uppercase[i]}) {opt}" for i, opt in enumerate(options))


_FORMAT_RULES = (
    "Think first inside <think></think>. Then take exactly one action:\n"
    "- to inspect a segment more closely, output <ground>START, END</ground> with integer frame "
    "indexes between 0 and {last} of the video above;\n"
    "- to finish, output <answer>X</answer> where X is the letter of your choice."
)


def render_prompt(kind: PromptKind) -> str:
    if not kind.question.strip():
        raise ValueError("question text must be non-empty")
    q = f"Question: {kind.question.strip()}"
    if kind.options:
        q += "\nOptions:\n" + _options_block(kind.options)

    if kind.role is PromptRole.SELF_CONFIRM:
        return (
            "Answer the question using only the video clip above.\n"
            f"{q}\n"
            "Think inside <think></think>, then give the letter of your choice inside <answer></answer>."
        )

    rules = _FORMAT_RULES.format(last=kind.coarse_frames - 1)
    if kind.role is PromptRole.INITIAL:
        return f"The video is shown as {kind.coarse_frames} frames indexed 0 to {kind.coarse_frames - 1}.\n{q}\n{rules}"

    head = "Here is the zoomed-in clip you requested"
    if kind.grounded is not None:
        head += f" (frames {kind.grounded[0]} to {kind.grounded[1]})"
    head += "."
    if kind.remaining_turns is not None:
        head += f" You have {kind.remaining_turns} turn(s) left."
    return f"{head}\n{q}\n{rules}"
