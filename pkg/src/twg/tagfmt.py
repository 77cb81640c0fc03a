"""Tagged turn grammar shared by the engine and every policy.

A well-formed turn is one think block followed by exactly one action block::

    <think>...</think><ground>START, END</ground>
    <think>...</think><answer>...</answer>

Frame indices in a ground block address the coarse view (0-based). Whitespace
around tags and around the comma is ignored, tag names are lowercase and
case-sensitive, and chatter outside the two blocks is discarded. Anything else
parses to a ``Malformed`` turn; parsing never raises.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

TAGS = ("think", "ground", "answer")

_TAG_RE = re.compile(r"<(/?)(think|ground|answer)>")
_GROUND_RE = re.compile(r"\s*(-?\d+)\s*,\s*(-?\d+)\s*")
_OPTION_RE = re.compile(r"(?<![A-Za-z])([A-Z])(?![A-Za-z])")


class TurnKind(str, enum.Enum):
    GROUNDING = "grounding"
    ANSWERING = "answering"
    MALFORMED = "malformed"


@dataclass(frozen=True)
class GroundAction:
    start_frame: int
    end_frame: int

    def valid_for(self, f_coarse: int) -> bool:
        return 0 <= self.start_frame <= self.end_frame <= f_coarse - 1


@dataclass(frozen=True)
class AnswerAction:
    answer_text: str

    @property
    def letter(self) -> str | None:
        return option_letter(self.answer_text)


@dataclass(frozen=True)
class ParsedTurn:
    kind: TurnKind
    think: str | None = None
    ground: GroundAction | None = None
    answer: AnswerAction | None = None
    # raw text is kept for logs but does not take part in equality
    raw: str = field(default="", compare=False)

    @classmethod
    def grounding(cls, think: str, start: int, end: int) -> ParsedTurn:
        return cls(TurnKind.GROUNDING, think=think, ground=GroundAction(start, end))

    @classmethod
    def answering(cls, think: str, answer: str) -> ParsedTurn:
        return cls(TurnKind.ANSWERING, think=think, answer=AnswerAction(answer))

    @classmethod
    def malformed(cls, raw: str) -> ParsedTurn:
        return cls(TurnKind.MALFORMED, raw=raw)

    @property
    def is_wellformed(self) -> bool:
        return self.kind is not TurnKind.MALFORMED


class RenderError(ValueError):
    pass


def option_letter(text: str) -> str | None:
    """First standalone capital letter in ``text`` ("B", "(B) red", "B." -> "B")."""
    m = _OPTION_RE.search(text)
    return m.group(1) if m else None


def has_tag_delimiter(text: str) -> bool:
    return _TAG_RE.search(text) is not None


def _blocks(text: str) -> list[tuple[str, str]] | None:
    """Split ``text`` into (tag, content) blocks; None if tags are unbalanced or nested."""
    blocks = []
    open_tag = None
    content_start = 0
    for m in _TAG_RE.finditer(text):
        closing, name = m.group(1) == "/", m.group(2)
        if open_tag is None:
            if closing:
                return None
            open_tag, content_start = name, m.end()
        else:
            if not closing or name != open_tag:
                return None
            blocks.append((name, text[content_start : m.start()]))
            open_tag = None
    if open_tag is not None:
        return None
    return blocks


def parse_turn_output(text: str, f_coarse_frames: int) -> ParsedTurn:
    if f_coarse_frames < 1:
        raise ValueError("f_coarse_frames must be >= 1")
    bad = ParsedTurn.malformed(text)
    blocks = _blocks(text)
    if blocks is None or len(blocks) != 2:
        return bad
    (tag0, think), (tag1, body) = blocks
    think = think.strip()
    if tag0 != "think" or not think:
        return bad

    if tag1 == "ground":
        m = _GROUND_RE.fullmatch(body)
        if m is None:
            return bad
        g = GroundAction(int(m.group(1)), int(m.group(2)))
        if not g.valid_for(f_coarse_frames):
            return bad
        return ParsedTurn(TurnKind.GROUNDING, think=think, ground=g, raw=text)

    if tag1 == "answer":
        answer = body.strip()
        if not answer:
            return bad
        return ParsedTurn(TurnKind.ANSWERING, think=think, answer=AnswerAction(answer), raw=text)

    return bad


def render_action(turn: ParsedTurn) -> str:
    if turn.kind is TurnKind.MALFORMED:
        raise RenderError("cannot render a malformed turn")
    think = (turn.think or "").strip()
    if not think or has_tag_delimiter(think):
        raise RenderError(f"invalid think text: {turn.think!r}")
    if turn.kind is TurnKind.GROUNDING:
        if turn.ground is None or turn.answer is not None:
            raise RenderError("grounding turn needs exactly a ground action")
        g = turn.ground
        return f"<think>{think}</think><ground>{g.start_frame}, {g.end_frame}</ground>"
    if turn.answer is None or turn.ground is not None:
        raise RenderError("answering turn needs exactly an answer action")
    answer = turn.answer.answer_text.strip()
    if not answer or has_tag_delimiter(answer):
        raise RenderError(f"invalid answer text: {turn.answer.answer_text!r}")
    return f"<think>{think}</think><answer>{answer}</answer>"
