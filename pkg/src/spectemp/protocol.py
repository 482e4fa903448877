"""Tag grammar exchanged with the target and draft models.

Target outputs look like::

    <think>free text</think><segment>(4.0, 5.0)</segment>
    <think>free text</think><answer>metal tray</answer>

and draft outputs like ``<frame>4.0, 5.0</frame>``.  Parsers never raise on
bad input; every deviation becomes a violation code on the
:class:`ParseOutcome`, which is what the format rewards consume.  The full
grammar is written out in ``docs/protocol.md``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Generic, Optional, Sequence, TypeVar

from .errors import TemplateFieldMissing
from .timeline import Segment

# violation codes
MISSING_THINK = "missing-think"
BOTH_TERMINALS = "both-terminals"
NO_TERMINAL = "no-terminal"
MALFORMED_INTERVAL = "malformed-interval"
INVERTED_INTERVAL = "inverted-interval"
EMPTY_ANSWER = "empty-answer"
TRAILING_GARBAGE = "trailing-garbage"
STRAY_TEXT = "stray-text"
NESTED_TAG = "nested-tag"
MISSING_FRAME_TAG = "missing-frame-tag"
EMPTY_LIST = "empty-list"
NON_NUMERIC = "non-numeric"
NOT_INCREASING = "not-increasing"
TOO_MANY = "too-many"

_NUM = r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?"
_INTERVAL_RE = re.compile(rf"^\s*\(\s*({_NUM})\s*,\s*({_NUM})\s*\)\s*$")
_NUM_RE = re.compile(rf"^\s*({_NUM})\s*$")
_TAG_RE = {
    name: re.compile(rf"<{name}>(.*?)</{name}>", re.DOTALL)
    for name in ("think", "segment", "answer", "frame")
}
_ANY_TAG_RE = re.compile(r"</?(?:think|segment|answer|frame)>")


@dataclass(frozen=True)
class TargetDecision:
    """One target-model turn: reasoning plus either a segment request or a final answer."""

    think: str
    segment: Optional[Segment] = None
    answer: Optional[str] = None

    def __post_init__(self):
        if (self.segment is None) == (self.answer is None):
            raise ValueError("exactly one of segment / answer must be set")

    @property
    def is_answer(self) -> bool:
        return self.answer is not None


@dataclass(frozen=True)
class DraftProposal:
    frames: tuple[float, ...]


T = TypeVar("T")


@dataclass(frozen=True)
class ParseOutcome(Generic[T]):
    value: Optional[T]
    violations: tuple[str, ...] = ()
    think: str = ""

    @property
    def format_ok(self) -> bool:
        return not self.violations


def _leftover_violation(text: str, spans: list[tuple[int, int]]) -> list[str]:
    """Classify non-whitespace text outside the consumed tag spans."""
    if not spans:
        return [STRAY_TEXT] if text.strip() else []
    spans = sorted(spans)
    last_end = spans[-1][1]
    out = []
    if text[last_end:].strip():
        out.append(TRAILING_GARBAGE)
    cursor, inner = 0, []
    for a, b in spans:
        inner.append(text[cursor:a])
        cursor = b
    if "".join(inner).strip():
        out.append(STRAY_TEXT)
    return out


def _parse_interval(body: str) -> tuple[Optional[Segment], list[str]]:
    m = _INTERVAL_RE.match(body)
    if not m:
        return None, [MALFORMED_INTERVAL]
    a, b = float(m.group(1)), float(m.group(2))
    if not (math.isfinite(a) and math.isfinite(b)) or a < 0 or b < 0:
        return None, [MALFORMED_INTERVAL]
    if a > b:
        return None, [INVERTED_INTERVAL]
    return Segment(a, b), []


def parse_target_output(text) -> ParseOutcome[TargetDecision]:
    """Parse a target-model response.

    The first ``<think>`` block is taken as the reasoning. Exactly one terminal
    (``<segment>`` or ``<answer>``) is expected; if both appear, the one that
    comes first in the text is kept and ``both-terminals`` is recorded.  The
    value is ``None`` only when no usable terminal could be recovered.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    text = str(text)
    violations: list[str] = []
    spans: list[tuple[int, int]] = []

    think_m = _TAG_RE["think"].search(text)
    think = ""
    if think_m:
        think = think_m.group(1).strip()
        spans.append(think_m.span())
        if _ANY_TAG_RE.search(think_m.group(1)):
            violations.append(NESTED_TAG)
    else:
        violations.append(MISSING_THINK)

    seg_m = _TAG_RE["segment"].search(text)
    ans_m = _TAG_RE["answer"].search(text)
    if seg_m and ans_m:
        violations.append(BOTH_TERMINALS)
        spans.extend([seg_m.span(), ans_m.span()])
        keep = "segment" if seg_m.start() < ans_m.start() else "answer"
    elif seg_m:
        spans.append(seg_m.span())
        keep = "segment"
    elif ans_m:
        spans.append(ans_m.span())
        keep = "answer"
    else:
        violations.append(NO_TERMINAL)
        keep = None

    value = None
    if keep == "segment":
        seg, errs = _parse_interval(seg_m.group(1))
        violations.extend(errs)
        if seg is not None:
            value = TargetDecision(think, segment=seg)
    elif keep == "answer":
        answer = " ".join(ans_m.group(1).split())
        if _ANY_TAG_RE.search(answer):
            violations.append(NESTED_TAG)
        if not answer:
            violations.append(EMPTY_ANSWER)
        else:
            value = TargetDecision(think, answer=answer)

    violations.extend(_leftover_violation(text, spans))
    return ParseOutcome(value, tuple(violations), think)


def parse_draft_output(text, limit: Optional[int] = None) -> ParseOutcome[DraftProposal]:
    """Parse ``<frame>t1, t2, ...</frame>``.

    Numeric entries are kept in ``value`` even when other entries are broken,
    so downstream scoring can work on whatever was recoverable.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    text = str(text)
    m = _TAG_RE["frame"].search(text)
    if not m:
        return ParseOutcome(None, (MISSING_FRAME_TAG,))
    violations: list[str] = []
    body = m.group(1)
    frames: list[float] = []
    if not body.strip():
        violations.append(EMPTY_LIST)
    else:
        bad = False
        for item in body.split(","):
            nm = _NUM_RE.match(item)
            if nm is None or not math.isfinite(float(nm.group(1))) or float(nm.group(1)) < 0:
                bad = True
                continue
            frames.append(float(nm.group(1)))
        if bad:
            violations.append(NON_NUMERIC)
        if any(b <= a for a, b in zip(frames, frames[1:])):
            violations.append(NOT_INCREASING)
        if limit is not None and len(frames) > limit:
            violations.append(TOO_MANY)
    violations.extend(_leftover_violation(text, [m.span()]))
    value = DraftProposal(tuple(frames)) if frames else None
    return ParseOutcome(value, tuple(violations))


# -- canonical rendering --------------------------------------------------

def fmt_time(t: float) -> str:
    return repr(float(t))


def _check_free_text(s: str, what: str) -> str:
    if _ANY_TAG_RE.search(s):
        raise ValueError(f"{what} may not contain protocol tags: {s!r}")
    return s


def render_target(decision: TargetDecision) -> str:
    """Canonical text for a decision; ``parse_target_output`` recovers it exactly."""
    think = _check_free_text(decision.think.strip(), "think text")
    head = f"<think>{think}</think>"
    if decision.segment is not None:
        seg = decision.segment
        return f"{head}<segment>({fmt_time(seg.start_s)}, {fmt_time(seg.end_s)})</segment>"
    answer = _check_free_text(" ".join(decision.answer.split()), "answer")
    return f"{head}<answer>{answer}</answer>"


def render_draft(frames: Sequence[float]) -> str:
    return "<frame>" + ", ".join(fmt_time(t) for t in frames) + "</frame>"


def canonicalize_target(text: str) -> Optional[str]:
    out = parse_target_output(text)
    if not out.format_ok:
        return None
    return render_target(out.value)


# -- prompts ---------------------------------------------------------------

ROLES = ("target-init", "target-verify", "target-final", "draft")


@dataclass(frozen=True)
class SessionView:
    """What one model call is allowed to see.

    ``history`` is already filtered for the role: the draft gets only the
    most recent reasoning trace, the target gets every trace so far.
    """

    role: str
    round_index: int
    question: Optional[str]
    history: tuple[str, ...] = ()
    frame_times: tuple[float, ...] = ()
    shown_times: tuple[float, ...] = ()
    options: Optional[tuple[str, ...]] = None
    frame_limit: Optional[int] = None
    duration_s: Optional[float] = None
    extra: dict = field(default_factory=dict, compare=False)


_TARGET_RULES = (
    "Reason step by step inside <think></think>. Then output exactly one of:\n"
    "  <segment>(start, end)</segment>  - a time range in seconds that needs a closer look\n"
    "  <answer>...</answer>             - the final answer, once the evidence is sufficient\n"
    "Never output both."
)

_DRAFT_RULES = (
    "Select at most {limit} frames that best support the reasoning above and that "
    "differ from each other. Reply with <frame>t1, t2, ...</frame> using the "
    "timestamps (seconds, increasing order) listed above and nothing else."
)


def _frame_lines(times: Sequence[float]) -> str:
    return "\n".join(f"[frame t={fmt_time(t)}s]" for t in times) or "(no frames)"


def _question_block(view: SessionView) -> str:
    lines = [f"Question: {view.question}"]
    if view.options:
        lines.append("Options:")
        lines.extend(f"{chr(ord('A') + i)}. {opt}" for i, opt in enumerate(view.options))
    return "\n".join(lines)


def _require(view: SessionView, *names: str) -> None:
    for name in names:
        value = getattr(view, name)
        if value is None or (name == "history" and not value):
            raise TemplateFieldMissing(f"role {view.role!r} needs field {name!r}")


def render_prompt(role: str, view: SessionView) -> str:
    if role not in ROLES:
        raise ValueError(f"unknown role {role!r}")
    if role == "target-init":
        _require(view, "question")
        dur = f" of {fmt_time(view.duration_s)} seconds" if view.duration_s is not None else ""
        return (
            f"You are watching a video{dur}, shown as uniformly sampled frames.\n"
            f"{_frame_lines(view.frame_times)}\n\n{_question_block(view)}\n\n{_TARGET_RULES}"
        )
    if role == "target-verify":
        _require(view, "question", "history")
        past = "\n".join(f"<think>{t}</think>" for t in view.history)
        return (
            f"{_question_block(view)}\n\nYour reasoning so far:\n{past}\n\n"
            f"Round {view.round_index}: frames proposed from the requested range:\n"
            f"{_frame_lines(view.frame_times)}\n\n"
            "Check whether these frames settle the question.\n" + _TARGET_RULES
        )
    if role == "target-final":
        _require(view, "question", "history")
        past = "\n".join(f"<think>{t}</think>" for t in view.history)
        return (
            f"{_question_block(view)}\n\nYour reasoning so far:\n{past}\n\n"
            f"All frames you have seen:\n{_frame_lines(view.frame_times)}\n\n"
            "The exploration budget is spent. Reason inside <think></think> and give "
            "the final answer inside <answer></answer>."
        )
    _require(view, "history", "frame_limit")
    return (
        f"Densely sampled frames:\n{_frame_lines(view.frame_times)}\n\n"
        f"Current reasoning:\n<think>{view.history[-1]}</think>\n\n"
        + _DRAFT_RULES.format(limit=view.frame_limit)
    )
