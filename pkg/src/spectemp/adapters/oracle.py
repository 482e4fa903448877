"""Scripted test doubles that know the gold annotation of a task.

:class:`OracleTarget` and :class:`OracleDraft` behave like perfectly trained
models: the target asks for the evidence span it has not seen yet and answers
once the planted reveal round has passed; the draft picks the evidence frames
out of whatever was densely sampled.  :class:`NoisyOracle` wraps either one and
injects seeded corruption so rewards and iteration counts have something to
react to.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..protocol import (
    SessionView,
    TargetDecision,
    fmt_time,
    parse_target_output,
    render_draft,
    render_target,
)
from ..seeding import derive_seed
from ..timeline import FrameRef, Segment
from .base import ModelInterface, ModelOutput, estimate_tokens

_EPS = 1e-6


@dataclass(frozen=True)
class GoldSpec:
    answer: str
    evidence_spans: tuple[Segment, ...] = ()
    evidence_frames: tuple[float, ...] = ()
    reveal_round: int = 1
    options: Optional[tuple[str, ...]] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.answer:
            raise ValueError("gold answer must be nonempty")
        if self.reveal_round < 0:
            raise ValueError("reveal_round must be >= 0")
        for t in self.evidence_frames:
            if not any(s.contains(t, _EPS) for s in self.evidence_spans):
                raise ValueError(f"evidence frame {t} lies outside every evidence span")

    def frames_in(self, span: Segment) -> list[float]:
        return [t for t in self.evidence_frames if span.contains(t, _EPS)]


def _seen(times: Sequence[float], t: float) -> bool:
    return any(abs(s - t) <= _EPS for s in times)


def evidence_shown(gold: GoldSpec, shown: Sequence[float]) -> bool:
    return any(_seen(shown, t) for t in gold.evidence_frames)


def wrong_answer(gold: GoldSpec) -> str:
    if gold.options and len(gold.answer) == 1 and gold.answer.isalpha():
        idx = (ord(gold.answer.upper()) - ord("A") + 1) % len(gold.options)
        return chr(ord("A") + idx)
    return "unknown"


def _first_uncovered(gold: GoldSpec, shown: Sequence[float]) -> Segment:
    for span in gold.evidence_spans:
        marks = gold.frames_in(span)
        covered = any(_seen(shown, t) for t in marks) if marks else any(
            span.contains(t, _EPS) for t in shown)
        if not covered:
            return span
    return gold.evidence_spans[-1]


def oracle_target_step(view: SessionView, gold: GoldSpec) -> str:
    """Scripted target turn.

    Answers once ``round_index >= reveal_round`` and some gold evidence frame
    has been shown. A reveal round of 0 means the question is answerable from
    the initial overview alone, so the evidence requirement is waived there.
    The forced final call answers correctly only if evidence was ever shown.
    """
    r = view.round_index
    seen = gold.reveal_round == 0 or evidence_shown(gold, view.shown_times)
    if view.role == "target-final":
        answer = gold.answer if seen else wrong_answer(gold)
        return render_target(TargetDecision(f"[T{r}] Budget spent; committing to an answer.",
                                            answer=answer))
    if r >= gold.reveal_round and seen:
        return render_target(TargetDecision(f"[T{r}] The evidence settles it.",
                                            answer=gold.answer))
    if gold.evidence_spans:
        span = _first_uncovered(gold, view.shown_times)
    else:
        span = Segment(0.0, float(view.duration_s or 0.0))
    think = f"[T{r}] Need a closer look at {fmt_time(span.start_s)}-{fmt_time(span.end_s)}s."
    return render_target(TargetDecision(think, segment=span))


def oracle_draft_step(dense: Sequence[FrameRef], gold: GoldSpec, limit: int) -> str:
    """Pick up to ``limit`` dense frames: exact evidence first, then nearest to evidence."""
    if not dense:
        raise ValueError("dense frame list is empty")
    times = [float(f.timestamp_s) for f in dense]
    ev = list(gold.evidence_frames)

    def key(t: float):
        exact = _seen(ev, t)
        dist = min((abs(t - e) for e in ev), default=0.0)
        return (0 if exact else 1, dist, t)

    chosen = sorted(sorted(times, key=key)[:max(1, limit)])
    return render_draft(chosen)


class OracleTarget(ModelInterface):
    def __init__(self, gold: GoldSpec):
        self.gold = gold

    def invoke(self, prompt, frames, view=None) -> ModelOutput:
        if view is None:
            raise ValueError("oracle target needs the session view")
        text = oracle_target_step(view, self.gold)
        return ModelOutput(text, None, estimate_tokens(text))


class OracleDraft(ModelInterface):
    def __init__(self, gold: GoldSpec):
        self.gold = gold

    def invoke(self, prompt, frames, view=None) -> ModelOutput:
        limit = view.frame_limit if view is not None and view.frame_limit else 1
        text = oracle_draft_step(frames, self.gold, limit)
        return ModelOutput(text, None, estimate_tokens(text))


@dataclass(frozen=True)
class NoiseConfig:
    answer_error: float = 0.0   # probability of swapping a final answer for a wrong one
    format_error: float = 0.0   # probability of deleting one protocol tag
    jitter_s: float = 0.0       # max absolute shift applied to each segment endpoint

    def __post_init__(self):
        for name in ("answer_error", "format_error"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")
        if self.jitter_s < 0:
            raise ValueError("jitter_s must be >= 0")


_TAGS = ("<think>", "</think>", "<segment>", "</segment>", "<answer>", "</answer>",
         "<frame>", "</frame>")


def _delete_tag(text: str, pick: float) -> str:
    present = [t for t in _TAGS if t in text]
    if not present:
        return text
    tag = present[min(int(pick * len(present)), len(present) - 1)]
    return text.replace(tag, "", 1)


class NoisyOracle(ModelInterface):
    """Seeded corruption around a scripted backend.

    The random draw for a call depends only on ``(seed, question, role,
    round)``, never on call order, so the wrapper holds no mutable state and a
    task replays identically whatever ``t_max`` or worker layout is used.
    With every rate at zero the output is byte-identical to the wrapped oracle.
    """

    def __init__(self, inner: ModelInterface, noise: NoiseConfig, seed: int = 0):
        self.inner = inner
        self.noise = noise
        self.seed = seed

    def invoke(self, prompt, frames, view=None) -> ModelOutput:
        base = self.inner.invoke(prompt, frames, view)
        key = (view.question, view.role, view.round_index) if view is not None else (prompt,)
        rng = np.random.default_rng(derive_seed(self.seed, "noise", *key))
        u_answer, u_format, u_tag = rng.random(3)
        shift = rng.uniform(-1.0, 1.0, size=2) * self.noise.jitter_s

        text = base.text
        parsed = parse_target_output(text)
        if view is not None and view.role != "draft" and parsed.format_ok:
            d = parsed.value
            if d.is_answer and u_answer < self.noise.answer_error:
                gold = getattr(self.inner, "gold", None)
                wrong = wrong_answer(gold) if gold is not None else "unknown"
                if wrong == d.answer:
                    wrong = "unknown"
                d = TargetDecision(d.think, answer=wrong)
            elif d.segment is not None and self.noise.jitter_s > 0:
                a, b = sorted(max(0.0, x) for x in (d.segment.start_s + shift[0],
                                                    d.segment.end_s + shift[1]))
                d = TargetDecision(d.think, segment=Segment(a, b))
            text = render_target(d)
        if u_format < self.noise.format_error:
            text = _delete_tag(text, u_tag)
        if text == base.text:
            return base
        return ModelOutput(text, base.token_logprobs, estimate_tokens(text))
