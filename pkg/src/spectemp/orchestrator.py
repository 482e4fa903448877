"""The speculation / verification loop.

One session runs:

1. the target looks at ``init_frames`` uniformly sampled frames and either
   answers or names a time range;
2. for up to ``t_max`` rounds the range is densely sampled, the draft picks at
   most ``per_iter_frames`` of those frames while seeing only the latest
   reasoning trace, and the target, which sees every trace so far, verifies
   them and again answers or names a new range;
3. if no answer came out, the target is asked once more to commit to one using
   the frames it already has.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

from .adapters.base import ModelInterface, ModelOutput, estimate_tokens
from .errors import EmptyInput, SegmentOutOfRange, SessionAborted
from .latency import CostModel, LatencyBreakdown, round_latency, simulate_latency
from .protocol import (
    SessionView,
    parse_draft_output,
    parse_target_output,
    render_prompt,
)
from .timeline import FrameRef, Segment, Timeline, dense_sample, frame_budget, uniform_sample

logger = logging.getLogger(__name__)

INIT_ANSWER = "init-answer"
ROUND_ANSWER = "round-answer"
FORCED_FINAL = "forced-final"


@dataclass(frozen=True)
class SessionConfig:
    init_frames: int = 10
    per_iter_frames: int = 2
    t_max: int = 3
    dense_fps: float = 1.0
    cost: CostModel = field(default_factory=CostModel)
    seed: int = 0

    def __post_init__(self):
        if self.init_frames < 1 or self.per_iter_frames < 1:
            raise ValueError("init_frames and per_iter_frames must be >= 1")
        if self.t_max < 0:
            raise ValueError("t_max must be >= 0")
        if self.dense_fps <= 0:
            raise ValueError("dense_fps must be > 0")

    @property
    def budget(self) -> int:
        return frame_budget(self.init_frames, self.per_iter_frames, self.t_max)

    @property
    def label(self) -> str:
        return f"{self.init_frames}+{self.per_iter_frames}x{self.t_max}"


@dataclass(frozen=True)
class RoundRecord:
    """One target call, plus the draft call that fed it (rounds >= 1).

    ``kind`` is ``init`` for the initial call, ``round`` for a speculation
    round and ``final`` for the forced answer.
    """

    index: int
    kind: str
    think: str
    segment: Optional[Segment]
    answer: Optional[str]
    target_prompt: str
    target_text: str
    violations: tuple[str, ...]
    recovered: bool
    target_frames: int
    target_prompt_tokens: int
    target_decode_tokens: int
    shown: tuple[float, ...] = ()
    dense_count: int = 0
    draft_prompt: str = ""
    draft_text: str = ""
    draft_violations: tuple[str, ...] = ()
    proposed: tuple[float, ...] = ()
    draft_prompt_tokens: int = 0
    draft_decode_tokens: int = 0
    latency: LatencyBreakdown = field(default_factory=LatencyBreakdown)

    def __post_init__(self):
        if (self.segment is None) == (self.answer is None):
            raise ValueError("a round carries exactly one of segment / answer")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["segment"] = None if self.segment is None else [self.segment.start_s, self.segment.end_s]
        return d


@dataclass(frozen=True)
class SessionResult:
    question: str
    answer: str
    rounds_used: int
    total_target_frames: int
    total_draft_frames: int
    latency: LatencyBreakdown
    rounds: tuple[RoundRecord, ...]
    terminated_by: str
    config_label: str = ""

    def target_texts(self) -> list[str]:
        return [r.target_text for r in self.rounds]

    def draft_texts(self) -> list[str]:
        return [r.draft_text for r in self.rounds if r.kind == "round"]

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "answer": self.answer,
            "rounds_used": self.rounds_used,
            "total_target_frames": self.total_target_frames,
            "total_draft_frames": self.total_draft_frames,
            "terminated_by": self.terminated_by,
            "config": self.config_label,
            "latency": self.latency.to_dict(),
            "rounds": [r.to_dict() for r in self.rounds],
        }


def _call(model: ModelInterface, prompt: str, frames, view, done: list) -> ModelOutput:
    try:
        return model.invoke(prompt, frames, view)
    except Exception as e:  # any adapter failure ends the session
        raise SessionAborted(f"{view.role} call failed in round {view.round_index}: {e}",
                             done) from e


def _snap_to_dense(times: Sequence[float], dense: Sequence[FrameRef], limit: int) -> list[FrameRef]:
    picked: list[FrameRef] = []
    seen: set[float] = set()
    for t in times:
        ref = min(dense, key=lambda f: (abs(f.timestamp_s - t), f.timestamp_s))
        if ref.timestamp_s not in seen:
            seen.add(ref.timestamp_s)
            picked.append(ref)
        if len(picked) == limit:
            break
    return sorted(picked, key=lambda f: f.timestamp_s)


def _spread(dense: Sequence[FrameRef], limit: int) -> list[FrameRef]:
    """Evenly spaced fallback pick when the draft output is unusable."""
    n = len(dense)
    if n <= limit:
        return list(dense)
    idx = sorted({int((i + 0.5) * n / limit) for i in range(limit)})
    return [dense[i] for i in idx]


def run_session(cfg: SessionConfig, target: ModelInterface, draft: ModelInterface,
                tl: Timeline, question: str, options: Optional[Sequence[str]] = None) -> SessionResult:
    """Run one question against one timeline.

    Malformed target output (any format violation) is handled by requesting
    the whole timeline as the next segment; the round records it with
    ``recovered=True``. Unusable draft output falls back to evenly spaced
    dense frames. Draft timestamps are snapped onto the dense sample.
    """
    opts = tuple(options) if options else None
    whole = Segment(0.0, tl.duration_s)
    rounds: list[RoundRecord] = []
    history: list[str] = []
    shown: list[FrameRef] = []

    def target_turn(kind, index, role, frames, new_frames, extra: dict):
        shown_times = tuple(f.timestamp_s for f in shown)
        view = SessionView(role=role, round_index=index, question=question,
                           history=tuple(history), frame_times=tuple(f.timestamp_s for f in frames),
                           shown_times=shown_times, options=opts, duration_s=tl.duration_s)
        prompt = render_prompt(role, view)
        out = _call(target, prompt, list(frames), view, rounds)
        parsed = parse_target_output(out.text)
        seg = answer = None
        recovered = False
        if kind == "final":
            answer = parsed.value.answer if parsed.value is not None and parsed.value.is_answer else ""
        elif parsed.format_ok and parsed.value.is_answer:
            answer = parsed.value.answer
        elif parsed.format_ok:
            seg = parsed.value.segment
            try:
                tl.clamp(seg)
            except SegmentOutOfRange:
                seg, recovered = whole, True
        else:
            seg, recovered = whole, True
        if recovered:
            logger.debug("round %d: unusable target output %r, requesting whole timeline",
                         index, parsed.violations or "out of range")
        rec = RoundRecord(
            index=index, kind=kind, think=parsed.think, segment=seg, answer=answer,
            target_prompt=prompt, target_text=out.text, violations=parsed.violations,
            recovered=recovered, target_frames=new_frames,
            target_prompt_tokens=estimate_tokens(prompt), target_decode_tokens=out.decode_tokens,
            shown=shown_times, **extra)
        rec = replace(rec, latency=round_latency(rec, cfg.cost))
        rounds.append(rec)
        history.append(parsed.think)
        return rec

    def finish(answer: str, used: int, how: str) -> SessionResult:
        return SessionResult(
            question=question, answer=answer, rounds_used=used,
            total_target_frames=sum(r.target_frames for r in rounds),
            total_draft_frames=sum(r.dense_count for r in rounds),
            latency=simulate_latency(rounds, cfg.cost), rounds=tuple(rounds),
            terminated_by=how, config_label=cfg.label)

    init = uniform_sample(tl, cfg.init_frames)
    shown.extend(init)
    rec = target_turn("init", 0, "target-init", init, len(init), {})
    if rec.answer is not None:
        return finish(rec.answer, 0, INIT_ANSWER)

    segment = rec.segment
    for t in range(1, cfg.t_max + 1):
        dense = dense_sample(tl, segment, cfg.dense_fps)
        dview = SessionView(role="draft", round_index=t, question=question,
                            history=(history[-1],), frame_times=tuple(f.timestamp_s for f in dense),
                            frame_limit=cfg.per_iter_frames, duration_s=tl.duration_s)
        dprompt = render_prompt("draft", dview)
        dout = _call(draft, dprompt, dense, dview, rounds)
        dparsed = parse_draft_output(dout.text, cfg.per_iter_frames)
        if dparsed.value is not None:
            proposal = _snap_to_dense(dparsed.value.frames, dense, cfg.per_iter_frames)
        else:
            proposal = _spread(dense, cfg.per_iter_frames)
        shown.extend(proposal)
        extra = dict(
            dense_count=len(dense), draft_prompt=dprompt, draft_text=dout.text,
            draft_violations=dparsed.violations,
            proposed=tuple(f.timestamp_s for f in proposal),
            draft_prompt_tokens=estimate_tokens(dprompt), draft_decode_tokens=dout.decode_tokens)
        rec = target_turn("round", t, "target-verify", proposal, len(proposal), extra)
        if rec.answer is not None:
            return finish(rec.answer, t, ROUND_ANSWER)
        segment = rec.segment

    rec = target_turn("final", cfg.t_max + 1, "target-final", list(shown), 0, {})
    return finish(rec.answer, cfg.t_max, FORCED_FINAL)


def mean_iterations(results: Sequence[SessionResult]) -> float:
    if not results:
        raise EmptyInput("mean_iterations needs at least one session")
    return sum(r.rounds_used for r in results) / len(results)
