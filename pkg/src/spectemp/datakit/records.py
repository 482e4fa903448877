"""Trajectory records and their validation.

One record is one JSON object per line::

    {"id": "pop-0007", "question": "...", "options": ["..."] | null,
     "answer": "B", "evidence_spans": [[12.0, 17.0]], "evidence_frames": [14.0],
     "rounds": [{"target": "<think>..</think><segment>(12.0, 17.0)</segment>",
                 "draft": "<frame>14.0, 15.0</frame>"},
                {"target": "<think>..</think><answer>B</answer>", "draft": null}],
     "source": "synthetic", "duration_s": 45.0, "duration_class": "short"}

Round ``i`` holds the target turn and the draft turn that answered its segment
request. Every round but the last asks for a segment; the last one answers.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from ..errors import MalformedRecord
from ..protocol import parse_draft_output, parse_target_output
from ..rewards import answer_reward, temporal_iou
from ..timeline import Segment

LOW_IOU = "low-iou"
FRAME_OUTSIDE = "frame-outside-segment"
BAD_GRAMMAR = "bad-grammar"
ANSWER_MISMATCH = "answer-mismatch"

DEFAULT_IOU_THRESHOLD = 0.5
# dense frames snap to the native grid, so they may sit half a 1 fps spacing outside
DEFAULT_FRAME_TOL_S = 0.5


def duration_class(duration_s: float) -> str:
    if duration_s < 60:
        return "short"
    if duration_s <= 600:
        return "medium"
    return "long"


@dataclass(frozen=True)
class TrajectoryRound:
    target: str
    draft: Optional[str] = None


@dataclass(frozen=True)
class TrajectoryRecord:
    id: str
    question: str
    answer: str
    evidence_spans: tuple[Segment, ...]
    evidence_frames: tuple[float, ...]
    rounds: tuple[TrajectoryRound, ...]
    duration_s: float
    options: Optional[tuple[str, ...]] = None
    source: str = "synthetic"

    @property
    def duration_class(self) -> str:
        return duration_class(self.duration_s)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "options": list(self.options) if self.options is not None else None,
            "answer": self.answer,
            "evidence_spans": [[s.start_s, s.end_s] for s in self.evidence_spans],
            "evidence_frames": list(self.evidence_frames),
            "rounds": [{"target": r.target, "draft": r.draft} for r in self.rounds],
            "source": self.source,
            "duration_s": self.duration_s,
            "duration_class": self.duration_class,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryRecord":
        try:
            opts = d.get("options")
            rec = cls(
                id=str(d["id"]),
                question=str(d["question"]),
                answer=str(d["answer"]),
                evidence_spans=tuple(Segment(float(a), float(b)) for a, b in d["evidence_spans"]),
                evidence_frames=tuple(float(t) for t in d["evidence_frames"]),
                rounds=tuple(TrajectoryRound(str(r["target"]),
                                             None if r.get("draft") is None else str(r["draft"]))
                             for r in d["rounds"]),
                duration_s=float(d["duration_s"]),
                options=None if opts is None else tuple(str(o) for o in opts),
                source=str(d.get("source", "synthetic")),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedRecord(f"unreadable trajectory record: {e!r}") from e
        stated = d.get("duration_class")
        if stated is not None and stated != rec.duration_class:
            raise MalformedRecord(
                f"record {rec.id}: duration_class {stated!r} does not match {rec.duration_s}s")
        return rec

    @classmethod
    def from_json(cls, line: str) -> "TrajectoryRecord":
        try:
            d = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedRecord(f"invalid JSON: {e}") from e
        if not isinstance(d, dict):
            raise MalformedRecord("record must be a JSON object")
        return cls.from_dict(d)


def write_records(path, records: Iterable[TrajectoryRecord]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
            n += 1
    return n


def read_records(path) -> list[TrajectoryRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(TrajectoryRecord.from_json(line))
            except MalformedRecord as e:
                raise MalformedRecord(f"{path}:{lineno}: {e}") from e
    return out


@dataclass(frozen=True)
class ValidationFailure:
    round: int
    code: str


@dataclass(frozen=True)
class ValidationReport:
    record_id: str
    failures: tuple[ValidationFailure, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return not self.failures

    def codes(self) -> set[str]:
        return {f.code for f in self.failures}


def validate_trajectory(rec: TrajectoryRecord, iou_threshold: float = DEFAULT_IOU_THRESHOLD,
                        frame_limit: Optional[int] = None,
                        frame_tol_s: float = DEFAULT_FRAME_TOL_S) -> ValidationReport:
    """Check grammar, temporal evidence and final answer of one record.

    A round's segment passes when its IoU with the best-matching gold span is
    at least ``iou_threshold``. Draft frames must fall inside the segment they
    were drawn from, up to ``frame_tol_s`` of grid snapping. Rounds without
    a draft turn (budget ran out) are allowed.
    """
    if not isinstance(rec, TrajectoryRecord):
        raise MalformedRecord(f"expected a TrajectoryRecord, got {type(rec).__name__}")
    fails: list[ValidationFailure] = []
    if not rec.rounds:
        return ValidationReport(rec.id, (ValidationFailure(0, BAD_GRAMMAR),))
    last = len(rec.rounds) - 1
    for i, rnd in enumerate(rec.rounds):
        p = parse_target_output(rnd.target)
        if not p.format_ok or p.value is None:
            fails.append(ValidationFailure(i, BAD_GRAMMAR))
            continue
        d = p.value
        if i == last:
            if not d.is_answer:
                fails.append(ValidationFailure(i, BAD_GRAMMAR))
            elif answer_reward(d.answer, rec.answer, rec.options) < 1.0:
                fails.append(ValidationFailure(i, ANSWER_MISMATCH))
            continue
        if d.is_answer:
            fails.append(ValidationFailure(i, BAD_GRAMMAR))
            continue
        best = max((temporal_iou([d.segment], [g]) for g in rec.evidence_spans), default=0.0)
        if best < iou_threshold:
            fails.append(ValidationFailure(i, LOW_IOU))
        if rnd.draft is None:
            continue
        dp = parse_draft_output(rnd.draft, frame_limit)
        if not dp.format_ok:
            fails.append(ValidationFailure(i, BAD_GRAMMAR))
        if dp.value is not None and any(not d.segment.contains(t, frame_tol_s) for t in dp.value.frames):
            fails.append(ValidationFailure(i, FRAME_OUTSIDE))
    return ValidationReport(rec.id, tuple(fails))


def failure_histogram(reports: Sequence[ValidationReport]) -> Counter:
    return Counter(f.code for r in reports for f in r.failures)
