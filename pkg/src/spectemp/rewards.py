"""Reward terms for the target and draft policies.

Target: ``format + answer + iou`` (range ``[0, 3]``).
Draft: ``format + mean visual gain`` over every frame it selected.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, UndefinedIoU
from .protocol import parse_draft_output, parse_target_output
from .timeline import Segment, Timeline

if TYPE_CHECKING:
    from .adapters.base import EmbeddingProvider
    from .adapters.oracle import GoldSpec
    from .orchestrator import SessionResult


@dataclass(frozen=True)
class RewardBreakdown:
    role: str
    format: float
    answer: float = 0.0
    iou: float = 0.0
    visual: float = 0.0

    @property
    def total(self) -> float:
        if self.role == "target":
            return self.format + self.answer + self.iou
        return self.format + self.visual

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total"] = self.total
        return d


# -- temporal IoU ---------------------------------------------------------

def merge_intervals(segs: Iterable[Segment]) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for a, b in sorted((s.start_s, s.end_s) for s in segs):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


def _measure(iv: list[tuple[float, float]]) -> float:
    return sum(b - a for a, b in iv)


def _intersection(x: list[tuple[float, float]], y: list[tuple[float, float]]) -> float:
    i = j = 0
    total = 0.0
    while i < len(x) and j < len(y):
        lo = max(x[i][0], y[j][0])
        hi = min(x[i][1], y[j][1])
        if hi > lo:
            total += hi - lo
        if x[i][1] < y[j][1]:
            i += 1
        else:
            j += 1
    return total


def temporal_iou(pred: Sequence[Segment], gold: Sequence[Segment]) -> float:
    """Length of the overlap of the two unions over the length of their union.

    When both unions have zero length (every segment is a single instant) the
    score is 1.0 if some predicted instant coincides with a gold instant,
    else 0.0.
    """
    if not pred and not gold:
        raise UndefinedIoU("IoU of two empty segment lists is undefined")
    if not pred or not gold:
        return 0.0
    p, g = merge_intervals(pred), merge_intervals(gold)
    inter = _intersection(p, g)
    union = _measure(p) + _measure(g) - inter
    if union <= 0.0:
        hit = any(ga <= pa <= gb or pa <= ga <= pb for pa, pb in p for ga, gb in g)
        return 1.0 if hit else 0.0
    return min(1.0, max(0.0, inter / union))


# -- answers ----------------------------------------------------------------

_LETTER_PATTERNS = [
    re.compile(r"^\(?([a-z])\)?[.):]?$"),
    re.compile(r"\b(?:answer|option|choice)\s*(?:is|:)?\s*(?:option\s*)?"
               r"(?:\(([a-z])\)|([a-z])(?=$|[.,;:!)]))"),
    re.compile(r"^\(?([a-z])[.):]\s"),
]


def normalize_answer(text: str) -> str:
    s = " ".join(str(text).lower().split())
    return s.strip(" .,;:!?\"'")


def _option_texts(options: Sequence[str]) -> list[str]:
    # "B. wooden board" and "wooden board" both normalise to "wooden board"
    out = []
    for opt in options:
        s = normalize_answer(opt)
        s = re.sub(r"^\(?[a-z]\)?[.):]\s+", "", s)
        out.append(s)
    return out


def extract_option_letter(text: str, options: Sequence[str]) -> Optional[str]:
    """Option letter named by ``text``, or ``None`` if no unambiguous letter is found."""
    n = len(options)
    s = normalize_answer(text)
    valid = {chr(ord("a") + i) for i in range(n)}
    for pat in _LETTER_PATTERNS:
        m = pat.search(s)
        letter = next((g for g in m.groups() if g), None) if m else None
        if letter in valid:
            return letter.upper()
    texts = _option_texts(options)
    if s in texts:
        return chr(ord("A") + texts.index(s))
    hits = [i for i, t in enumerate(texts) if t and t in s]
    if len(hits) == 1:
        return chr(ord("A") + hits[0])
    return None


def answer_reward(pred: str, gold: str, options: Optional[Sequence[str]] = None) -> float:
    if not gold:
        raise ValueError("gold answer must be nonempty")
    if options:
        g = extract_option_letter(gold, options)
        p = extract_option_letter(pred or "", options)
        if g is not None:
            return 1.0 if p == g else 0.0
    return 1.0 if normalize_answer(pred or "") == normalize_answer(gold) else 0.0


# -- format -----------------------------------------------------------------

def format_reward(text: str, role: str, limit: Optional[int] = None) -> float:
    if role == "target":
        return 1.0 if parse_target_output(text).format_ok else 0.0
    if role == "draft":
        return 1.0 if parse_draft_output(text, limit).format_ok else 0.0
    raise ValueError(f"unknown role {role!r}")


# -- visual information gain -------------------------------------------------

def visual_gain(q_emb, f_emb, prev) -> float:
    """Relevance of ``f_emb`` to the question minus its worst redundancy with ``prev``.

    Redundancy is ``max(0, max_j <f, p_j>)``: an empty history, or one whose
    frames all point away from ``f``, costs nothing. That keeps the gain
    non-increasing as frames are added to ``prev``.
    """
    q = np.asarray(q_emb, dtype=np.float64)
    f = np.asarray(f_emb, dtype=np.float64)
    if q.shape != f.shape or q.ndim != 1:
        raise DimensionMismatch(f"query {q.shape} vs frame {f.shape}")
    redundancy = 0.0
    if len(prev):
        P = np.asarray(prev, dtype=np.float64)
        if P.ndim != 2 or P.shape[1] != f.shape[0]:
            raise DimensionMismatch(f"previous frames {P.shape} vs frame {f.shape}")
        # row-wise dots: a matrix product may round the same row differently
        # depending on how many rows it has, which breaks exact monotonicity
        redundancy = max(0.0, max(float(np.dot(p, f)) for p in P))
    return float(q @ f) - redundancy


# -- session-level scores ---------------------------------------------------

def score_target(target_texts: Sequence[str], gold: "GoldSpec",
                 options: Optional[Sequence[str]] = None) -> RewardBreakdown:
    """Score every target output of one session.

    Format is 1 only if every output parses cleanly. The answer is the last
    parsed final answer. IoU compares all emitted segments with the gold spans;
    no segments scores 0.
    """
    parsed = [parse_target_output(t) for t in target_texts]
    fmt = 1.0 if parsed and all(p.format_ok for p in parsed) else 0.0
    answers = [p.value.answer for p in parsed if p.value is not None and p.value.is_answer]
    opts = options if options is not None else gold.options
    ans = answer_reward(answers[-1], gold.answer, opts) if answers else 0.0
    segs = [p.value.segment for p in parsed if p.value is not None and p.value.segment is not None]
    iou = temporal_iou(segs, gold.evidence_spans) if segs and gold.evidence_spans else 0.0
    return RewardBreakdown("target", fmt, answer=ans, iou=iou)


def score_draft(draft_texts: Sequence[str], question: str, provider: "EmbeddingProvider",
                tl: Timeline, limit: Optional[int] = None) -> RewardBreakdown:
    """Format AND over rounds plus mean visual gain of the selected frames.

    ``prev`` grows in selection order across rounds; only frames that parsed
    are scored, each resolved to its nearest timeline frame.
    """
    if not draft_texts:
        return RewardBreakdown("draft", 0.0)
    parsed = [parse_draft_output(t, limit) for t in draft_texts]
    fmt = 1.0 if all(p.format_ok for p in parsed) else 0.0
    q = provider.embed_text(question)
    prev: list[np.ndarray] = []
    gains = []
    for p in parsed:
        if p.value is None:
            continue
        for ref in tl.frames_at(p.value.frames):
            f = provider.embed_frame(ref)
            gains.append(visual_gain(q, f, prev))
            prev.append(f)
    visual = float(np.mean(gains)) if gains else 0.0
    return RewardBreakdown("draft", fmt, visual=visual)


def score_session(result: "SessionResult", gold: "GoldSpec", provider: "EmbeddingProvider",
                  tl: Timeline, limit: Optional[int] = None,
                  options: Optional[Sequence[str]] = None) -> tuple[RewardBreakdown, RewardBreakdown]:
    return (score_target(result.target_texts(), gold, options),
            score_draft(result.draft_texts(), result.question, provider, tl, limit))
