"""Seeded synthetic tasks: mixed-duration populations and visual needle-in-a-haystack."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from ..adapters.embedding import hash_embed, hash_embed_block
from ..adapters.oracle import GoldSpec
from ..orchestrator import SessionResult
from ..protocol import TargetDecision, parse_target_output, render_draft, render_target
from ..seeding import rng_for
from ..timeline import Segment, Timeline
from .records import TrajectoryRecord, TrajectoryRound

# short / medium / long share of the reference training corpus
DEFAULT_MIX = (0.324, 0.518, 0.158)
DURATION_RANGES = {"short": (20, 59), "medium": (60, 600), "long": (601, 1200)}
CLASSES = ("short", "medium", "long")
OPTION_POOL = ("metal tray", "wooden board", "glass bowl", "paper plate", "red bucket",
               "blue towel", "steel pan", "plastic crate")


@dataclass(frozen=True)
class Task:
    """One synthetic question; the timeline is rebuilt on demand to keep populations small."""

    task_id: str
    question: str
    gold: GoldSpec
    duration_s: float
    dim: int
    feature_key: str
    embed_seed: int = 0
    fps: float = 1.0
    needle_times: tuple[float, ...] = ()

    @property
    def options(self) -> Optional[tuple[str, ...]]:
        return self.gold.options

    @property
    def timeline(self) -> Timeline:
        n = int(math.floor(self.duration_s * self.fps + 1e-9)) + 1
        feats = hash_embed_block(self.feature_key, n, self.dim, self.embed_seed).copy()
        q = hash_embed(self.question, self.dim, self.embed_seed)
        ts = np.arange(n) / self.fps
        for t in self.needle_times:
            feats[int(round(t * self.fps))] = q
        return Timeline(self.duration_s, self.fps, ts, feats, {"task_id": self.task_id})

    def __iter__(self):
        # unpacks as (timeline, question, gold)
        return iter((self.timeline, self.question, self.gold))


def apportion(n: int, mix: Sequence[float]) -> list[int]:
    """Largest-remainder split of ``n`` items by the proportions in ``mix``."""
    w = np.asarray(mix, dtype=np.float64)
    if n < 0 or w.ndim != 1 or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("invalid population mix")
    quotas = n * w / w.sum()
    counts = np.floor(quotas).astype(int)
    order = sorted(range(len(w)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def _place_spans(rng: np.random.Generator, duration: int, k: int) -> list[tuple[int, int, int]]:
    """``k`` disjoint integer spans in ordered slots, each with one evidence instant."""
    slot = duration // k
    out = []
    for j in range(k):
        lo = j * slot
        width = int(rng.integers(2, min(8, slot - 1) + 1))
        start = lo + int(rng.integers(0, slot - width))
        end = start + width
        ev = int(rng.integers(start, end + 1))
        out.append((start, end, ev))
    return out


def synth_population(n: int, mix: Sequence[float] = DEFAULT_MIX, seed: int = 0, *,
                     reveal_weights: Sequence[float] = (1, 1, 1, 1), dim: int = 64,
                     embed_seed: int = 0, n_options: int = 4) -> list[Task]:
    """Reproducible population of ``n`` tasks.

    ``reveal_weights[r]`` is the relative frequency of reveal round ``r``; a
    task with reveal round ``r >= 1`` has ``r`` gold spans, one per round the
    scripted target will request. Durations follow ``mix`` over the short /
    medium / long classes, with counts apportioned exactly.
    """
    if n < 1:
        raise ValueError("population size must be >= 1")
    counts = apportion(n, mix)
    classes = [c for c, k in zip(CLASSES, counts) for _ in range(k)]
    order = rng_for(seed, "population-order").permutation(n)
    classes = [classes[i] for i in order]
    w = np.asarray(reveal_weights, dtype=np.float64)
    w = w / w.sum()
    tasks = []
    for i, cls in enumerate(classes):
        rng = rng_for(seed, "task", i)
        lo, hi = DURATION_RANGES[cls]
        duration = int(rng.integers(lo, hi + 1))
        reveal = int(rng.choice(len(w), p=w))
        spans = _place_spans(rng, duration, max(1, reveal))
        picks = rng.choice(len(OPTION_POOL), size=n_options, replace=False)
        options = tuple(OPTION_POOL[j] for j in picks)
        letter = chr(ord("A") + int(rng.integers(0, n_options)))
        tid = f"pop-{seed}-{i:05d}"
        question = f"Clip {tid}: which object is shown at the key moment?"
        gold = GoldSpec(
            answer=letter,
            evidence_spans=tuple(Segment(float(a), float(b)) for a, b, _ in spans),
            evidence_frames=tuple(float(e) for _, _, e in spans),
            reveal_round=reveal,
            options=options,
        )
        tasks.append(Task(tid, question, gold, float(duration), dim, f"pop:{seed}:{i}",
                          embed_seed, 1.0, gold.evidence_frames))
    return tasks


@dataclass(frozen=True)
class NiahSpec:
    haystack_len: int
    depth: float
    width: int = 1
    distractor_seed: int = 0

    def __post_init__(self):
        if self.haystack_len < 1 or self.width < 1 or self.width > self.haystack_len:
            raise ValueError("needle must fit inside the haystack")
        if not 0.0 <= self.depth <= 1.0:
            raise ValueError("depth must be in [0, 1]")

    @property
    def needle_start(self) -> int:
        return min(int(math.floor(self.depth * self.haystack_len)),
                   self.haystack_len - self.width)


def synth_niah(spec: NiahSpec, d: int = 256, seed: int = 0) -> Task:
    """Haystack of hash-embedded frames at 1 fps with a needle equal to the question embedding.

    ``seed`` is the embedding seed shared with the provider; the needle
    position depends only on length, depth and width.
    """
    start = spec.needle_start
    key = f"niah:{spec.haystack_len}:{spec.depth!r}:{spec.width}"
    question = f"What out-of-place object appears in this video? [{key}]"
    answer = "needle " + hashlib.sha256(key.encode()).hexdigest()[:8]
    needle = tuple(float(t) for t in range(start, start + spec.width))
    gold = GoldSpec(answer=answer,
                    evidence_spans=(Segment(needle[0], needle[-1]),),
                    evidence_frames=needle, reveal_round=1)
    return Task(f"niah-{spec.haystack_len}-{spec.depth:g}-{spec.distractor_seed}", question, gold,
                float(spec.haystack_len - 1), d, f"{key}:distractors:{spec.distractor_seed}",
                seed, 1.0, needle)


# -- trajectories ------------------------------------------------------------

def trajectory_from_gold(task: Task, per_iter: int = 2) -> TrajectoryRecord:
    """Self-consistent record: one round per gold span, then the answer."""
    gold = task.gold
    rounds = []
    for j, span in enumerate(gold.evidence_spans[: gold.reveal_round]):
        ev = gold.frames_in(span)
        extra = [float(t) for t in np.arange(span.start_s, span.end_s + 1e-9) if t not in ev]
        frames = sorted((ev + extra)[:per_iter])
        think = f"[T{j}] Need a closer look at {span.start_s:g}-{span.end_s:g}s."
        rounds.append(TrajectoryRound(render_target(TargetDecision(think, segment=span)),
                                      render_draft(frames)))
    rounds.append(TrajectoryRound(render_target(
        TargetDecision(f"[T{len(rounds)}] The evidence settles it.", answer=gold.answer))))
    return TrajectoryRecord(task.task_id, task.question, gold.answer, gold.evidence_spans,
                            gold.evidence_frames, tuple(rounds), task.duration_s, gold.options)


def synth_trajectories(n: int, seed: int = 0, mix: Sequence[float] = DEFAULT_MIX,
                       per_iter: int = 2) -> list[TrajectoryRecord]:
    return [trajectory_from_gold(t, per_iter) for t in synth_population(n, mix, seed)]


def session_to_record(task: Task, result: SessionResult, source: str = "session") -> TrajectoryRecord:
    """Transcript of a finished session in trajectory form (raw model text kept)."""
    recs = list(result.rounds)
    rounds = []
    for i, r in enumerate(recs):
        nxt = recs[i + 1] if i + 1 < len(recs) and recs[i + 1].kind == "round" else None
        rounds.append(TrajectoryRound(r.target_text, nxt.draft_text if nxt else None))
    gold = task.gold
    return TrajectoryRecord(task.task_id, task.question, gold.answer, gold.evidence_spans,
                            gold.evidence_frames, tuple(rounds), task.duration_s, gold.options,
                            source)


def jitter_segments(rec: TrajectoryRecord, fraction: float) -> TrajectoryRecord:
    """Shift every segment by ``fraction`` of its own length, leaving drafts untouched.

    Shifts go right unless that would leave the video, in which case they go
    left. For a same-length shift ``s`` of a span of length ``L`` the IoU is
    ``(L - s) / (L + s)``, so ``fraction > 1/3`` drops below 0.5.
    """
    out = []
    for rnd in rec.rounds:
        p = parse_target_output(rnd.target)
        if not p.format_ok or p.value is None or p.value.segment is None:
            out.append(rnd)
            continue
        seg = p.value.segment
        s = fraction * seg.length
        if seg.end_s + s <= rec.duration_s:
            moved = Segment(seg.start_s + s, seg.end_s + s)
        else:
            moved = Segment(max(0.0, seg.start_s - s), max(0.0, seg.end_s - s))
        out.append(replace(rnd, target=render_target(TargetDecision(p.value.think, segment=moved))))
    return replace(rec, rounds=tuple(out))
