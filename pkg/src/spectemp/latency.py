"""Linear stage-cost model for simulated inference latency.

Each model call is charged four stages: vision encoding and projection per
frame, LLM prefill per input token (frame tokens plus prompt text), and decode
per generated token.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import TYPE_CHECKING, Iterable

if TYPE_CHECKING:
    from .orchestrator import RoundRecord

STAGES = ("vision", "projector", "prefill", "decode")


@dataclass(frozen=True)
class StageCoefficients:
    vision_per_frame: float
    projector_per_frame: float
    prefill_per_token: float
    decode_per_token: float

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))


# Defaults put a 16-frame single pass on the target near 2.1 s and a 10-frame
# session that converges after one 2-frame round near 1.8 s (60 prompt tokens,
# 20 decoded tokens per target call, 5 dense frames). Prefill dominates.
TARGET_7B = StageCoefficients(
    vision_per_frame=0.015, projector_per_frame=0.003,
    prefill_per_token=4.2e-4, decode_per_token=0.003)
DRAFT_3B = StageCoefficients(
    vision_per_frame=0.006, projector_per_frame=0.001,
    prefill_per_token=0.6e-4, decode_per_token=0.0015)


@dataclass(frozen=True)
class CostModel:
    target: StageCoefficients = TARGET_7B
    draft: StageCoefficients = DRAFT_3B
    tokens_per_frame: int = 256

    def __post_init__(self):
        if self.tokens_per_frame < 0:
            raise ValueError("tokens_per_frame must be >= 0")
        if any(d > t for d, t in zip(self.draft.values(), self.target.values())):
            raise ValueError("draft coefficients must not exceed target coefficients")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CostModel":
        return cls(StageCoefficients(**data["target"]), StageCoefficients(**data["draft"]),
                   int(data["tokens_per_frame"]))


@dataclass(frozen=True)
class LatencyBreakdown:
    target_vision: float = 0.0
    target_projector: float = 0.0
    target_prefill: float = 0.0
    target_decode: float = 0.0
    draft_vision: float = 0.0
    draft_projector: float = 0.0
    draft_prefill: float = 0.0
    draft_decode: float = 0.0
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", sum(self.stage_values()))

    def stage_values(self) -> tuple[float, ...]:
        return tuple(getattr(self, f.name) for f in fields(self) if f.name != "total")

    def __add__(self, other: "LatencyBreakdown") -> "LatencyBreakdown":
        return LatencyBreakdown(*(a + b for a, b in zip(self.stage_values(), other.stage_values())))

    def to_dict(self) -> dict:
        return asdict(self)


def charge(coeffs: StageCoefficients, frames: int, text_tokens: int, decode_tokens: int,
           tokens_per_frame: int) -> tuple[float, float, float, float]:
    """Stage times for a single model call."""
    return (
        frames * coeffs.vision_per_frame,
        frames * coeffs.projector_per_frame,
        (frames * tokens_per_frame + text_tokens) * coeffs.prefill_per_token,
        decode_tokens * coeffs.decode_per_token,
    )


def round_latency(rec: "RoundRecord", cm: CostModel, *, draft_as_target: bool = False) -> LatencyBreakdown:
    tv, tp, tf, td = charge(cm.target, rec.target_frames, rec.target_prompt_tokens,
                            rec.target_decode_tokens, cm.tokens_per_frame)
    dv = dp = df = dd = 0.0
    if rec.dense_count:
        coeffs = cm.target if draft_as_target else cm.draft
        dv, dp, df, dd = charge(coeffs, rec.dense_count, rec.draft_prompt_tokens,
                                rec.draft_decode_tokens, cm.tokens_per_frame)
    if draft_as_target:
        return LatencyBreakdown(tv + dv, tp + dp, tf + df, td + dd)
    return LatencyBreakdown(tv, tp, tf, td, dv, dp, df, dd)


def simulate_latency(rounds: Iterable["RoundRecord"], cm: CostModel) -> LatencyBreakdown:
    """Sum of per-call charges: draft stages on dense frames, target stages on sparse frames.

    Only frames newly delivered in a call are charged; a call that reuses
    frames already in context (the forced final answer) pays for its text only.
    """
    total = LatencyBreakdown()
    for rec in rounds:
        total = total + round_latency(rec, cm)
    return total


def single_model_latency(rounds: Iterable["RoundRecord"], cm: CostModel) -> LatencyBreakdown:
    """Replay the same session with the target model doing the dense exploration itself.

    Every dense frame is encoded and prefilled at target rates and the frame
    selection is decoded by the target; all charges land on the target stages.
    """
    total = LatencyBreakdown()
    for rec in rounds:
        total = total + round_latency(rec, cm, draft_as_target=True)
    return total
