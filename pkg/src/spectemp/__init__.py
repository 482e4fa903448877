"""Speculative temporal reasoning over long video timelines with a target/draft model pair."""

from .grpo import GrpoConfig, Rollout, evaluate, group_advantages, grpo_objective
from .latency import CostModel, StageCoefficients, simulate_latency, single_model_latency
from .orchestrator import SessionConfig, SessionResult, mean_iterations, run_session
from .protocol import parse_draft_output, parse_target_output, render_draft, render_target
from .rewards import answer_reward, format_reward, temporal_iou, visual_gain
from .timeline import FrameRef, Segment, Timeline, dense_sample, frame_budget, uniform_sample

__version__ = "0.1.0"

__all__ = [
    "CostModel",
    "FrameRef",
    "GrpoConfig",
    "Rollout",
    "Segment",
    "SessionConfig",
    "SessionResult",
    "StageCoefficients",
    "Timeline",
    "answer_reward",
    "dense_sample",
    "evaluate",
    "format_reward",
    "frame_budget",
    "group_advantages",
    "grpo_objective",
    "mean_iterations",
    "parse_draft_output",
    "parse_target_output",
    "render_draft",
    "render_target",
    "run_session",
    "simulate_latency",
    "single_model_latency",
    "temporal_iou",
    "uniform_sample",
    "visual_gain",
]
