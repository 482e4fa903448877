"""Benchmark aggregation and CSV export."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

from ..adapters.oracle import GoldSpec
from ..errors import AlignmentError, EmptyInput
from ..orchestrator import SessionResult
from ..rewards import answer_reward


def efficiency(accuracy_pct: float, latency_s: float) -> float:
    """Accuracy (%) per second of latency, rounded half-up to one decimal."""
    if latency_s <= 0:
        return math.inf
    return float(Decimal(repr(accuracy_pct / latency_s)).quantize(Decimal("0.1"), ROUND_HALF_UP))


@dataclass(frozen=True)
class MetricsReport:
    n: int
    accuracy: float
    latency_s: float
    frames: float
    iterations: float
    efficiency: float

    def to_dict(self) -> dict:
        return asdict(self)


def aggregate_metrics(results: Sequence[SessionResult], golds: Sequence[GoldSpec]) -> MetricsReport:
    if len(results) != len(golds):
        raise AlignmentError(f"{len(results)} results vs {len(golds)} gold specs")
    if not results:
        raise EmptyInput("no sessions to aggregate")
    n = len(results)
    correct = sum(answer_reward(r.answer, g.answer, g.options) for r, g in zip(results, golds))
    acc = 100.0 * correct / n
    lat = sum(r.latency.total for r in results) / n
    return MetricsReport(
        n=n,
        accuracy=acc,
        latency_s=lat,
        frames=sum(r.total_target_frames for r in results) / n,
        iterations=sum(r.rounds_used for r in results) / n,
        efficiency=efficiency(acc, lat),
    )


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def write_csv(path, rows: Sequence[dict]) -> None:
    if not rows:
        raise EmptyInput("nothing to write")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})


def write_niah_matrix(path, depths: Sequence[float], lengths: Sequence[int],
                      acc: dict[tuple[float, int], float]) -> None:
    """Depth rows by haystack-length columns, accuracy in [0, 1] per cell."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["depth"] + [str(n) for n in lengths])
        for d in depths:
            w.writerow([f"{d:g}"] + [f"{acc[(d, n)]:.4f}" for n in lengths])
