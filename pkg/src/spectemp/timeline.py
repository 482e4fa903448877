"""Abstract video timelines and the two frame-sampling primitives.

A :class:`Timeline` is the only notion of "video" the engine has: a duration,
a native frame rate and one unit-norm feature vector per stored timestamp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import EmptyTimeline, SegmentOutOfRange

_NORM_TOL = 1e-6
_GRID_TOL = 1e-9


@dataclass(frozen=True)
class Segment:
    """Closed time interval ``[start_s, end_s]`` in seconds."""

    start_s: float
    end_s: float

    def __post_init__(self):
        if not (math.isfinite(self.start_s) and math.isfinite(self.end_s)):
            raise ValueError(f"segment endpoints must be finite: {self}")
        if self.start_s < 0 or self.start_s > self.end_s:
            raise ValueError(f"invalid segment ({self.start_s}, {self.end_s})")

    @property
    def length(self) -> float:
        return self.end_s - self.start_s

    def contains(self, t: float, tol: float = _GRID_TOL) -> bool:
        return self.start_s - tol <= t <= self.end_s + tol

    def as_tuple(self) -> tuple[float, float]:
        return (self.start_s, self.end_s)


@dataclass(frozen=True)
class FrameRef:
    timestamp_s: float
    features: np.ndarray = field(compare=False, repr=False)


class Timeline:
    """Immutable timestamp -> feature-vector map.

    Args:
        duration_s: Total length of the video in seconds.
        native_fps: Frame rate the timestamps were sampled at.
        timestamps: Strictly increasing timestamps inside ``[0, duration_s]``.
        features: ``(n, d)`` array of unit-norm rows, one per timestamp.
        metadata: Free-form string map carried along untouched.
    """

    def __init__(
        self,
        duration_s: float,
        native_fps: float,
        timestamps: Iterable[float],
        features,
        metadata: dict[str, str] | None = None,
    ):
        ts = np.asarray(list(timestamps) if not isinstance(timestamps, np.ndarray) else timestamps,
                        dtype=np.float64)
        feats = np.asarray(features, dtype=np.float64)
        if duration_s < 0 or not math.isfinite(duration_s):
            raise ValueError("duration_s must be a finite nonnegative number")
        if native_fps <= 0:
            raise ValueError("native_fps must be positive")
        if ts.ndim != 1:
            raise ValueError("timestamps must be one-dimensional")
        if len(ts):
            if feats.ndim != 2 or feats.shape[0] != len(ts):
                raise ValueError("features must be an (n, d) array aligned with timestamps")
            if ts[0] < 0 or ts[-1] > duration_s:
                raise ValueError("timestamps must lie in [0, duration_s]")
            if np.any(np.diff(ts) <= 0):
                raise ValueError("timestamps must be strictly increasing")
            norms = np.linalg.norm(feats, axis=1)
            if np.any(np.abs(norms - 1.0) > _NORM_TOL):
                raise ValueError("feature vectors must have unit L2 norm")
        else:
            feats = feats.reshape(0, feats.shape[-1] if feats.ndim == 2 else 0)
        ts.setflags(write=False)
        feats.setflags(write=False)
        self.duration_s = float(duration_s)
        self.native_fps = float(native_fps)
        self.timestamps = ts
        self.features = feats
        self.metadata = dict(metadata or {})

    @classmethod
    def from_features(cls, features, fps: float = 1.0, metadata=None) -> "Timeline":
        """Build a timeline whose frame ``i`` sits at ``i / fps``."""
        feats = np.asarray(features, dtype=np.float64)
        n = feats.shape[0]
        ts = np.arange(n, dtype=np.float64) / fps
        duration = float(ts[-1]) if n else 0.0
        return cls(duration, fps, ts, feats, metadata)

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def frame(self, index: int) -> FrameRef:
        return FrameRef(float(self.timestamps[index]), self.features[index])

    def frames_at(self, timestamps: Iterable[float]) -> list[FrameRef]:
        """Refs for timestamps already present on the timeline (snapped defensively)."""
        return [self.frame(i) for i in self.snap_indices(list(timestamps))]

    def snap_index(self, t: float) -> int:
        """Index of the stored timestamp nearest ``t``; ties go to the earlier frame."""
        if not len(self):
            raise EmptyTimeline("timeline has no frames")
        ts = self.timestamps
        j = int(np.searchsorted(ts, t, side="left"))
        if j <= 0:
            return 0
        if j >= len(ts):
            return len(ts) - 1
        return j - 1 if (t - ts[j - 1]) <= (ts[j] - t) else j

    def snap_indices(self, targets) -> list[int]:
        return [self.snap_index(float(t)) for t in targets]

    def clamp(self, seg: Segment) -> Segment:
        """Clip ``seg`` to ``[0, duration]``; raise if nothing is left."""
        if seg.start_s > self.duration_s + _GRID_TOL:
            raise SegmentOutOfRange(
                f"segment ({seg.start_s}, {seg.end_s}) lies outside [0, {self.duration_s}]")
        return Segment(max(0.0, seg.start_s), min(self.duration_s, seg.end_s))

    # -- file format -----------------------------------------------------

    def save(self, path) -> None:
        lines = [f"{self.duration_s!r}\t{self.native_fps!r}\t{self.dim}"]
        for t, v in zip(self.timestamps, self.features):
            lines.append(f"{float(t)!r}\t" + ",".join(repr(float(x)) for x in v))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Timeline":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split("\t")
            if len(header) != 3:
                raise ValueError(f"{path}: header must be 'duration_s<TAB>native_fps<TAB>dim'")
            duration, fps, dim = float(header[0]), float(header[1]), int(header[2])
            ts, rows = [], []
            for lineno, line in enumerate(fh, start=2):
                line = line.rstrip("\n")
                if not line:
                    continue
                t, _, vec = line.partition("\t")
                values = [float(x) for x in vec.split(",")]
                if len(values) != dim:
                    raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(values)}")
                ts.append(float(t))
                rows.append(values)
        return cls(duration, fps, ts, np.asarray(rows).reshape(len(rows), dim))


def uniform_sample(tl: Timeline, k: int) -> list[FrameRef]:
    """Pick ``min(k, len(tl))`` frames nearest the centred grid ``(i + 0.5) * duration / k``.

    When two targets snap onto the same stored frame the later one moves to
    the closest frame not yet taken, so the result always has the full count.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(tl)
    if n == 0:
        raise EmptyTimeline("cannot sample an empty timeline")
    count = min(k, n)
    targets = [(i + 0.5) * tl.duration_s / k for i in range(k)]
    taken: set[int] = set()
    for tau in targets:
        if len(taken) == count:
            break
        j = tl.snap_index(tau)
        if j in taken:
            j = _nearest_free(tl.timestamps, tau, j, taken)
        taken.add(j)
    return [tl.frame(j) for j in sorted(taken)]


def _nearest_free(ts: np.ndarray, tau: float, j: int, taken: set[int]) -> int:
    lo, hi = j - 1, j + 1
    while lo in taken:
        lo -= 1
    while hi in taken:
        hi += 1
    if lo < 0:
        return hi
    if hi >= len(ts):
        return lo
    return lo if (tau - ts[lo]) <= (ts[hi] - tau) else hi


def dense_sample(tl: Timeline, seg: Segment, fps: float) -> list[FrameRef]:
    """Frames on the grid ``start, start + 1/fps, ...`` (end inclusive) inside ``seg``."""
    if fps <= 0:
        raise ValueError("fps must be positive")
    if len(tl) == 0:
        raise EmptyTimeline("cannot sample an empty timeline")
    seg = tl.clamp(seg)
    steps = int(math.floor((seg.end_s - seg.start_s) * fps + _GRID_TOL))
    grid = [seg.start_s + i / fps for i in range(steps + 1)]
    picked = sorted(set(tl.snap_indices(grid)))
    return [tl.frame(j) for j in picked]


def frame_budget(init_k: int, per_iter: int, t_max: int) -> int:
    """Worst-case number of frames the target model is shown in one session."""
    if min(init_k, per_iter, t_max) < 0:
        raise ValueError("budget components must be nonnegative")
    return init_k + per_iter * t_max
