from .metrics import MetricsReport, aggregate_metrics, efficiency, write_csv, write_niah_matrix
from .records import (
    ANSWER_MISMATCH,
    BAD_GRAMMAR,
    FRAME_OUTSIDE,
    LOW_IOU,
    TrajectoryRecord,
    TrajectoryRound,
    ValidationFailure,
    ValidationReport,
    duration_class,
    failure_histogram,
    read_records,
    validate_trajectory,
    write_records,
)
from .synth import (
    DEFAULT_MIX,
    NiahSpec,
    Task,
    apportion,
    jitter_segments,
    session_to_record,
    synth_niah,
    synth_population,
    synth_trajectories,
    trajectory_from_gold,
)

__all__ = [
    "ANSWER_MISMATCH", "BAD_GRAMMAR", "DEFAULT_MIX", "FRAME_OUTSIDE", "LOW_IOU",
    "MetricsReport", "NiahSpec", "Task", "TrajectoryRecord", "TrajectoryRound",
    "ValidationFailure", "ValidationReport", "aggregate_metrics", "apportion",
    "duration_class", "efficiency", "failure_histogram", "jitter_segments", "read_records",
    "session_to_record", "synth_niah", "synth_population", "synth_trajectories",
    "trajectory_from_gold", "validate_trajectory", "write_csv", "write_niah_matrix",
    "write_records",
]
