"""Result models for experiment trials and their cross-seed aggregation."""

import logging
from typing import Dict, List, Optional

import pandas as pd
from pydantic import BaseModel, Field, model_validator

logger = logging.getLogger(__name__)

# Fields that vary from run to run and are ignored by determinism checks
TIMING_FIELDS = ("wall_time", "peak_rss_kib")


class WallTime(BaseModel):
    online_learning: float = Field(ge=0)
    episodic_memory_usage: float = Field(ge=0)
    overall: float = Field(ge=0)

    @model_validator(mode="after")
    def _overall_covers_stages(self):
        if self.overall < max(self.online_learning, self.episodic_memory_usage):
            raise ValueError("overall wall time must cover each stage")
        return self


class TaskTrace(BaseModel):
    task_index: int
    online_loss: float
    test_accuracy: Optional[float] = Field(None, ge=0, le=1)
    memory_clean_ratio: float = Field(ge=0, le=1)
    memory_size: int
    evictions: int


class Metrics(BaseModel):
    last_test_accuracy: float = Field(ge=0, le=1)
    last_memory_clean_ratio: float = Field(ge=0, le=1)
    group_size_histogram: Dict[int, int]
    group_gap: int
    per_task: List[TaskTrace]
    wall_time: WallTime
    peak_rss_kib: int = Field(
        description=(
            "Resident-memory high-water mark of the whole process in KiB, read when the "
            "trial ends. It never decreases, so it includes every earlier trial run in "
            "the same process."
        )
    )
    stream_digest: str


class TrialError(BaseModel):
    error_type: str
    message: str

    @classmethod
    def from_exception(cls, exc: BaseException) -> "TrialError":
        return cls(error_type=type(exc).__name__, message=str(exc))


class TrialResult(BaseModel):
    seed: int
    sampler: str
    metrics: Optional[Metrics] = None
    error: Optional[TrialError] = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.metrics is not None


class MetricSummary(BaseModel):
    mean: float
    std: float


def flatten_metrics(metrics: Metrics) -> Dict[str, float]:
    """Scalar metrics of one trial, keyed by the names used in aggregates."""
    return {
        "last_test_accuracy": metrics.last_test_accuracy,
        "last_memory_clean_ratio": metrics.last_memory_clean_ratio,
        "group_gap": float(metrics.group_gap),
        "wall_time.online_learning": metrics.wall_time.online_learning,
        "wall_time.episodic_memory_usage": metrics.wall_time.episodic_memory_usage,
        "wall_time.overall": metrics.wall_time.overall,
        "peak_rss_kib": float(metrics.peak_rss_kib),
    }


def aggregate_trials(trials: List[TrialResult]) -> Dict[str, MetricSummary]:
    """Mean and sample standard deviation (n - 1) over successful trials.

    A single trial reports a std of 0.
    """
    rows = [flatten_metrics(t.metrics) for t in trials if t.ok]
    if not rows:
        logger.warning("No successful trials to aggregate")
        return {}
    frame = pd.DataFrame(rows)
    means = frame.mean()
    stds = frame.std(ddof=1).fillna(0.0)
    return {
        name: MetricSummary(mean=float(means[name]), std=float(stds[name]))
        for name in frame.columns
    }
