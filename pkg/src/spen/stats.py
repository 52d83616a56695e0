"""Aggregation helpers for replicated experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = ["Z_95", "ExpectationEstimate", "mean_estimate"]

Z_95 = 1.959963984540054  # two-sided 95% normal quantile


@dataclass(frozen=True)
class ExpectationEstimate:
    """Sample mean with a normal-approximation 95% confidence interval."""

    mean: float
    stderr: float
    ci95_low: float
    ci95_high: float
    count: int


def mean_estimate(values: np.ndarray | list[float]) -> ExpectationEstimate:
    """Mean, standard error, and 95% CI of a sample of scalars."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ConfigError("mean estimate needs a nonempty 1-d sample")
    mean = float(arr.mean())
    stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return ExpectationEstimate(
        mean=mean,
        stderr=stderr,
        ci95_low=mean - Z_95 * stderr,
        ci95_high=mean + Z_95 * stderr,
        count=int(arr.size),
    )
