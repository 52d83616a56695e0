"""Tests for expectation estimates with confidence intervals."""

import numpy as np
import pytest

from spen import ConfigError, mean_estimate


def test_mean_estimate_known_values():
    est = mean_estimate([1.0, 2.0, 3.0, 4.0])
    assert est.mean == 2.5
    want_se = np.std([1.0, 2.0, 3.0, 4.0], ddof=1) / 2.0
    assert abs(est.stderr - want_se) < 1e-15
    assert abs(est.ci95_high - (2.5 + 1.959963984540054 * want_se)) < 1e-12
    assert abs(est.ci95_low - (2.5 - 1.959963984540054 * want_se)) < 1e-12
    assert est.count == 4


def test_mean_estimate_degenerate_cases():
    const = mean_estimate(np.full(10, 3.25))
    assert const.mean == 3.25 and const.stderr == 0.0
    assert const.ci95_low == const.ci95_high == 3.25
    single = mean_estimate([7.0])
    assert single.mean == 7.0 and single.stderr == 0.0 and single.count == 1


def test_mean_estimate_coverage():
    # the 95% interval should cover the true mean at roughly that rate
    hits = 0
    for seed in range(300):
        rng = np.random.default_rng(seed)
        est = mean_estimate(rng.normal(1.5, 2.0, size=100))
        hits += est.ci95_low <= 1.5 <= est.ci95_high
    assert hits >= 300 * 0.90


def test_mean_estimate_rejects_bad_input():
    with pytest.raises(ConfigError):
        mean_estimate([])
    with pytest.raises(ConfigError):
        mean_estimate(np.zeros((3, 2)))
