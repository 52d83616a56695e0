"""Tests for random streams, stochastic oracles, and problem containers."""

import numpy as np
import pytest

from spen import (
    ConfigError,
    ConstrainedProblem,
    CountingOracle,
    DomainError,
    GaussianOracle,
    OracleKindError,
    ProblemConstants,
    RandomStream,
    estimate_constants,
    eval_constraints,
    sample_sfo,
    sample_szo,
    spectral_norm,
)


def _quad_problem(sigma=0.0, with_true=True):
    """min 0.5*||x||^2 subject to x1 + x2 = 1 on the square [-1, 1]^2."""
    value = lambda x: 0.5 * float((np.asarray(x) ** 2).sum(axis=-1))
    grad = lambda x: np.asarray(x, dtype=float)
    cons = lambda x: (np.array([x[0] + x[1] - 1.0]), np.array([[1.0, 1.0]]))
    return ConstrainedProblem(
        n=2,
        q=1,
        constraints=cons,
        oracle=GaussianOracle(value=lambda x: 0.5 * float((np.asarray(x) ** 2).sum(axis=-1))
                              if np.asarray(x).ndim == 1
                              else 0.5 * (np.asarray(x) ** 2).sum(axis=-1),
                              grad=grad, sigma=sigma),
        constants=ProblemConstants(L_g=1.0, sigma=sigma),
        true_objective=(lambda x: (0.5 * float(x @ x), x.copy())) if with_true else None,
        box=(np.array([-1.0, -1.0]), np.array([1.0, 1.0])),
    )


def test_stream_repeatable():
    for seed in (0, 1, 17, 2**31):
        a = RandomStream(seed).generator().standard_normal(8)
        b = RandomStream(seed).generator().standard_normal(8)
        assert np.array_equal(a, b)


def test_stream_children_differ():
    root = RandomStream(42)
    draws = [root.child(i).generator().standard_normal(4) for i in range(6)]
    draws.append(root.generator().standard_normal(4))
    for i in range(len(draws)):
        for j in range(i + 1, len(draws)):
            assert not np.array_equal(draws[i], draws[j])


def test_stream_child_path_composition():
    root = RandomStream(7)
    assert root.child(1, 2) == root.child(1).child(2)
    assert root.child(3).path == (3,)
    a = root.child(1, 2).generator().standard_normal(4)
    b = root.child(1).child(2).generator().standard_normal(4)
    assert np.array_equal(a, b)


def test_stream_order_independent():
    # generators are built from scratch, so sibling draws never interact
    root = RandomStream(5)
    first = root.child(2).generator().standard_normal(3)
    root.child(1).generator().standard_normal(1000)
    second = root.child(2).generator().standard_normal(3)
    assert np.array_equal(first, second)


def test_stream_immutable():
    with pytest.raises(Exception):
        RandomStream(0).seed = 1


def test_oracle_noiseless_exact():
    orc = GaussianOracle(value=lambda x: float(x @ x), grad=lambda x: 2.0 * x, sigma=0.0)
    rng = np.random.default_rng(0)
    x = np.array([1.0, -2.0])
    assert np.array_equal(orc.sample_gradient(x, rng), np.array([2.0, -4.0]))
    assert orc.sample_value(x, rng) == 5.0


def test_oracle_gradient_second_moment():
    # mean squared deviation of one gradient draw equals sigma^2 by design
    sigma = 0.7
    orc = GaussianOracle(grad=lambda x: np.zeros(5), sigma=sigma)
    rng = np.random.default_rng(3)
    draws = orc.gradient_batch(np.zeros(5), 4000, rng)
    msq = float((draws**2).sum(axis=1).mean())
    assert 0.9 * sigma**2 <= msq <= 1.1 * sigma**2


def test_oracle_batch_mean_variance_scaling():
    sigma, m = 0.8, 16
    orc = GaussianOracle(grad=lambda x: np.zeros(4), sigma=sigma)
    rng = np.random.default_rng(11)
    errs = []
    for _ in range(1500):
        bm = orc.gradient_batch(np.zeros(4), m, rng).mean(axis=0)
        errs.append(float(bm @ bm))
    msq = float(np.mean(errs))
    assert 0.85 * sigma**2 / m <= msq <= 1.15 * sigma**2 / m


def test_oracle_value_noise_level():
    sigma = 0.5
    orc = GaussianOracle(value=lambda x: 0.0, sigma=sigma, vectorized=False)
    rng = np.random.default_rng(9)
    vals = np.array([orc.sample_value(np.zeros(2), rng) for _ in range(4000)])
    assert abs(vals.mean()) < 5.0 * sigma / np.sqrt(4000)
    assert 0.9 * sigma**2 <= vals.var() <= 1.1 * sigma**2


def test_value_pair_shares_noise():
    # paired draws share one noise realization, so differences are exact
    orc = GaussianOracle(value=lambda x: float(x[0]), sigma=2.0, vectorized=False)
    rng = np.random.default_rng(1)
    for _ in range(50):
        xa, xb = rng.standard_normal(3), rng.standard_normal(3)
        fa, fb = orc.sample_value_pair(xa, xb, rng)
        assert abs((fa - fb) - (xa[0] - xb[0])) < 1e-12


def test_value_pair_batch_matches_loop():
    value = lambda x: float((np.asarray(x) ** 3).sum()) if np.asarray(x).ndim == 1 else (
        np.asarray(x) ** 3).sum(axis=-1)
    vec = GaussianOracle(value=value, sigma=0.4, vectorized=True)
    loop = GaussianOracle(value=value, sigma=0.4, vectorized=False)
    rng = np.random.default_rng(2)
    xa = rng.standard_normal((6, 3))
    xb = rng.standard_normal((6, 3))
    fa1, fb1 = vec.value_pair_batch(xa, xb, np.random.default_rng(77))
    fa2, fb2 = loop.value_pair_batch(xa, xb, np.random.default_rng(77))
    assert np.allclose(fa1, fa2, atol=1e-12)
    assert np.allclose(fb1, fb2, atol=1e-12)
    # row-wise noise cancels in the difference
    exact = value(xa) - value(xb)
    assert np.allclose(fa1 - fb1, exact, atol=1e-12)


def test_oracle_kind_errors():
    grad_only = GaussianOracle(grad=lambda x: x)
    value_only = GaussianOracle(value=lambda x: 0.0)
    rng = np.random.default_rng(0)
    with pytest.raises(OracleKindError):
        grad_only.sample_value(np.zeros(2), rng)
    with pytest.raises(OracleKindError):
        grad_only.sample_value_pair(np.zeros(2), np.zeros(2), rng)
    with pytest.raises(OracleKindError):
        value_only.sample_gradient(np.zeros(2), rng)
    with pytest.raises(ConfigError):
        GaussianOracle(grad=lambda x: x, sigma=-0.1)


def test_counting_oracle_ledger():
    orc = CountingOracle(GaussianOracle(value=lambda x: 0.0 * np.asarray(x).sum(axis=-1),
                                        grad=lambda x: np.zeros(3), sigma=0.1))
    rng = np.random.default_rng(0)
    orc.sample_gradient(np.zeros(3), rng)
    assert orc.calls == 1
    orc.gradient_batch(np.zeros(3), 7, rng)
    assert orc.calls == 8
    orc.sample_value(np.zeros(3), rng)
    assert orc.calls == 9
    orc.sample_value_pair(np.zeros(3), np.ones(3), rng)
    assert orc.calls == 11
    orc.value_pair_batch(np.zeros((5, 3)), np.ones((5, 3)), rng)
    assert orc.calls == 21
    assert orc.sigma == 0.1
    assert orc.has_gradient and orc.has_value


def test_eval_constraints_shapes():
    prob = _quad_problem()
    c, jac = eval_constraints(prob, np.array([0.25, 0.5]))
    assert c.shape == (1,) and jac.shape == (1, 2)
    assert abs(c[0] + 0.25) < 1e-15
    with pytest.raises(DomainError):
        eval_constraints(prob, np.zeros(3))


def test_eval_constraints_rejects_bad_returns():
    bad_c = ConstrainedProblem(
        n=2, q=1,
        constraints=lambda x: (np.array([1.0, 2.0]), np.ones((1, 2))),
        oracle=GaussianOracle(grad=lambda x: x),
    )
    with pytest.raises(DomainError):
        eval_constraints(bad_c, np.zeros(2))
    bad_j = ConstrainedProblem(
        n=2, q=1,
        constraints=lambda x: (np.array([1.0]), np.ones((2, 2))),
        oracle=GaussianOracle(grad=lambda x: x),
    )
    with pytest.raises(DomainError):
        eval_constraints(bad_j, np.zeros(2))
    nan_c = ConstrainedProblem(
        n=2, q=1,
        constraints=lambda x: (np.array([np.nan]), np.ones((1, 2))),
        oracle=GaussianOracle(grad=lambda x: x),
    )
    with pytest.raises(DomainError):
        eval_constraints(nan_c, np.zeros(2))


def test_sample_helpers_and_kinds():
    prob = _quad_problem(sigma=0.0)
    s = sample_sfo(prob, np.array([1.0, 2.0]), RandomStream(0, (4,)))
    assert s.kind == "sfo" and s.seed_path == (4,)
    assert np.array_equal(s.payload, np.array([1.0, 2.0]))
    v = sample_szo(prob, np.array([1.0, 2.0]), RandomStream(0))
    assert v.kind == "szo" and v.payload == 2.5
    grad_only = ConstrainedProblem(
        n=1, q=1,
        constraints=lambda x: (np.zeros(1), np.zeros((1, 1))),
        oracle=GaussianOracle(grad=lambda x: x),
    )
    with pytest.raises(OracleKindError):
        sample_szo(grad_only, np.zeros(1), RandomStream(0))


def test_true_value_grad_requires_exact_objective():
    prob = _quad_problem(with_true=False)
    with pytest.raises(OracleKindError):
        prob.true_value_grad(np.zeros(2))


def test_constants_require():
    consts = ProblemConstants(L_g=1.0)
    consts.require("L_g")
    with pytest.raises(ConfigError, match="L_J"):
        consts.require("L_g", "L_J")
    with pytest.raises(ConfigError):
        ProblemConstants(L_g=-1.0).require("L_g")
    with pytest.raises(ConfigError):
        ProblemConstants(sigma=-0.5).require("sigma")


def test_spectral_norm():
    assert spectral_norm(np.zeros((3, 2))) == 0.0
    assert abs(spectral_norm(np.array([[3.0, 0.0], [0.0, 4.0]])) - 4.0) < 1e-12
    assert abs(spectral_norm(np.array([[1.0, 1.0]])) - np.sqrt(2.0)) < 1e-12


def test_estimate_constants_passthrough_and_fill():
    full = _quad_problem()
    declared = ProblemConstants(L_g=1.0, L_J=0.5, sigma=0.0, f_low=0.0,
                                kappa_g=2.0, kappa_c=1.0, kappa_f=1.0, kappa_J=2.0)
    prob = ConstrainedProblem(
        n=2, q=1, constraints=full.constraints, oracle=full.oracle,
        constants=declared, box=full.box,
    )
    assert estimate_constants(prob, 50, RandomStream(0)) is declared

    est = estimate_constants(_quad_problem(), 200, RandomStream(1))
    # gradient of 0.5*||x||^2 has difference quotient exactly 1, inflated by 1.5
    assert abs(est.L_J) < 1e-12
    assert 1.0 <= est.kappa_g <= 1.5 * np.sqrt(2.0) + 1e-12
    assert est.f_low is not None and est.f_low <= 0.0
    assert est.kappa_c is not None and est.kappa_c >= 1.0
    assert est.kappa_J is not None and abs(est.kappa_J - 1.5 * np.sqrt(2.0)) < 1e-9


def test_estimate_constants_errors():
    nobox = ConstrainedProblem(
        n=2, q=1,
        constraints=lambda x: (np.zeros(1), np.zeros((1, 2))),
        oracle=GaussianOracle(grad=lambda x: x),
    )
    with pytest.raises(ConfigError):
        estimate_constants(nobox, 50, RandomStream(0))
    with pytest.raises(ConfigError):
        estimate_constants(_quad_problem(), 1, RandomStream(0))
