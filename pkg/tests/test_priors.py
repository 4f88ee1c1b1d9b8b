import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from physres.priors import (
    DEFAULT_TAU,
    PriorError,
    WeightPrior,
    build_prior,
    kl_gaussian,
    match_moments,
    separation_scores,
)


def test_moments_of_1_2_3():
    m = match_moments(np.array([[1.0], [2.0], [3.0]]), [4, 4, 4])
    assert m.mu[0, 0] == 2.0 and m.var[0, 0] == 1.0 and m.counts.tolist() == [3]


def test_constant_samples():
    m = match_moments(np.full((5, 2), 3.5), [1] * 5)
    assert np.all(m.mu == 3.5) and np.all(m.var == 0.0)


def test_single_row_class_named():
    X = np.zeros((4, 2))
    with pytest.raises(PriorError, match="class 9"):
        match_moments(X, [1, 1, 1, 9])


def test_build_prior_arithmetic():
    m = match_moments(np.array([[1.0], [2.0], [3.0]]), [1, 1, 1])
    p = build_prior(m, 0.1)
    assert p.mean[0, 0] == 2.0
    assert p.var[0, 0] == pytest.approx(1.01, abs=1e-15)
    zero = build_prior(match_moments(np.ones((3, 1)), [1] * 3), 0.1)
    assert zero.var[0, 0] == pytest.approx(0.01, abs=1e-15)


def test_negative_tau():
    m = match_moments(np.array([[1.0], [2.0]]), [1, 1])
    with pytest.raises(PriorError):
        build_prior(m, -0.1)


def test_default_tau():
    assert DEFAULT_TAU == 0.05


def test_prior_dict_round_trip():
    m = match_moments(np.random.default_rng(0).standard_normal((10, 3)), [1] * 5 + [2] * 5)
    p = build_prior(m, 0.05)
    q = WeightPrior.from_dict(p.to_dict())
    assert np.array_equal(q.mean, p.mean) and np.array_equal(q.var, p.var) and q.classes == (1, 2)


def test_kl_examples():
    assert kl_gaussian(0.3, 2.0, 0.3, 2.0) == 0.0
    assert kl_gaussian(1.0, 1.0, 0.0, 1.0) == pytest.approx(0.5, abs=1e-15)
    assert kl_gaussian(0.0, 4.0, 0.0, 1.0) == pytest.approx(0.80685, abs=1e-5)
    assert kl_gaussian(0.0, 4.0, 0.0, 1.0) == pytest.approx(math.log(0.5) + 1.5, abs=1e-15)


@pytest.mark.parametrize("args", [(0, 0, 0, 1), (0, 1, 0, 0), (0, -1, 0, 1)])
def test_kl_rejects_nonpositive_variance(args):
    with pytest.raises(PriorError):
        kl_gaussian(*args)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(-10, 10), st.floats(1e-3, 10), st.floats(-10, 10), st.floats(1e-3, 10)
)
def test_kl_nonnegative(qm, qv, pm, pv):
    assert kl_gaussian(qm, qv, pm, pv) >= -1e-12
    assert abs(kl_gaussian(qm, qv, qm, qv)) <= 1e-12


def test_kl_broadcasts_elementwise():
    q_mean = np.array([[0.0, 1.0]])
    out = kl_gaussian(q_mean, np.ones((1, 2)), 0.0, 1.0)
    assert out.shape == (1, 2) and out[0, 1] == pytest.approx(0.5)


def test_separation_scores():
    X = np.array([[0.0, 5.0], [0.2, 5.1], [4.0, 5.0], [4.2, 5.1]])
    p = build_prior(match_moments(X, [1, 1, 2, 2]), 0.05)
    s = separation_scores(p)
    assert s[0] > 100 * s[1]
