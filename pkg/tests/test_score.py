import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from unsure_lab.errors import ConfigError, DimensionMismatch
from unsure_lab.models import (CirculantGaussian, IsotropicGaussian, NoisyMarginal, fisher_information,
                               gaussian, sample_measurements, two_deltas)
from unsure_lab.score import (CorrelatedMarginal, ScoreMoments, accumulate_moments, analytic_field,
                              autocorrelation, eval_score, fd_divergence, fd_jacobian, learned_field,
                              tabulated_field)


def test_eval_score_shape_checks():
    field = analytic_field(NoisyMarginal(gaussian(), 0.25))
    field.n = 3
    with pytest.raises(DimensionMismatch):
        eval_score(field, np.zeros((2, 4)))
    bad = learned_field(lambda y: y[..., :1])
    with pytest.raises(DimensionMismatch):
        eval_score(bad, np.zeros((2, 4)))


def test_tabulated_field_interpolates():
    g = np.linspace(-1, 1, 5)
    f = tabulated_field(g, -2 * g)
    np.testing.assert_allclose(f(np.array([0.25, -0.75])), [-0.5, 1.5])


def test_moments_gaussian_prior():
    m = NoisyMarginal(gaussian(), 0.25)
    d = sample_measurements(gaussian(), IsotropicGaussian(0.25), 4, 100000, 0)
    mom = accumulate_moments(analytic_field(m), d, r=1)
    assert mom.trace_H / 4 == pytest.approx(1 / 1.0625, rel=0.02)
    np.testing.assert_allclose(mom.H, np.eye(4) / 1.0625, atol=0.02)
    assert mom.autocorr_h.shape == (3,)
    # h_{0,1} = E s = 0
    assert abs(mom.h(0, 1)) < 0.05


def test_moments_json_round_trip():
    d = sample_measurements(two_deltas(), IsotropicGaussian(0.25), 3, 50, 0)
    mom = accumulate_moments(analytic_field(NoisyMarginal(two_deltas(), 0.25)), d)
    back = ScoreMoments.from_dict(json.loads(mom.to_json()))
    np.testing.assert_array_equal(back.H, mom.H)
    assert back.sample_count == 50


def test_lag_radius_validation():
    d = sample_measurements(two_deltas(), IsotropicGaussian(0.25), 4, 10, 0)
    f = analytic_field(NoisyMarginal(two_deltas(), 0.25))
    with pytest.raises(ConfigError):
        accumulate_moments(f, d, r=2)
    with pytest.raises(ConfigError):
        accumulate_moments(f, d, r=-1)


@given(st.integers(3, 9), st.integers(0, 2**31 - 1))
def test_autocorrelation_of_circulant_matrix(n, seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(n)
    H = np.array([[c[(j - i) % n] for j in range(n)] for i in range(n)])
    r = (n - 1) // 2
    h = autocorrelation(H, r)
    np.testing.assert_allclose(h, [c[lag % n] for lag in range(-r, r + 1)], atol=1e-12)


def test_moments_do_not_depend_on_chunk_boundaries():
    m = NoisyMarginal(two_deltas(), 0.25)
    d = sample_measurements(two_deltas(), IsotropicGaussian(0.25), 2, 20000, 5)
    a = accumulate_moments(analytic_field(m), d)
    b = accumulate_moments(analytic_field(m), d)
    np.testing.assert_array_equal(a.H, b.H)
    assert a.trace_H / 2 == pytest.approx(fisher_information(m), rel=0.03)


def test_correlated_marginal_reduces_to_isotropic():
    m = NoisyMarginal(two_deltas(), 0.3)
    cm = CorrelatedMarginal(two_deltas(), 0.09 * np.eye(3))
    y = np.random.default_rng(0).standard_normal((5, 3))
    np.testing.assert_allclose(cm.score(y), m.score(y), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(cm.log_pdf(y), np.sum(m.log_pdf(y), axis=-1), rtol=1e-10)


def test_correlated_marginal_score_is_gradient():
    cov = CirculantGaussian((0.1, 0.3, 0.1)).covariance(4)
    cm = CorrelatedMarginal(two_deltas(), cov)
    y = np.array([0.2, -0.4, 0.6, 0.1])
    grad = fd_jacobian(lambda v: np.atleast_1d(cm.log_pdf(v)), y, 1e-6)[0]
    np.testing.assert_allclose(cm.score(y), grad, rtol=1e-5, atol=1e-6)


def test_fd_divergence_linear_map(rng):
    M = rng.standard_normal((5, 5))
    y = rng.standard_normal((3, 5))
    np.testing.assert_allclose(fd_divergence(lambda v: v @ M.T, y), np.trace(M), rtol=1e-8)
