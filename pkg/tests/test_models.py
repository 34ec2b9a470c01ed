import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from unsure_lab.errors import ConfigError, EmptyDataset, InvalidPoissonInput
from unsure_lab.models import (CirculantGaussian, Component, DiagonalGaussian, ExponentialFamily,
                               IsotropicGaussian, NoisyMarginal, PoissonGaussian, SignalPrior,
                               WeightFunction, Dataset, dumps_model, expect_y, fisher_information,
                               gaussian, loads_model, mmse_value, named_prior, noise_from_dict,
                               noise_to_dict, posterior_mean, risk_quadrature, sample_measurements,
                               spike_slab, total_mass, two_deltas)


def test_named_priors_moments():
    assert two_deltas().variance() == pytest.approx(0.25)
    assert gaussian().variance() == pytest.approx(1.0)
    assert spike_slab().variance() == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        named_prior("laplace")


def test_prior_validation():
    with pytest.raises(ConfigError):
        SignalPrior((Component(0.7, "delta", 0.0),))
    with pytest.raises(ConfigError):
        Component(1.0, "gauss", 0.0, 0.0)
    with pytest.raises(ConfigError):
        Component(1.0, "delta", 0.0, 1.0)


def test_pdf_point_values():
    assert NoisyMarginal(two_deltas(), 0.25).pdf(0.0) == pytest.approx(0.21596, rel=1e-4)
    assert NoisyMarginal(spike_slab(), 0.25).pdf(0.0) == pytest.approx(0.99140, rel=1e-4)


def test_score_and_posterior_mean_two_deltas():
    m = NoisyMarginal(two_deltas(), 0.25)
    assert m.score(0.5) == pytest.approx(-0.0053656, rel=1e-4)
    assert posterior_mean(m, 0.25) == pytest.approx(0.5 * np.tanh(2.0), rel=1e-12)
    assert m.score(0.0) == pytest.approx(0.0, abs=1e-15)


def test_gaussian_score_is_linear():
    m = NoisyMarginal(gaussian(), 0.25)
    y = np.linspace(-3, 3, 11)
    np.testing.assert_allclose(m.score(y), -y / 1.0625, rtol=1e-12)


@given(st.floats(-3, 3), st.sampled_from(["two_deltas", "gaussian", "spike_slab"]),
       st.floats(0.1, 1.0))
def test_score_matches_log_pdf_derivative(y, name, sigma):
    m = NoisyMarginal(named_prior(name), sigma)
    h = 1e-5
    fd = (m.log_pdf(y + h) - m.log_pdf(y - h)) / (2 * h)
    assert m.score(y) == pytest.approx(fd, rel=1e-5, abs=1e-6)
    fd2 = (m.score(y + h) - m.score(y - h)) / (2 * h)
    assert m.score_derivative(y) == pytest.approx(fd2, rel=1e-4, abs=1e-4)


@pytest.mark.parametrize("name", ["two_deltas", "gaussian", "spike_slab"])
def test_quadrature_mass_and_tweedie_cross_check(name):
    m = NoisyMarginal(named_prior(name), 0.25)
    assert total_mass(m) == pytest.approx(1.0, abs=1e-9)
    # E s = 0 and MMSE from both routes
    assert expect_y(m, m.score) == pytest.approx(0.0, abs=1e-9)
    assert mmse_value(m) == pytest.approx(0.0625 - 0.0625**2 * fisher_information(m), abs=1e-9)


def test_gaussian_mmse_closed_form():
    m = NoisyMarginal(gaussian(), 0.25)
    assert mmse_value(m) == pytest.approx(0.0625 / 1.0625, rel=1e-9)
    assert risk_quadrature(m, lambda y: 0.0) == pytest.approx(1.0, rel=1e-9)


def test_serialization_round_trip():
    for noise in (IsotropicGaussian(0.3), DiagonalGaussian((0.1, 0.2)), CirculantGaussian((0.1, 0.5, 0.1)),
                  PoissonGaussian(0.2, 0.05), ExponentialFamily(WeightFunction((1.0, 0.5)), 2.0)):
        assert noise_from_dict(json.loads(json.dumps(noise_to_dict(noise)))) == noise
    prior, noise = loads_model(dumps_model(spike_slab(), IsotropicGaussian(0.25)))
    assert prior == spike_slab() and noise == IsotropicGaussian(0.25)
    with pytest.raises(ConfigError):
        noise_from_dict({"variant": "laplace"})


def test_weight_function_derivative():
    a = WeightFunction((1.0, -2.0, 0.5))
    y = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_allclose(a(y), 1 - 2 * y + 0.5 * y**2)
    np.testing.assert_allclose(a.derivative(y), -2 + y)


def test_sampling_is_seeded_and_shaped():
    d1 = sample_measurements(two_deltas(), IsotropicGaussian(0.25), 8, 100, 7)
    d2 = sample_measurements(two_deltas(), IsotropicGaussian(0.25), 8, 100, 7)
    assert d1.samples.shape == (100, 8)
    np.testing.assert_array_equal(d1.samples, d2.samples)
    assert set(np.unique(d1.truth)) == {-0.5, 0.5}


def test_sigma_zero_returns_clean_signal():
    d = sample_measurements(gaussian(), IsotropicGaussian(0.0), 4, 10, 1)
    np.testing.assert_array_equal(d.samples, d.truth)


def test_circulant_noise_covariance(rng):
    noise = CirculantGaussian((0.2, 1.0, 0.3))
    d = sample_measurements(SignalPrior((Component(1.0, "delta", 0.0),)), noise, 6, 200000, 3)
    emp = np.cov(d.samples.T)
    np.testing.assert_allclose(emp, noise.covariance(6), atol=0.02)


def test_poisson_gaussian_rejects_negative_signal():
    with pytest.raises(InvalidPoissonInput):
        sample_measurements(two_deltas(), PoissonGaussian(0.1, 0.1), 4, 10, 0)
    with pytest.raises(ConfigError):
        sample_measurements(two_deltas(), ExponentialFamily(), 4, 10, 0)


def test_dataset_checks():
    with pytest.raises(EmptyDataset):
        Dataset(np.zeros((0, 3)))
    d = Dataset(np.ones((10, 2)), np.zeros((10, 2)))
    a, b = d.split(4)
    assert a.count == 4 and b.count == 6
