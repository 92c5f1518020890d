import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctxbed.inference import (LowESSWarning, ParticlePosterior, PosteriorError, posterior_expectation,
                              snis_posterior, summary)
from ctxbed.models.base import ContextSet, ParamBatch
from ctxbed.models.toy import GaussianToyModel
from ctxbed.stochastics import RngStream

TOY = GaussianToyModel()  # y = psi + eps, psi ~ N(0, 1), eps ~ N(0, 1)


def _data(*ys):
    return ContextSet(np.zeros(len(ys))), None, np.array(ys, dtype=float)


def test_empty_dataset_gives_uniform_weights():
    post = snis_posterior(TOY, _data(), 500, RngStream(0))
    assert np.all(post.weights == 1 / 500)
    assert post.ess == pytest.approx(500.0)
    assert np.all(snis_posterior(TOY, None, 10, RngStream(0)).log_weights == 0)


@pytest.mark.parametrize("N", [10**3, 10**4, 10**5])
def test_conjugate_posterior_mean(N):
    post = snis_posterior(TOY, _data(2.0), N, RngStream(1, 12))
    mean, std = posterior_expectation(post, lambda p: p["psi"][:, 0])
    # analytic posterior N(1, 1/2)
    assert abs(mean - 1.0) < 3 * np.sqrt(0.5) / np.sqrt(post.ess)
    if N == 10**5:
        assert std**2 == pytest.approx(0.5, abs=0.02)


def test_duplicated_data_doubles_log_weights():
    a = snis_posterior(TOY, _data(0.7), 50, RngStream(2), warn=False)
    b = snis_posterior(TOY, _data(0.7, 0.7), 50, RngStream(2), warn=False)
    np.testing.assert_allclose(b.log_weights - b.log_weights.max(),
                               2 * (a.log_weights - a.log_weights.max()), atol=1e-10)


def test_impossible_data_fails():
    class Impossible(GaussianToyModel):
        def log_likelihood(self, params, dataset):
            return np.full(len(params), -np.inf)

    with pytest.raises(PosteriorError, match="zero likelihood"):
        snis_posterior(Impossible(), _data(1.0), 10, RngStream(0))


def test_low_ess_warns():
    with pytest.warns(LowESSWarning):
        snis_posterior(GaussianToyModel(obs_scale=0.01), _data(1.5, 1.5, 1.5), 200, RngStream(0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        snis_posterior(GaussianToyModel(obs_scale=0.01), _data(1.5), 200, RngStream(0), warn=False)


def test_expectation_examples():
    parts = ParamBatch(psi=np.array([[1.0], [2.0], [4.0]]))
    lw = np.log(np.array([0.2, 0.3, 0.5]))
    post = ParticlePosterior(parts, lw)
    mean, _ = posterior_expectation(post, lambda p: np.full(3, 7.0))
    assert mean == 7.0
    uni, _ = posterior_expectation(ParticlePosterior(parts, np.zeros(3)), lambda p: p["psi"][:, 0])
    assert uni == pytest.approx(7 / 3)
    m, s = posterior_expectation(post, lambda p: p["psi"][:, 0])
    assert m == pytest.approx(0.2 * 1 + 0.3 * 2 + 0.5 * 4, abs=1e-15)
    assert s == pytest.approx(np.sqrt(0.2 * 1.8**2 + 0.3 * 0.8**2 + 0.5 * 1.2**2), abs=1e-12)
    assert summary(post, "psi")["ess"] == pytest.approx(1 / (0.04 + 0.09 + 0.25))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=20), st.floats(-1e3, 1e3))
def test_weights_normalised_and_shift_invariant(lw, c):
    lw = np.array(lw)
    parts = ParamBatch(psi=np.zeros((len(lw), 1)))
    a, b = ParticlePosterior(parts, lw), ParticlePosterior(parts, lw + c)
    assert a.weights.sum() == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(a.weights, b.weights, atol=1e-12)
    assert 1.0 - 1e-9 <= a.ess <= len(lw) + 1e-9


def test_support_covers_mass():
    post = ParticlePosterior(ParamBatch(psi=np.zeros((4, 1))), np.log(np.array([0.5, 0.1, 0.35, 0.05])))
    np.testing.assert_array_equal(post.support(0.8), [0, 2])
    assert len(post.support(1.0)) == 4
