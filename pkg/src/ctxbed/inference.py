"""Self-normalised importance sampling from prior particles."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .models.base import ParamBatch

LOW_ESS = 50.0


class PosteriorError(RuntimeError):
    pass


class LowESSWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ParticlePosterior:
    particles: ParamBatch
    log_weights: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        lw = self.log_weights - np.max(self.log_weights)
        w = np.exp(lw)
        return w / w.sum()

    @property
    def ess(self) -> float:
        w = self.weights
        return float(1.0 / np.sum(w * w))

    def __len__(self) -> int:
        return len(self.particles)

    def log_normalizer(self) -> float:
        """``log mean_n exp(log w_n)``, the SNIS estimate of the log evidence."""
        return float(logsumexp(self.log_weights) - np.log(len(self.log_weights)))

    def support(self, mass: float = 1.0 - 1e-12) -> np.ndarray:
        """Smallest set of particle indices carrying at least ``mass`` of the weight."""
        w = self.weights
        order = np.argsort(-w, kind="stable")
        k = int(np.searchsorted(np.cumsum(w[order]), mass) + 1)
        return np.sort(order[: min(k, len(w))])


def snis_posterior(model, dataset, N: int, rng, warn: bool = True) -> ParticlePosterior:
    """Prior particles weighted by the likelihood of ``dataset = (C, A, y)``.

    ``dataset=None`` (or an empty ``y``) gives exactly uniform weights.
    """
    if N < 2:
        raise PosteriorError("need at least two particles")
    particles = model.sample_prior(N, rng)
    if dataset is None or len(np.atleast_1d(dataset[2])) == 0:
        return ParticlePosterior(particles, np.zeros(N))
    log_w = np.asarray(model.log_likelihood(particles, dataset), dtype=np.float64)
    if not np.any(np.isfinite(log_w)):
        raise PosteriorError(f"every particle has zero likelihood (max log-weight {np.max(log_w)})")
    log_w = np.where(np.isnan(log_w), -np.inf, log_w)
    post = ParticlePosterior(particles, log_w)
    if warn and post.ess < LOW_ESS:
        warnings.warn(f"effective sample size {post.ess:.1f} below {LOW_ESS:.0f}", LowESSWarning,
                      stacklevel=2)
    return post


def posterior_expectation(posterior: ParticlePosterior, fn) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean and std of ``fn(particles)`` (leading axis over particles)."""
    values = np.asarray(fn(posterior.particles), dtype=np.float64)
    if values.shape[0] != len(posterior):
        raise PosteriorError(f"function returned {values.shape[0]} rows for {len(posterior)} particles")
    w = posterior.weights.reshape((-1,) + (1,) * (values.ndim - 1))
    mean = np.sum(w * values, axis=0)
    var = np.sum(w * (values - mean) ** 2, axis=0)
    return mean, np.sqrt(np.maximum(var, 0.0))


def summary(posterior: ParticlePosterior, field: str) -> dict:
    mean, std = posterior_expectation(posterior, lambda p: p[field])
    return {"mean": np.asarray(mean).tolist(), "std": np.asarray(std).tolist(), "ess": posterior.ess}
