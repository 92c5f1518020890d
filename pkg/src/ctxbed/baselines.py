"""Reference design strategies: random, UCB on the prior predictive, Thompson sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import FixedDesign
from .models.base import ContextSet, ModelError, first_argmax
from .models.causal import CausalGraphModel, closed_form_actions
from .models.gp import GPModel
from .models.parametric import ContinuousBumpModel
from .stochastics import RngStream

MC_CHUNK = 1000


@dataclass(frozen=True)
class BaselineSpec:
    """``kind`` is ``random``, ``ucb`` or ``thompson``.

    UCB uses closed-form prior moments where the model provides them unless
    ``exact_moments`` is off. ``sigma`` is the Gaussian scale of random actions in unbounded continuous
    spaces (bounded boxes draw uniformly); ``p`` the Bernoulli rate for binary
    boxes.
    """

    kind: str
    alpha: float = 1.0
    mc_samples: int = 10_000
    exact_moments: bool = True
    sigma: float = 1.0
    p: float = 0.5

    def __post_init__(self):
        if self.kind not in ("random", "ucb", "thompson"):
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.mc_samples < 2:
            raise ValueError("mc_samples must be >= 2")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")

    @property
    def label(self) -> str:
        if self.kind == "ucb":
            return f"ucb_{self.alpha:g}"
        if self.kind == "random" and self.sigma != 1.0:
            return f"random_{self.sigma:g}"
        return self.kind


def baseline_design(spec: BaselineSpec, model, C: ContextSet, rng: RngStream) -> FixedDesign:
    space = model.action_space
    if space.kind == "none":
        raise ModelError(f"model {model.name} has no actions to choose")
    if spec.kind == "random":
        actions = _random(spec, model, len(C), rng)
    elif spec.kind == "ucb":
        actions = _ucb(spec, model, C, rng)
    else:
        actions = _thompson(model, C, rng)
    return FixedDesign(actions, space)


def _random(spec, model, D, rng):
    space, g = model.action_space, rng.generator
    if space.kind == "discrete":
        return g.integers(0, space.K, D)
    if space.kind == "box-binary":
        return (g.random((D, space.dim)) < spec.p).astype(np.float64)
    if np.isfinite(space.lower) and np.isfinite(space.upper):
        return g.uniform(space.lower, space.upper, (D, space.dim))
    return spec.sigma * g.standard_normal((D, space.dim))


def prior_predictive_moments(model, C: ContextSet, n: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo mean and std (``D x G``) of the noiseless reward over the candidate actions."""
    count, mean, m2 = 0, None, None
    for i, start in enumerate(range(0, n, MC_CHUNK)):
        vals = model.sample_action_values(C, min(MC_CHUNK, n - start), rng.split(i))
        k = vals.shape[0]
        chunk_mean = vals.mean(axis=0)
        chunk_m2 = ((vals - chunk_mean) ** 2).sum(axis=0)
        if mean is None:
            count, mean, m2 = k, chunk_mean, chunk_m2
            continue
        delta = chunk_mean - mean
        tot = count + k
        mean = mean + delta * k / tot
        m2 = m2 + chunk_m2 + delta**2 * count * k / tot
        count = tot
    return mean, np.sqrt(m2 / (count - 1))


def _ucb(spec, model, C, rng):
    space = model.action_space
    if isinstance(model, CausalGraphModel):
        # per-entry optimism on the effect matrix, then the closed-form rule
        W = CausalGraphModel.weights(model.sample_prior(spec.mc_samples, rng))
        optimistic = W.mean(axis=0) + spec.alpha * W.std(axis=0, ddof=1)
        return closed_form_actions(optimistic[None], C.rows)[0][0]
    if spec.exact_moments and hasattr(model, "prior_moments"):
        mean, std = model.prior_moments(C)
    else:
        mean, std = prior_predictive_moments(model, C, spec.mc_samples, rng)
    idx = first_argmax(mean + spec.alpha * std, axis=-1)
    return idx if space.is_discrete else space.grid[idx]


def _thompson(model, C, rng):
    """One independent prior draw per context, acting optimally under it."""
    D, space = len(C), model.action_space
    if isinstance(model, GPModel):
        vals = model.sample_action_values(C, 1, rng)[0]
        return space.grid[first_argmax(vals, axis=-1)]
    params = model.sample_prior(D, rng)
    diag = np.arange(D)
    if isinstance(model, CausalGraphModel):
        return closed_form_actions(CausalGraphModel.weights(params), C.rows)[0][diag, diag]
    if isinstance(model, ContinuousBumpModel):
        return model.optimal_actions(params, C)[diag, diag][:, None]
    vals = model.action_values(params, C, space.candidates())
    return first_argmax(vals[diag, diag], axis=-1)
