"""The two one-dimensional-context parametric models."""

from __future__ import annotations

import numpy as np

from .. import diffgraph as dg
from ..stochastics import RngStream
from .base import ActionSpace, ContextSet, ModelError, ParamBatch, RewardModel, first_argmax

QUADRATIC_PRIOR_MEANS = np.array([[5.0, 15.0], [5.0, 15.0], [-2.0, -1.0], [-7.0, 3.0]])
QUADRATIC_PRIOR_VARS = np.array([9.0, 2.25, 1.21, 1.21])


class DiscreteQuadraticModel(RewardModel):
    """Four treatments; treatment ``k`` has a downward parabola in the context
    pinned to ``psi[k, 0]`` at ``c = -3`` and ``psi[k, 1]`` at ``c = 3``.
    """

    name = "discrete_quadratic"

    def __init__(self, obs_scale: float = 0.1, prior_var_scale: float = 1.0, D: int = 10):
        if obs_scale <= 0 or prior_var_scale < 0:
            raise ModelError("obs_scale must be > 0 and prior_var_scale >= 0")
        self.obs_scale = float(obs_scale)
        self.prior_var_scale = float(prior_var_scale)
        self.D = int(D)
        self.action_space = ActionSpace("discrete", K=4)

    def sample_prior(self, B, rng: RngStream) -> ParamBatch:
        self.check_params(B)
        sd = np.sqrt(QUADRATIC_PRIOR_VARS * self.prior_var_scale)[:, None]
        psi = QUADRATIC_PRIOR_MEANS + sd * rng.generator.standard_normal((B, 4, 2))
        return ParamBatch(psi=psi)

    @staticmethod
    def _quadratic(psi: np.ndarray, c: np.ndarray) -> np.ndarray:
        # psi: B x K x 2, c: D  ->  B x D x K
        gamma = (psi[..., 0] + psi[..., 1] + 18.0) / 2.0
        beta = (psi[..., 1] - gamma + 9.0) / 3.0
        c = c[None, :, None]
        return -c * c + beta[:, None, :] * c + gamma[:, None, :]

    def action_values(self, params, C, actions=None):
        values = self._quadratic(params["psi"], C.rows[:, 0])
        if actions is None:
            return values
        return values @ np.asarray(actions, dtype=np.float64).T

    def prior_moments(self, C) -> tuple[np.ndarray, np.ndarray]:
        """Exact prior mean and std of each action's reward (``D x K``); rewards are linear in psi."""
        c = C.rows[:, 0][:, None]
        w1, w2 = 0.5 - c / 6.0, 0.5 + c / 6.0
        mu = QUADRATIC_PRIOR_MEANS
        mean = -c * c + w1 * mu[None, :, 0] + w2 * mu[None, :, 1] + 9.0
        var = (w1**2 + w2**2) * (QUADRATIC_PRIOR_VARS * self.prior_var_scale)[None, :]
        return mean, np.sqrt(var)

    def mean_reward(self, params, C, A):
        per_action = dg.Tensor(self.action_values(params, C))
        return dg.sum(per_action * A, axis=-1)

    def conditional_max_values(self, params, Cstar):
        return self.action_values(params, Cstar).max(axis=-1)

    def true_optimum(self, params, Cstar):
        values = self.action_values(params.single(0), Cstar)[0]
        idx = first_argmax(values, axis=-1)
        return idx, values[np.arange(len(Cstar)), idx]

    def default_contexts(self):
        c = np.linspace(-3.0, -1.0, self.D)
        return ContextSet(c), ContextSet(-c)


class ContinuousBumpModel(RewardModel):
    """``f = exp(-(a - g)^2 / h - lam * a^2)`` with ``g`` quadratic in the context."""

    name = "continuous_bump"

    def __init__(self, obs_scale: float = 0.1, cost: float = 0.1, D: int = 40,
                 grid_size: int = 512, grid_bounds: tuple[float, float] = (-4.0, 20.0),
                 prior_low: float = 0.1, prior_high: float = 1.1):
        if obs_scale <= 0:
            raise ModelError("obs_scale must be > 0")
        if not prior_low < prior_high:
            raise ModelError("prior_low must be below prior_high")
        self.obs_scale = float(obs_scale)
        self.cost = float(cost)
        self.D = int(D)
        self.prior_low, self.prior_high = float(prior_low), float(prior_high)
        grid = np.linspace(grid_bounds[0], grid_bounds[1], int(grid_size))
        self.action_space = ActionSpace("continuous", dim=1, grid=grid)

    def sample_prior(self, B, rng: RngStream) -> ParamBatch:
        self.check_params(B)
        return ParamBatch(psi=rng.generator.uniform(self.prior_low, self.prior_high, (B, 4)))

    @staticmethod
    def _g_h(psi, c):
        g = psi[:, 0:1] + psi[:, 1:2] * c[None, :] + psi[:, 2:3] * c[None, :] ** 2
        return g, psi[:, 3:4]

    def mean_reward(self, params, C, A):
        g, h = self._g_h(params["psi"], C.rows[:, 0])
        a = dg.reshape(A, A.shape[:-1])  # (D,) or (B, D)
        diff = a - dg.Tensor(g)
        expo = -(dg.square(diff) / dg.Tensor(h)) - self.cost * dg.square(a)
        return dg.exp(expo)

    def action_values(self, params, C, actions):
        g, h = self._g_h(params["psi"], C.rows[:, 0])
        a = np.asarray(actions, dtype=np.float64).reshape(-1)[None, None, :]
        return np.exp(-((a - g[..., None]) ** 2) / h[..., None] - self.cost * a * a)

    def optimal_actions(self, params, Cstar) -> np.ndarray:
        """Closed-form maximiser ``g / (1 + lam h)`` for each draw and context."""
        g, h = self._g_h(params["psi"], Cstar.rows[:, 0])
        return g / (1.0 + self.cost * h)

    def _value(self, params, C, a):
        g, h = self._g_h(params["psi"], C.rows[:, 0])
        return np.exp(-((a - g) ** 2) / h - self.cost * a * a)

    def conditional_max_values(self, params, Cstar):
        return self._value(params, Cstar, self.optimal_actions(params, Cstar))

    def true_optimum(self, params, Cstar):
        p = params.single(0)
        a = self.optimal_actions(p, Cstar)
        return a[0][:, None], self._value(p, Cstar, a)[0]

    def default_contexts(self):
        c = np.linspace(-3.5, 3.5, self.D)
        return ContextSet(c), ContextSet(0.5 * (c[1:] + c[:-1]))
