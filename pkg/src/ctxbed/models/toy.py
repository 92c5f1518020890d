"""Scalar linear-Gaussian toy: ``m = psi``, ``y = coef * psi + scale * eps``.

With ``coef = rho`` and ``scale = sqrt(1 - rho^2)`` the pair ``(y, m)`` is a
standard bivariate normal with correlation ``rho``; mutual information is
``-log(1 - rho^2) / 2``. With ``coef = scale = 1`` it is the textbook
conjugate model whose posterior after one observation is ``N(y/2, 1/2)``.
"""

from __future__ import annotations

import numpy as np

from .. import diffgraph as dg
from ..stochastics import RngStream
from .base import ActionSpace, ContextSet, ModelError, ParamBatch, RewardModel


class GaussianToyModel(RewardModel):
    name = "gaussian_toy"

    def __init__(self, coef: float = 1.0, obs_scale: float = 1.0, D: int = 1):
        if obs_scale <= 0:
            raise ModelError("obs_scale must be > 0")
        self.coef = float(coef)
        self.obs_scale = float(obs_scale)
        self.D = int(D)
        self.action_space = ActionSpace("none")

    @classmethod
    def correlated(cls, rho: float) -> "GaussianToyModel":
        if not -1.0 < rho < 1.0:
            raise ModelError("rho must lie strictly inside (-1, 1)")
        return cls(coef=rho, obs_scale=float(np.sqrt(1.0 - rho * rho)))

    def mutual_information(self) -> float:
        rho2 = self.coef**2 / (self.coef**2 + self.obs_scale**2)
        return -0.5 * float(np.log1p(-rho2))

    def sample_prior(self, B, rng: RngStream) -> ParamBatch:
        self.check_params(B)
        return ParamBatch(psi=rng.generator.standard_normal((B, 1)))

    def mean_reward(self, params, C, A=None):
        return dg.Tensor(np.repeat(self.coef * params["psi"], len(C), axis=1))

    def check_design(self, A, D):
        raise ModelError("the toy model has no design")

    def conditional_max_values(self, params, Cstar):
        return np.repeat(params["psi"], len(Cstar), axis=1)

    def true_optimum(self, params, Cstar):
        return np.zeros(len(Cstar)), np.repeat(params.single(0)["psi"][0], len(Cstar))

    def default_contexts(self):
        return ContextSet(np.zeros(self.D)), ContextSet(np.zeros(1))
