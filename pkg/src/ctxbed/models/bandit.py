"""Linear contextual bandit with a frozen random feature map."""

from __future__ import annotations

import numpy as np

from .. import diffgraph as dg
from ..stochastics import RngStream
from .base import ActionSpace, ContextSet, ModelError, ParamBatch, RewardModel, first_argmax

N_ACTIONS = 10
N_CONTEXTS = 3
N_FEATURES = 20
NEAR_ZERO_VAR = 1e-9

# (action, context) -> 1-based feature coordinate with unit variance
UNIT_COORDS = {
    (1, 1): 1, (2, 1): 2, (3, 1): 3,
    (1, 2): 4, (2, 2): 1, (3, 2): 5,
    (1, 3): 6, (2, 3): 7, (3, 3): 1,
}
# actions whose features live in the last coordinate in every context
LAST_COORD_ACTIONS = (6, 7)


def feature_variances() -> np.ndarray:
    """Diagonal feature covariances, ``K x contexts x features``."""
    var = np.full((N_ACTIONS, N_CONTEXTS, N_FEATURES), NEAR_ZERO_VAR)
    for (a, c), pos in UNIT_COORDS.items():
        var[a - 1, c - 1, pos - 1] = 1.0
    for a in LAST_COORD_ACTIONS:
        var[a - 1, :, N_FEATURES - 1] = 1.0
    return var


class LinearBanditModel(RewardModel):
    name = "linear_bandit"
    context_kind = "categorical"

    def __init__(self, rng: RngStream, obs_scale: float = 1.0, D: int = 10,
                 last_prior_var: float = 0.1):
        self.obs_scale = float(obs_scale)
        self.D = int(D)
        self.last_prior_var = float(last_prior_var)
        self.features = np.sqrt(feature_variances()) * rng.generator.standard_normal(
            (N_ACTIONS, N_CONTEXTS, N_FEATURES))
        self.contexts = rng.split(1).generator.integers(1, N_CONTEXTS + 1, self.D)
        self.action_space = ActionSpace("discrete", K=N_ACTIONS)

    def sample_prior(self, B, rng: RngStream) -> ParamBatch:
        self.check_params(B)
        sd = np.ones(N_FEATURES)
        sd[-1] = np.sqrt(self.last_prior_var)
        return ParamBatch(psi=sd * rng.generator.standard_normal((B, N_FEATURES)))

    def _features(self, C: ContextSet) -> np.ndarray:
        labels = C.rows[:, 0].astype(int)
        if np.any((labels < 1) | (labels > N_CONTEXTS)):
            raise ModelError("bandit contexts are labels in {1, 2, 3}")
        return self.features[:, labels - 1, :]  # K x D x P

    def action_values(self, params, C, actions=None):
        values = np.einsum("bp,kdp->bdk", params["psi"], self._features(C))
        if actions is None:
            return values
        return values @ np.asarray(actions, dtype=np.float64).T

    def prior_moments(self, C) -> tuple[np.ndarray, np.ndarray]:
        """Exact prior mean (zero) and std of each action's reward, ``D x K``."""
        var = np.ones(N_FEATURES)
        var[-1] = self.last_prior_var
        sd = np.sqrt(np.einsum("kdp,p->dk", self._features(C) ** 2, var))
        return np.zeros_like(sd), sd

    def mean_reward(self, params, C, A):
        return dg.sum(dg.Tensor(self.action_values(params, C)) * A, axis=-1)

    def conditional_max_values(self, params, Cstar):
        return self.action_values(params, Cstar).max(axis=-1)

    def true_optimum(self, params, Cstar):
        values = self.action_values(params.single(0), Cstar)[0]
        idx = first_argmax(values, axis=-1)
        return idx, values[np.arange(len(Cstar)), idx]

    def default_contexts(self):
        return (ContextSet(self.contexts, kind="categorical"),
                ContextSet(np.arange(1, N_CONTEXTS + 1), kind="categorical"))
