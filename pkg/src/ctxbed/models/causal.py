"""Structural equation model with an unknown treatment -> revenue graph.

``r_i = c_i * sum_j G_ij theta_ij a_j``, cost ``s = sum_j a_j``,
profit ``y = sum_i r_i - s + eps``.
"""

from __future__ import annotations

import itertools

import numpy as np

from .. import diffgraph as dg
from ..stochastics import RngStream
from .base import ActionSpace, ContextSet, ModelError, ParamBatch, RewardModel


def nonzero_binary_contexts(k: int) -> np.ndarray:
    rows = np.array(list(itertools.product([0.0, 1.0], repeat=k)))
    return rows[1:]


def closed_form_actions(weights: np.ndarray, contexts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Optimal binary actions and max profits for effect matrices ``weights`` (``B x k x l``).

    Returns ``(B x D x l, B x D)``.
    """
    gain = np.einsum("dk,bkl->bdl", contexts, weights) - 1.0
    actions = (gain > 0).astype(np.float64)
    return actions, np.sum(gain * actions, axis=-1)


class CausalGraphModel(RewardModel):
    name = "causal_graph"
    context_kind = "binary"

    def __init__(self, k: int = 8, n_treatments: int = 5, D: int = 200, obs_scale: float = 0.25,
                 edge_prob: float | None = None, context_prob: float = 0.5,
                 rng: RngStream | None = None):
        self.k, self.n_treatments, self.D = int(k), int(n_treatments), int(D)
        self.obs_scale = float(obs_scale)
        self.edge_prob = 3.0 / (2.0 * self.k) if edge_prob is None else float(edge_prob)
        if not 0.0 <= self.edge_prob <= 1.0:
            raise ModelError("edge probability must lie in [0, 1]")
        self.action_space = ActionSpace("box-binary", dim=self.n_treatments, lower=0.0, upper=1.0)
        rng = rng if rng is not None else RngStream(0, 40)
        self.contexts = (rng.generator.random((self.D, self.k)) < context_prob).astype(np.float64)

    def sample_prior(self, B, rng: RngStream) -> ParamBatch:
        self.check_params(B)
        g = rng.generator
        shape = (B, self.k, self.n_treatments)
        G = (g.random(shape) < self.edge_prob).astype(np.float64)
        theta = np.abs(g.standard_normal(shape))
        return ParamBatch(G=G, theta=theta)

    @staticmethod
    def weights(params) -> np.ndarray:
        return params["G"] * params["theta"]

    def _gain(self, params, C):
        # B x D x l : marginal profit of each unit of treatment
        return np.einsum("dk,bkl->bdl", C.rows, self.weights(params)) - 1.0

    def mean_reward(self, params, C, A):
        return dg.sum(dg.Tensor(self._gain(params, C)) * A, axis=-1)

    def conditional_max_values(self, params, Cstar):
        return closed_form_actions(self.weights(params), Cstar.rows)[1]

    def true_optimum(self, params, Cstar):
        actions, values = closed_form_actions(self.weights(params.single(0)), Cstar.rows)
        return actions[0], values[0]

    def action_values(self, params, C, actions):
        actions = np.asarray(actions, dtype=np.float64)
        return self._gain(params, C) @ actions.T

    def vertex_actions(self) -> np.ndarray:
        return np.array(list(itertools.product([0.0, 1.0], repeat=self.n_treatments)))

    def default_contexts(self):
        return ContextSet(self.contexts, kind="binary"), ContextSet(nonzero_binary_contexts(self.k), kind="binary")
