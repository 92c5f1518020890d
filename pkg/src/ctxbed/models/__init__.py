from __future__ import annotations

import numpy as np

from ..stochastics import RngStream, STREAMS
from .bandit import LinearBanditModel
from .base import ActionSpace, ContextSet, ModelError, ParamBatch, RewardModel, first_argmax
from .causal import CausalGraphModel, closed_form_actions, nonzero_binary_contexts
from .gp import (CholeskyError, GPModel, context_grid, generate_observational_data,
                 jittered_cholesky)
from .parametric import ContinuousBumpModel, DiscreteQuadraticModel
from .toy import GaussianToyModel

MODEL_NAMES = ("discrete_quadratic", "continuous_bump", "gp", "linear_bandit", "causal_graph",
               "gaussian_toy")

__all__ = [
    "ActionSpace", "ContextSet", "ModelError", "ParamBatch", "RewardModel", "first_argmax",
    "DiscreteQuadraticModel", "ContinuousBumpModel", "GPModel", "LinearBanditModel",
    "CausalGraphModel", "GaussianToyModel", "CholeskyError", "generate_observational_data",
    "context_grid", "jittered_cholesky", "closed_form_actions", "nonzero_binary_contexts",
    "build_model", "MODEL_NAMES",
]


def build_model(name: str, options: dict, seed: int, for_evaluation: bool = False):
    """Instantiate a model and its default ``(C, Cstar)`` from a config block.

    Instance-level randomness (bandit features, causal contexts, GP
    observational data) comes from the ``instance`` stream of ``seed``.
    For the GP model, ``for_evaluation`` conditions on every observational row
    rather than the ``n_design_observational`` prefix.
    Returns ``(model, C, Cstar, extras)`` where ``extras`` holds generated data.
    """
    opts = dict(options)
    rng = RngStream(seed, STREAMS["instance"])
    extras: dict = {}
    if name == "discrete_quadratic":
        model = DiscreteQuadraticModel(**opts)
    elif name == "continuous_bump":
        grid_bounds = tuple(opts.pop("grid_bounds", (-4.0, 20.0)))
        model = ContinuousBumpModel(grid_bounds=grid_bounds, **opts)
    elif name == "linear_bandit":
        model = LinearBanditModel(rng=rng, **opts)
    elif name == "causal_graph":
        model = CausalGraphModel(rng=rng, **opts)
    elif name == "gaussian_toy":
        rho = opts.pop("rho", None)
        model = GaussianToyModel.correlated(rho) if rho is not None else GaussianToyModel(**opts)
    elif name == "gp":
        n_obs = int(opts.pop("n_observational", 100))
        n_design = int(opts.pop("n_design_observational", n_obs))
        confounded = bool(opts.pop("confounded", True))
        exp_side = int(opts.pop("exp_grid_side", 7))
        eval_side = int(opts.pop("eval_grid_side", 4))
        data = generate_observational_data(n_obs, confounded, rng)
        used = data if for_evaluation else data[: min(n_design, n_obs)]
        C = context_grid(exp_side, 1.0)
        Cstar = context_grid(eval_side, 0.8)
        model = GPModel(used, Cstar, n_exp=len(C), **opts)
        extras["observational"] = data
        return model, ContextSet(C), ContextSet(Cstar), extras
    else:
        raise ModelError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    C, Cstar = model.default_contexts()
    return model, C, Cstar, extras
