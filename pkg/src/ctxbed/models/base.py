"""Shared types for the reward-model zoo."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .. import diffgraph as dg
from ..stochastics import RngStream

LOG_2PI = float(np.log(2.0 * np.pi))


class ModelError(ValueError):
    """A design, context set or parameter batch does not fit the model."""


@dataclass(frozen=True)
class ContextSet:
    """``D`` context rows of a single kind (continuous, binary or categorical)."""

    rows: np.ndarray
    kind: str = "continuous"

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows[:, None]
        if rows.ndim != 2:
            raise ModelError(f"context rows must be 2-d, got shape {rows.shape}")
        if self.kind not in ("continuous", "binary", "categorical"):
            raise ModelError(f"unknown context kind {self.kind!r}")
        if self.kind == "binary" and not np.all((rows == 0) | (rows == 1)):
            raise ModelError("binary contexts must be 0/1")
        if self.kind == "categorical" and not np.all(rows == np.round(rows)):
            raise ModelError("categorical contexts must be integer labels")
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def to_list(self) -> list:
        return self.rows.tolist()


@dataclass(frozen=True)
class ActionSpace:
    """Discrete(K), continuous box, or binary box with an optional search grid."""

    kind: str
    K: int = 0
    dim: int = 1
    lower: float = -np.inf
    upper: float = np.inf
    grid: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "discrete":
            if self.K < 2:
                raise ModelError("discrete action spaces need K >= 2")
        elif self.kind in ("continuous", "box-binary"):
            if not self.lower < self.upper:
                raise ModelError("action bounds need lower < upper")
        elif self.kind != "none":
            raise ModelError(f"unknown action space kind {self.kind!r}")
        if self.grid is not None:
            grid = np.asarray(self.grid, dtype=np.float64)
            if grid.ndim == 1:
                grid = grid[:, None]
            if np.any(grid < self.lower) or np.any(grid > self.upper):
                raise ModelError("grid points must lie inside the action bounds")
            object.__setattr__(self, "grid", grid)

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    @property
    def width(self) -> int:
        """Trailing size of a design row (K for discrete, ``dim`` otherwise)."""
        return self.K if self.kind == "discrete" else self.dim

    def candidates(self) -> np.ndarray:
        if self.kind == "discrete":
            return np.eye(self.K)
        if self.grid is None:
            raise ModelError(f"{self.kind} action space has no evaluation grid")
        return self.grid


class ParamBatch:
    """Named arrays sharing a leading batch axis of independent prior draws."""

    def __init__(self, **fields: np.ndarray):
        if not fields:
            raise ModelError("empty parameter batch")
        sizes = {np.shape(v)[0] for v in fields.values()}
        if len(sizes) != 1:
            raise ModelError(f"inconsistent batch sizes {sizes}")
        self.fields = {k: np.asarray(v) for k, v in fields.items()}
        self.size = sizes.pop()

    def __getitem__(self, key: str) -> np.ndarray:
        return self.fields[key]

    def __len__(self) -> int:
        return self.size

    def __iter__(self) -> Iterator[str]:
        return iter(self.fields)

    def take(self, index) -> "ParamBatch":
        index = np.atleast_1d(np.asarray(index))
        return ParamBatch(**{k: v[index] for k, v in self.fields.items()})

    def single(self, i: int = 0) -> "ParamBatch":
        return self.take([i])

    def __repr__(self) -> str:
        parts = ", ".join(f"{k}{v.shape}" for k, v in self.fields.items())
        return f"ParamBatch(B={self.size}: {parts})"


def first_argmax(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """``argmax`` returning the lowest index among exact ties (numpy's rule)."""
    return np.argmax(values, axis=axis)


class RewardModel:
    """Interface shared by every model.

    Designs ``A`` are Tensors of shape ``(D, w)`` (shared by the batch) or
    ``(B, D, w)`` (one realisation per batch element) where ``w`` is ``K`` for
    discrete spaces (rows on the simplex) and the action dimension otherwise.
    """

    name = "model"
    obs_scale = 1.0
    action_space: ActionSpace
    context_kind = "continuous"

    # -- required hooks -------------------------------------------------------
    def sample_prior(self, B: int, rng: RngStream) -> ParamBatch:
        raise NotImplementedError

    def mean_reward(self, params: ParamBatch, C: ContextSet, A) -> dg.Tensor:
        """Noiseless mean reward, ``B x D``, differentiable in ``A``."""
        raise NotImplementedError

    def conditional_max_values(self, params: ParamBatch, Cstar: ContextSet) -> np.ndarray:
        raise NotImplementedError

    def true_optimum(self, params: ParamBatch, Cstar: ContextSet) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def action_values(self, params: ParamBatch, C: ContextSet, actions: np.ndarray) -> np.ndarray:
        """Noiseless mean reward of each candidate action in each context: ``B x D x G``."""
        raise NotImplementedError

    # -- shared behaviour ---------------------------------------------------------
    def check_params(self, B: int) -> None:
        if B < 1:
            raise ModelError(f"need at least one prior draw, got B={B}")

    def check_design(self, A: dg.Tensor, D: int) -> None:
        space = self.action_space
        if A.ndim not in (2, 3) or A.shape[-2] != D or A.shape[-1] != space.width:
            raise ModelError(f"design shape {A.shape} does not match D={D}, width={space.width}")
        if space.kind == "discrete":
            if np.any(A.data < -1e-12) or np.any(np.abs(A.data.sum(-1) - 1.0) > 1e-6):
                raise ModelError("discrete design rows must lie on the probability simplex")
        elif np.any(A.data < space.lower - 1e-12) or np.any(A.data > space.upper + 1e-12):
            raise ModelError(f"design outside bounds [{space.lower}, {space.upper}]")

    def simulate_rewards(self, params: ParamBatch, C: ContextSet, A, rng: RngStream | None = None,
                         eps: np.ndarray | None = None) -> dg.Tensor:
        """Reparameterised noisy rewards ``mean + scale * eps`` (``B x D``)."""
        if A is not None:
            A = dg.constant(A)
            self.check_design(A, len(C))
        mean = self.mean_reward(params, C, A)
        if eps is None:
            if rng is None:
                return mean
            eps = rng.generator.standard_normal(mean.shape)
        return mean + self.obs_scale * dg.Tensor(eps)

    def log_likelihood(self, params: ParamBatch, dataset) -> np.ndarray:
        """Gaussian log-density of ``y`` summed over the D observations, one per draw."""
        C, A, y = dataset
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (len(C),):
            raise ModelError(f"y has shape {y.shape}, expected ({len(C)},)")
        A = None if A is None else dg.constant(A)
        if A is not None:
            self.check_design(A, len(C))
        mean = self.mean_reward(params, C, A).data
        resid = (y[None, :] - mean) / self.obs_scale
        return -0.5 * np.sum(resid * resid, axis=1) - len(C) * (0.5 * LOG_2PI + np.log(self.obs_scale))

    def reward_of(self, params: ParamBatch, C: ContextSet, actions: np.ndarray) -> np.ndarray:
        """Noiseless mean reward of a concrete per-context action batch, ``B x D``.

        ``actions`` holds integer indices for discrete spaces, otherwise ``D x dim`` values.
        """
        if self.action_space.is_discrete:
            A = np.eye(self.action_space.K)[np.asarray(actions, dtype=int)]
        else:
            A = np.asarray(actions, dtype=np.float64).reshape(len(C), -1)
        return self.mean_reward(params, C, dg.Tensor(A)).data

    def sample_action_values(self, C: ContextSet, n: int, rng: RngStream) -> np.ndarray:
        """``n x D x G`` prior draws of the mean reward over the candidate actions.

        Per-context marginals are exact; cross-context dependence is model specific.
        """
        params = self.sample_prior(n, rng)
        return self.action_values(params, C, self.action_space.candidates())

    def default_contexts(self) -> tuple[ContextSet, ContextSet]:
        raise NotImplementedError
