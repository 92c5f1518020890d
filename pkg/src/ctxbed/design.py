"""Trainable designs: continuous action matrices and a Gumbel-Softmax policy."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffgraph as dg
from .models.base import ActionSpace, ModelError, RewardModel
from .stochastics import RngStream, sample_array

DESIGN_SCHEMA = "design/v1"


class DesignError(ValueError):
    pass


@dataclass
class TemperatureSchedule:
    """``tau(step) = initial * factor ** (step // interval)``; straight-through after ``hard_after``."""

    initial: float = 1.0
    factor: float = 1.0
    interval: int | None = None
    hard_after: int | None = None

    def __post_init__(self):
        if self.initial <= 0 or self.factor <= 0:
            raise DesignError("temperature and its decay factor must be positive")
        if self.interval is not None and self.interval < 1:
            raise DesignError("temperature decay interval must be >= 1")

    def tau(self, step: int) -> float:
        if not self.interval:
            return self.initial
        return self.initial * self.factor ** (step // self.interval)

    def hard(self, step: int) -> bool:
        return self.hard_after is not None and step >= self.hard_after


class ContinuousDesign:
    """Raw ``D x dim`` parameters, squashed into ``[lower, upper]`` by a scaled tanh when bounded."""

    kind = "continuous"

    def __init__(self, raw: np.ndarray, lower: float | None = None, upper: float | None = None):
        self.raw = dg.Tensor(np.asarray(raw, dtype=np.float64), requires_grad=True)
        bounded = lower is not None and upper is not None and np.isfinite(lower) and np.isfinite(upper)
        self.bounds = (float(lower), float(upper)) if bounded else None

    @classmethod
    def initialize(cls, space: ActionSpace, D: int, rng: RngStream, scale: float | None = None,
                   center: np.ndarray | None = None) -> "ContinuousDesign":
        """Bounded: raw ~ N(0, 0.5^2) (midpoint of the box). Unbounded: ``center + N(0, scale^2)``."""
        bounded = np.isfinite(space.lower) and np.isfinite(space.upper)
        if scale is None:
            scale = 0.5 if (bounded and space.kind != "box-binary") else 1.0
        raw = scale * rng.generator.standard_normal((D, space.dim))
        if center is not None:
            if bounded:
                raise DesignError("centring only applies to unbounded designs")
            raw = raw + np.asarray(center, dtype=np.float64).reshape(D, space.dim)
        return cls(raw, space.lower if bounded else None, space.upper if bounded else None)

    def parameters(self) -> list[dg.Tensor]:
        return [self.raw]

    def realize(self, rng: RngStream | None = None, step: int = 0, batch: int | None = None) -> dg.Tensor:
        if self.bounds is None:
            return self.raw
        lo, hi = self.bounds
        return (dg.tanh(self.raw) + 1.0) * (0.5 * (hi - lo)) + lo

    def extract_final(self) -> np.ndarray:
        return self.realize().data.copy()


class GumbelSoftmaxPolicy:
    """Per-context categorical policy over ``K`` actions, relaxed with Gumbel-Softmax.

    ``logits`` play the role of ``log alpha``; a soft realisation is
    ``softmax((logits + g) / tau)`` with fresh Gumbel noise ``g`` per batch
    element and context row.
    """

    kind = "discrete"

    def __init__(self, logits: np.ndarray, schedule: TemperatureSchedule | None = None,
                 mode: str = "soft"):
        self.logits = dg.Tensor(np.asarray(logits, dtype=np.float64), requires_grad=True)
        self.schedule = schedule or TemperatureSchedule()
        if mode not in ("soft", "hard", "argmax"):
            raise DesignError(f"unknown policy mode {mode!r}")
        self.mode = mode

    @classmethod
    def initialize(cls, D: int, K: int, schedule: TemperatureSchedule | None = None,
                   rng: RngStream | None = None, scale: float = 0.0) -> "GumbelSoftmaxPolicy":
        logits = np.zeros((D, K))
        if scale > 0:
            logits = scale * rng.generator.standard_normal((D, K))
        return cls(logits, schedule)

    def parameters(self) -> list[dg.Tensor]:
        return [self.logits]

    @property
    def shape(self):
        return self.logits.shape

    def realize(self, rng: RngStream | None = None, step: int = 0, batch: int | None = None,
                noise: np.ndarray | None = None, tau: float | None = None,
                mode: str | None = None) -> dg.Tensor:
        """``B x D x K`` relaxed one-hot rows (``D x K`` when ``batch`` is None)."""
        mode = mode or ("hard" if self.schedule.hard(step) else self.mode)
        D, K = self.logits.shape
        if mode == "argmax":
            return dg.Tensor(np.eye(K)[np.argmax(self.logits.data, axis=-1)])
        tau = self.schedule.tau(step) if tau is None else tau
        if tau <= 0:
            raise DesignError(f"temperature must be positive, got {tau}")
        shape = (D, K) if batch is None else (batch, D, K)
        if noise is None:
            if rng is None:
                raise DesignError("realising a Gumbel-Softmax policy needs an rng or explicit noise")
            noise = sample_array("gumbel", shape, rng)
        soft = dg.softmax((self.logits + dg.Tensor(noise)) * (1.0 / tau), axis=-1)
        if mode == "soft":
            return soft
        hard = np.eye(K)[np.argmax(soft.data, axis=-1)]
        return dg.straight_through(soft, hard)

    def probabilities(self) -> np.ndarray:
        z = self.logits.data - self.logits.data.max(-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(-1, keepdims=True)

    def extract_final(self) -> np.ndarray:
        """Noise-free per-row argmax as action indices (lowest index on ties)."""
        return np.argmax(self.logits.data, axis=-1)


class FixedDesign:
    """A concrete, non-trainable design (baselines, or a finished optimised design)."""

    def __init__(self, actions: np.ndarray, space: ActionSpace):
        self.space = space
        actions = np.asarray(actions)
        if space.is_discrete:
            idx = actions.astype(int).reshape(-1)
            if np.any((idx < 0) | (idx >= space.K)):
                raise DesignError(f"action indices must lie in [0, {space.K})")
            self.actions = idx
            self.matrix = np.eye(space.K)[idx]
        else:
            self.actions = np.asarray(actions, dtype=np.float64).reshape(len(actions), -1)
            self.matrix = self.actions
        self.kind = "fixed"

    def parameters(self) -> list[dg.Tensor]:
        return []

    def realize(self, rng=None, step: int = 0, batch: int | None = None) -> dg.Tensor:
        return dg.Tensor(self.matrix)

    def extract_final(self) -> np.ndarray:
        return self.actions.copy()


def realize(design, rng: RngStream | None, step: int, batch: int | None = None) -> dg.Tensor:
    return design.realize(rng, step, batch)


def extract_final(design) -> np.ndarray:
    return design.extract_final()


def make_design(model: RewardModel, D: int, rng: RngStream, schedule: TemperatureSchedule | None = None,
                init: str = "default", init_scale: float | None = None, C=None):
    """Trainable design suited to the model's action space.

    ``init="prior_optimum"`` centres unbounded continuous designs on the prior
    mean of each context's optimal action.
    """
    space = model.action_space
    if space.kind == "discrete":
        return GumbelSoftmaxPolicy.initialize(D, space.K, schedule, rng, scale=init_scale or 0.0)
    if space.kind in ("continuous", "box-binary"):
        center = None
        if init == "prior_optimum":
            if C is None:
                raise DesignError("prior_optimum initialisation needs the experimental contexts")
            draws = model.sample_prior(1000, rng.split(7))
            center = np.mean(np.stack([model.true_optimum(draws.single(i), C)[0]
                                       for i in range(len(draws))]), axis=0)
        elif init != "default":
            raise DesignError(f"unknown design init {init!r}")
        return ContinuousDesign.initialize(space, D, rng, scale=init_scale, center=center)
    raise ModelError(f"model {model.name} has no design space")


def fixed_from_final(design, space: ActionSpace) -> FixedDesign:
    return FixedDesign(design.extract_final(), space)


# -- persistence -------------------------------------------------------------------
def design_to_json(design, model_name: str, source: str, extra: dict | None = None) -> dict:
    actions = design.extract_final()
    blob = {"schema": DESIGN_SCHEMA, "model": model_name, "source": source,
            "kind": "discrete" if actions.ndim == 1 else "continuous",
            "actions": actions.tolist()}
    if isinstance(design, GumbelSoftmaxPolicy):
        blob["logits"] = design.logits.data.tolist()
    elif isinstance(design, ContinuousDesign):
        blob["raw"] = design.raw.data.tolist()
        blob["bounds"] = design.bounds
    if extra:
        blob.update(extra)
    return blob


def save_design(path, design, model_name: str, source: str, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(design_to_json(design, model_name, source, extra), indent=2,
                                     sort_keys=True))


def load_design(path, space: ActionSpace, model_name: str | None = None) -> FixedDesign:
    blob = json.loads(Path(path).read_text())
    if blob.get("schema") != DESIGN_SCHEMA:
        raise DesignError(f"unsupported design schema {blob.get('schema')!r}")
    if model_name is not None and blob.get("model") != model_name:
        raise DesignError(f"design was made for model {blob.get('model')!r}, not {model_name!r}")
    actions = np.asarray(blob["actions"])
    if space.is_discrete != (actions.ndim == 1):
        raise DesignError("design kind does not match the model's action space")
    if not space.is_discrete and actions.shape[1] != space.dim:
        raise DesignError(f"design has action dimension {actions.shape[1]}, model expects {space.dim}")
    return FixedDesign(actions, space)
