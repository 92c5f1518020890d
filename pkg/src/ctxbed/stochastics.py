"""Seeded random streams and reparameterised samplers.

Streams are Philox (counter-based) generators keyed by ``(seed, stream path)``
through :class:`numpy.random.SeedSequence`, so every consumer owns an
independent sequence that does not shift when another consumer draws more or
fewer numbers. The fixed stream ids used across the package are listed in
:data:`STREAMS`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffgraph as dg

STREAMS = {
    "design_init": 0,
    "critic_init": 1,
    "prior": 2,
    "noise": 3,
    "gumbel": 4,
    "contrastive": 5,
    "eval_truth": 10,
    "eval_noise": 11,
    "eval_particles": 12,
    "lasso_folds": 13,
    "baseline": 20,
    "eig_estimate": 30,
    "instance": 40,
}

GUMBEL_CLAMP = 1e-12


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id, *path)``."""

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise ValueError("seed and stream id must be non-negative")
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self.path))
        object.__setattr__(self, "_gen", np.random.Generator(np.random.Philox(ss)))

    @classmethod
    def named(cls, seed: int, name: str) -> "RngStream":
        return cls(seed, STREAMS[name])

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def stream(self, name: str) -> "RngStream":
        """Sibling stream with the table id for ``name`` and this stream's path."""
        return RngStream(self.seed, STREAMS[name], self.path)

    def split(self, child: int) -> "RngStream":
        """Independent child stream; does not advance this one."""
        return RngStream(self.seed, self.stream_id, self.path + (int(child),))

    # thin conveniences over the generator
    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)


def _shape(shape) -> tuple[int, ...]:
    return (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)


def sample_array(dist: str, shape, rng: RngStream, **params) -> np.ndarray:
    """Draw a numpy array from one of the supported distributions."""
    shape = _shape(shape)
    g = rng.generator
    if dist == "standard-normal":
        return g.standard_normal(shape)
    if dist == "uniform":
        a, b = float(params.get("a", 0.0)), float(params.get("b", 1.0))
        if not a < b:
            raise ValueError(f"uniform needs a < b, got a={a}, b={b}")
        return g.uniform(a, b, shape)
    if dist == "gumbel":
        u = np.clip(g.random(shape), GUMBEL_CLAMP, 1.0 - GUMBEL_CLAMP)
        return -np.log(-np.log(u))
    if dist == "bernoulli":
        p = np.asarray(params["p"], dtype=float)
        if np.any((p < 0) | (p > 1)):
            raise ValueError(f"bernoulli needs p in [0, 1], got {p}")
        return (g.random(shape) < p).astype(np.float64)
    if dist == "categorical":
        probs = np.asarray(params["probs"], dtype=float)
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("categorical probabilities must be non-negative and sum to 1")
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, g.random(shape), side="right")
        return np.minimum(idx, probs.size - 1).astype(np.float64)
    if dist == "half-normal":
        sigma = float(params.get("sigma", 1.0))
        if sigma <= 0:
            raise ValueError(f"half-normal needs sigma > 0, got {sigma}")
        return np.abs(g.standard_normal(shape)) * sigma
    raise ValueError(f"unknown distribution {dist!r}")


def sample(dist: str, shape, rng: RngStream, **params) -> dg.Tensor:
    """Constant (non-differentiable) Tensor of samples; see :func:`sample_array`."""
    return dg.Tensor(sample_array(dist, shape, rng, **params))


def reparam_normal(mean, scale, rng: RngStream | None = None, eps: np.ndarray | None = None
                   ) -> dg.Tensor:
    """``mean + scale * eps`` with ``eps ~ N(0, 1)`` held constant on the graph."""
    mean, scale = dg.constant(mean), dg.constant(scale)
    if np.any(scale.data <= 0):
        raise ValueError("reparam_normal: scale must be strictly positive")
    shape = np.broadcast_shapes(mean.shape, scale.shape)
    if eps is None:
        if rng is None:
            raise ValueError("reparam_normal: need an rng or explicit noise")
        eps = rng.generator.standard_normal(shape)
    return mean + scale * dg.Tensor(eps)
