"""InfoNCE lower bound on the mutual information between rewards and max-values."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffgraph as dg


class BoundError(ValueError):
    pass


@dataclass
class BoundEstimate:
    """A bound value in nats together with the per-row terms it averages."""

    value: float
    batch_size: int
    n_contrastive: int
    stderr: float
    rows: np.ndarray = field(repr=False)
    tensor: dg.Tensor | None = field(default=None, repr=False)

    @property
    def ceiling(self) -> float:
        return math.log(self.n_contrastive + 1)

    @classmethod
    def from_rows(cls, rows: np.ndarray, n_contrastive: int, tensor=None) -> "BoundEstimate":
        rows = np.asarray(rows, dtype=np.float64)
        se = float(rows.std(ddof=1) / np.sqrt(len(rows))) if len(rows) > 1 else float("nan")
        return cls(float(rows.mean()), len(rows), n_contrastive, se, rows, tensor)

    @classmethod
    def pooled(cls, estimates: list["BoundEstimate"]) -> "BoundEstimate":
        """Average several independent estimates, SE taken over their pooled rows."""
        if not estimates:
            raise BoundError("nothing to pool")
        rows = np.concatenate([e.rows for e in estimates])
        out = cls.from_rows(rows, estimates[0].n_contrastive)
        out.batch_size = estimates[0].batch_size
        return out


def _check_finite(scores: np.ndarray) -> None:
    bad = ~np.isfinite(scores)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise BoundError(f"non-finite score in row {row}")


def infonce_bound(scores) -> BoundEstimate:
    """``mean_i [s_ii - logsumexp_j s_ij + log B]`` for a ``B x B`` score matrix.

    Row ``i`` pairs outcome ``i`` with every max-value sample ``j``; the
    diagonal holds the positive pairs. Differentiable through ``.tensor``.
    """
    scores = dg.constant(scores)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise BoundError(f"scores must be square, got shape {scores.shape}")
    B = scores.shape[0]
    if B < 2:
        raise BoundError("need B >= 2")
    _check_finite(scores.data)
    idx = np.arange(B)
    rows = scores[idx, idx] - dg.logsumexp(scores, axis=1) + math.log(B)
    return BoundEstimate.from_rows(rows.data, B - 1, dg.mean(rows))


def infonce_bound_fresh(positive, negative) -> BoundEstimate:
    """Bound from positive scores ``(B,)`` and independent contrastive scores ``(B, L)``."""
    positive, negative = dg.constant(positive), dg.constant(negative)
    if positive.ndim != 1 or negative.ndim != 2 or negative.shape[0] != positive.shape[0]:
        raise BoundError(f"expected (B,) and (B, L) scores, got {positive.shape} and {negative.shape}")
    _check_finite(positive.data[:, None])
    _check_finite(negative.data)
    B, L = negative.shape
    allscores = dg.concat([dg.reshape(positive, (B, 1)), negative], axis=1)
    rows = positive - dg.logsumexp(allscores, axis=1) + math.log(L + 1)
    return BoundEstimate.from_rows(rows.data, L, dg.mean(rows))


def bound_for_batch(model, design, critic, C, Cstar, B: int, streams: dict, step: int = 0,
                    fresh_contrastives: int = 0) -> BoundEstimate:
    """Simulate one joint batch and score it. ``streams`` maps names to :class:`RngStream`."""
    params = model.sample_prior(B, streams["prior"].split(step))
    A = None
    if design is not None:
        A = design.realize(streams["gumbel"].split(step), step, B)
    y = model.simulate_rewards(params, C, A, rng=streams["noise"].split(step))
    m = model.conditional_max_values(params, Cstar)
    if fresh_contrastives:
        negatives = model.sample_prior(fresh_contrastives, streams["contrastive"].split(step))
        m_neg = model.conditional_max_values(negatives, Cstar)
        pos, neg = critic.score_pairs(y, m, m_neg)
        return infonce_bound_fresh(pos, neg)
    return infonce_bound(critic.score_matrix(y, m))


def evaluate_bound(model, design, critic, C, Cstar, B: int, n_batches: int, rng,
                   fresh_contrastives: int = 0) -> BoundEstimate:
    """Bound of a fixed design under a frozen critic, pooled over fresh batches."""

    critic.eval()
    streams = {name: rng.stream(name) for name in ("prior", "noise", "gumbel", "contrastive")}
    ests = [bound_for_batch(model, design, critic, C, Cstar, B, streams, step=i,
                            fresh_contrastives=fresh_contrastives) for i in range(n_batches)]
    return BoundEstimate.pooled(ests)


def estimate_design_eig(model, design, C, Cstar, config, rng, n_eval_batches: int = 10):
    """Train a fresh critic for a fixed design, then report its bound on fresh batches.

    Returns ``(estimate, critic, trace)``.
    """
    from .critic import init_critic, resolve_hidden
    from .trainer import optimize

    if design is not None and design.parameters():
        raise BoundError("estimate_design_eig needs a fixed design")
    y_dim, m_dim = len(C), len(Cstar)
    spec = config.critic
    critic = init_critic(y_dim, m_dim, resolve_hidden(spec.hidden, y_dim), spec.embed_dim,
                         spec.batch_norm, rng.stream("critic_init"),
                         hidden_m=None if spec.hidden_m is None else resolve_hidden(spec.hidden_m, m_dim))
    _, critic, trace = optimize(model, C, Cstar, design, critic, config, rng.split(0))
    est = evaluate_bound(model, design, critic, C, Cstar, config.batch_size, n_eval_batches,
                         rng.split(1), fresh_contrastives=config.fresh_contrastives)
    return est, critic, trace
