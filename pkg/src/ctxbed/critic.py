"""Separable critic ``U(y, m) = <enc_y(y), enc_m(m)>`` built from small MLPs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffgraph as dg
from .stochastics import RngStream

BN_EPS = 1e-9
BN_MOMENTUM = 0.9
CHECKPOINT_SCHEMA = "critic/v1"


class CriticError(ValueError):
    pass


@dataclass
class BatchNorm:
    """Per-channel batch normalisation with an affine map and running statistics."""

    gamma: dg.Tensor
    beta: dg.Tensor
    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def create(cls, width: int) -> "BatchNorm":
        return cls(dg.Tensor(np.ones(width), requires_grad=True),
                   dg.Tensor(np.zeros(width), requires_grad=True),
                   np.zeros(width), np.ones(width))

    def __call__(self, x: dg.Tensor, train: bool) -> dg.Tensor:
        if train:
            out, (mu, var) = dg.batch_norm(x, self.gamma, self.beta, BN_EPS)
            self.running_mean = BN_MOMENTUM * self.running_mean + (1 - BN_MOMENTUM) * mu
            self.running_var = BN_MOMENTUM * self.running_var + (1 - BN_MOMENTUM) * var
            return out
        scale = self.gamma / np.sqrt(self.running_var + BN_EPS)
        return (x - self.running_mean) * scale + self.beta


@dataclass
class MLP:
    weights: list[dg.Tensor]
    biases: list[dg.Tensor]
    norms: list[BatchNorm | None]

    @classmethod
    def create(cls, sizes: list[int], rng: np.random.Generator, batch_norm: bool) -> "MLP":
        weights, biases, norms = [], [], []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
            weights.append(dg.Tensor(w, requires_grad=True))
            biases.append(dg.Tensor(np.zeros(fan_out), requires_grad=True))
            hidden = i < len(sizes) - 2
            norms.append(BatchNorm.create(fan_out) if (batch_norm and hidden) else None)
        return cls(weights, biases, norms)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def __call__(self, x: dg.Tensor, train: bool = True) -> dg.Tensor:
        n = len(self.weights)
        for i, (w, b, bn) in enumerate(zip(self.weights, self.biases, self.norms)):
            x = dg.linear(x, w, b)
            if i < n - 1:
                if bn is not None:
                    x = bn(x, train)
                x = dg.relu(x)
        return x

    def parameters(self) -> list[dg.Tensor]:
        params = []
        for w, b, bn in zip(self.weights, self.biases, self.norms):
            params += [w, b]
            if bn is not None:
                params += [bn.gamma, bn.beta]
        return params


@dataclass
class SeparableCritic:
    encoder_y: MLP
    encoder_m: MLP
    embed_dim: int
    batch_norm: bool = False
    train_mode: bool = field(default=True)

    def parameters(self) -> list[dg.Tensor]:
        return self.encoder_y.parameters() + self.encoder_m.parameters()

    def train(self, mode: bool = True) -> "SeparableCritic":
        self.train_mode = mode
        return self

    def eval(self) -> "SeparableCritic":
        return self.train(False)

    def embed_y(self, y) -> dg.Tensor:
        return self.encoder_y(dg.constant(y), self.train_mode)

    def embed_m(self, m) -> dg.Tensor:
        return self.encoder_m(dg.constant(m), self.train_mode)

    def score_matrix(self, y, m) -> dg.Tensor:
        """``B x B`` scores; entry ``(i, j)`` pairs y-row ``i`` with m-row ``j``."""
        y, m = dg.constant(y), dg.constant(m)
        if y.shape[0] != m.shape[0]:
            raise CriticError(f"batch sizes differ: {y.shape[0]} vs {m.shape[0]}")
        if self.train_mode and y.shape[0] < 2:
            raise CriticError("training needs B >= 2 so that every row has contrastives")
        return self.embed_y(y) @ dg.transpose(self.embed_m(m))

    def score_pairs(self, y, m_pos, m_neg) -> tuple[dg.Tensor, dg.Tensor]:
        """Positive scores ``(B,)`` and scores against shared contrastives ``(B, L)``."""
        ey = self.embed_y(y)
        pos = dg.sum(ey * self.embed_m(m_pos), axis=1)
        neg = ey @ dg.transpose(self.embed_m(m_neg))
        return pos, neg

    # -- checkpointing ---------------------------------------------------------------
    def to_dict(self) -> dict:
        def enc(mlp: MLP):
            return {
                "sizes": mlp.sizes,
                "weights": [w.data.ravel().tolist() for w in mlp.weights],
                "biases": [b.data.tolist() for b in mlp.biases],
                "norms": [None if bn is None else {
                    "gamma": bn.gamma.data.tolist(), "beta": bn.beta.data.tolist(),
                    "running_mean": bn.running_mean.tolist(), "running_var": bn.running_var.tolist(),
                } for bn in mlp.norms],
            }
        return {"schema": CHECKPOINT_SCHEMA, "embed_dim": self.embed_dim, "batch_norm": self.batch_norm,
                "encoder_y": enc(self.encoder_y), "encoder_m": enc(self.encoder_m)}

    @classmethod
    def from_dict(cls, blob: dict) -> "SeparableCritic":
        if blob.get("schema") != CHECKPOINT_SCHEMA:
            raise CriticError(f"unsupported checkpoint schema {blob.get('schema')!r}")

        def dec(d) -> MLP:
            sizes = d["sizes"]
            weights = [dg.Tensor(np.reshape(w, (i, o)), requires_grad=True)
                       for w, i, o in zip(d["weights"], sizes[:-1], sizes[1:])]
            biases = [dg.Tensor(b, requires_grad=True) for b in d["biases"]]
            norms = [None if n is None else BatchNorm(
                dg.Tensor(n["gamma"], requires_grad=True), dg.Tensor(n["beta"], requires_grad=True),
                np.asarray(n["running_mean"], float), np.asarray(n["running_var"], float))
                for n in d["norms"]]
            return MLP(weights, biases, norms)

        return cls(dec(blob["encoder_y"]), dec(blob["encoder_m"]), int(blob["embed_dim"]),
                   bool(blob["batch_norm"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "SeparableCritic":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_critic(y_dim: int, m_dim: int, hidden: list[int], embed_dim: int = 32,
                batch_norm: bool = False, rng: RngStream | None = None,
                hidden_m: list[int] | None = None) -> SeparableCritic:
    """Fresh critic with He-scaled Gaussian weights and zero biases."""
    sizes = [y_dim, *hidden, embed_dim]
    sizes_m = [m_dim, *(hidden if hidden_m is None else hidden_m), embed_dim]
    if min(sizes + sizes_m) < 1:
        raise CriticError("layer sizes must be positive")
    rng = rng if rng is not None else RngStream(0, 1)
    enc_y = MLP.create(sizes, rng.split(0).generator, batch_norm)
    enc_m = MLP.create(sizes_m, rng.split(1).generator, batch_norm)
    return SeparableCritic(enc_y, enc_m, embed_dim, batch_norm)


def resolve_hidden(spec, input_dim: int) -> list[int]:
    """Hidden sizes from a list of ints or strings like ``"2x"`` (multiples of the input size)."""
    out = []
    for s in spec:
        if isinstance(s, str) and s.endswith("x"):
            out.append(max(1, int(round(float(s[:-1]) * input_dim))))
        else:
            out.append(int(s))
    return out
