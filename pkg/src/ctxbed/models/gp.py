"""GP reward model over ``(c1, c2, a) in [-1, 1]^3`` conditioned on observational data.

A parameter draw holds the function on the evaluation grid ``Cstar x actions``
(sampled from the GP posterior given the observational data) plus standard
normal noise used to draw the function at the experimental inputs from its
conditional given both. The second step is a Cholesky-based pathwise sample,
so gradients reach the experimental actions through the kernel.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .. import diffgraph as dg
from ..stochastics import RngStream
from .base import LOG_2PI, ActionSpace, ContextSet, ModelError, ParamBatch, RewardModel, first_argmax

JITTER_LADDER = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


class CholeskyError(ModelError):
    """Covariance stayed indefinite after the largest jitter."""


def rbf(x1: np.ndarray, x2: np.ndarray, lengthscale: float) -> np.ndarray:
    d2 = ((x1[:, None, :] - x2[None, :, :]) ** 2).sum(-1)
    return np.exp(-0.5 * d2 / lengthscale**2)


def rbf_tensor(x1: dg.Tensor, x2: np.ndarray, lengthscale: float) -> dg.Tensor:
    n, d = x1.shape
    diff = dg.reshape(x1, (n, 1, d)) - dg.Tensor(x2[None, :, :])
    d2 = dg.sum(dg.square(diff), axis=-1)
    return dg.exp(d2 * (-0.5 / lengthscale**2))


def jittered_cholesky(K: np.ndarray, ladder=JITTER_LADDER) -> tuple[np.ndarray, float]:
    K = 0.5 * (K + K.T)
    eye = np.eye(K.shape[0])
    for jitter in ladder:
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            continue
    eig = np.linalg.eigvalsh(K)
    raise CholeskyError(
        f"covariance of size {K.shape[0]} not positive definite after jitter {ladder[-1]:g}: "
        f"min eigenvalue {eig[0]:.3e}, max {eig[-1]:.3e}, condition {eig[-1] / max(abs(eig[0]), 1e-300):.3e}")


def generate_observational_data(n: int, confounded: bool, rng: RngStream) -> np.ndarray:
    """Rows ``(c1, c2, a, y)`` of the observational dataset.

    Confounded data picks ``a = sign(c1) * U(0.8, 1)``; otherwise ``a ~ U(-1, 1)``.
    """
    if n < 0:
        raise ModelError("n must be non-negative")
    g = rng.generator
    c = g.uniform(-1.0, 1.0, (n, 2))
    if confounded:
        a = np.sign(c[:, 0]) * g.uniform(0.8, 1.0, n)
    else:
        a = g.uniform(-1.0, 1.0, n)
    y = 1.0 + np.sin(np.pi * (c[:, 0] - c[:, 1])) - (a - np.sin(np.pi * (c[:, 0] + c[:, 1]))) ** 2
    return np.column_stack([c, a, y])


def context_grid(n: int, half_width: float) -> np.ndarray:
    side = np.linspace(-half_width, half_width, n)
    c1, c2 = np.meshgrid(side, side, indexing="ij")
    return np.column_stack([c1.ravel(), c2.ravel()])


class GPModel(RewardModel):
    name = "gp"

    def __init__(self, observations: np.ndarray | None, cstar: np.ndarray, n_exp: int,
                 grid_size: int = 128, lengthscale: float = 1.0 / 3.0, obs_scale: float = 0.1):
        self.lengthscale = float(lengthscale)
        self.obs_scale = float(obs_scale)
        self.n_exp = int(n_exp)
        obs = np.zeros((0, 4)) if observations is None else np.asarray(observations, float)
        self.obs_x, self.obs_y = obs[:, :3], obs[:, 3]
        self.cstar = np.asarray(cstar, dtype=np.float64).reshape(-1, 2)
        grid = np.linspace(-1.0, 1.0, int(grid_size))
        self.action_space = ActionSpace("continuous", dim=1, lower=-1.0, upper=1.0, grid=grid)
        G = grid.size
        self.x_star = np.column_stack([np.repeat(self.cstar, G, axis=0),
                                       np.tile(grid, len(self.cstar))])
        self._precompute()

    # -- precomputation -----------------------------------------------------------
    def _obs_factor(self):
        K = rbf(self.obs_x, self.obs_x, self.lengthscale) + self.obs_scale**2 * np.eye(len(self.obs_x))
        return cho_factor(K, lower=True)

    def _precompute(self):
        n_obs = len(self.obs_x)
        K_ss = rbf(self.x_star, self.x_star, self.lengthscale)
        if n_obs:
            fac = self._obs_factor()
            K_so = rbf(self.x_star, self.obs_x, self.lengthscale)
            self.mu_star = K_so @ cho_solve(fac, self.obs_y)
            cov_star = K_ss - K_so @ cho_solve(fac, K_so.T)
        else:
            self.mu_star = np.zeros(len(self.x_star))
            cov_star = K_ss
        self.L_star, self.jitter = jittered_cholesky(cov_star)
        # conditioning set: observations (noisy) followed by the evaluation grid (jittered)
        self.x_cond = np.vstack([self.obs_x, self.x_star])
        noise = np.concatenate([np.full(n_obs, self.obs_scale**2), np.full(len(self.x_star), self.jitter)])
        K_cond = rbf(self.x_cond, self.x_cond, self.lengthscale) + np.diag(noise)
        L_cond, _ = jittered_cholesky(K_cond, ladder=(0.0,) + JITTER_LADDER)
        self.K_cond_inv = cho_solve((L_cond, True), np.eye(len(self.x_cond)))

    # -- model interface -------------------------------------------------------------
    @property
    def grid(self) -> np.ndarray:
        return self.action_space.grid[:, 0]

    def sample_prior(self, B, rng: RngStream) -> ParamBatch:
        self.check_params(B)
        g = rng.generator
        z = g.standard_normal((B, len(self.x_star)))
        f_star = self.mu_star[None, :] + z @ self.L_star.T
        return ParamBatch(f_star=f_star, z_exp=g.standard_normal((B, self.n_exp)))

    def _exp_inputs(self, C: ContextSet, A) -> dg.Tensor:
        if len(C) != self.n_exp:
            raise ModelError(f"model built for {self.n_exp} experimental contexts, got {len(C)}")
        A = dg.constant(A)
        if A.ndim != 2:
            raise ModelError("GP designs are shared across the batch: expected shape (D, 1)")
        return dg.concat([dg.Tensor(C.rows), A], axis=1)

    def mean_reward(self, params, C, A):
        """Function values at the experimental inputs (pathwise in the actions)."""
        x_e = self._exp_inputs(C, A)
        K_ec = rbf_tensor(x_e, self.x_cond, self.lengthscale)
        K_ee = rbf_sym(x_e, self.lengthscale)
        Q = K_ec @ dg.Tensor(self.K_cond_inv)
        targets = np.concatenate([np.broadcast_to(self.obs_y, (len(params), len(self.obs_y))),
                                  params["f_star"]], axis=1)
        mean = dg.Tensor(targets) @ dg.transpose(Q)
        cov = K_ee - Q @ dg.transpose(K_ec)
        L = _tensor_cholesky(cov)
        return mean + dg.Tensor(params["z_exp"]) @ dg.transpose(L)

    def f_star(self, params) -> np.ndarray:
        return params["f_star"].reshape(len(params), len(self.cstar), -1)

    def conditional_max_values(self, params, Cstar):
        self._check_cstar(Cstar)
        return self.f_star(params).max(axis=-1)

    def true_optimum(self, params, Cstar):
        self._check_cstar(Cstar)
        f = self.f_star(params.single(0))[0]
        idx = first_argmax(f, axis=-1)
        return self.grid[idx][:, None], f[np.arange(len(f)), idx]

    def _check_cstar(self, Cstar):
        if Cstar is not None and (Cstar.rows.shape != self.cstar.shape or not np.allclose(Cstar.rows, self.cstar)):
            raise ModelError("GP max values are only available on the evaluation grid built into the model")

    def predictive(self, xq: np.ndarray, extra_x=None, extra_y=None) -> tuple[np.ndarray, np.ndarray]:
        """GP mean and covariance at ``xq`` given the observations (plus optional extra data)."""
        x = self.obs_x if extra_x is None else np.vstack([self.obs_x, extra_x])
        y = self.obs_y if extra_y is None else np.concatenate([self.obs_y, extra_y])
        K_qq = rbf(xq, xq, self.lengthscale)
        if len(x) == 0:
            return np.zeros(len(xq)), K_qq
        K = rbf(x, x, self.lengthscale) + self.obs_scale**2 * np.eye(len(x))
        fac = cho_factor(K, lower=True)
        K_qx = rbf(xq, x, self.lengthscale)
        return K_qx @ cho_solve(fac, y), K_qq - K_qx @ cho_solve(fac, K_qx.T)

    def action_values(self, params, C, actions):
        raise ModelError("GP parameter draws only cover the evaluation grid; use sample_action_values")

    def sample_action_values(self, C, n, rng: RngStream) -> np.ndarray:
        """Independent per-context posterior draws over the action grid: ``n x D x G``."""
        G = self.grid.size
        out = np.empty((n, len(C), G))
        for d, c in enumerate(C.rows):
            xq = np.column_stack([np.tile(c, (G, 1)), self.grid])
            mu, cov = self.predictive(xq)
            L, _ = jittered_cholesky(cov)
            out[:, d, :] = mu[None, :] + rng.generator.standard_normal((n, G)) @ L.T
        return out

    def log_likelihood(self, params, dataset):
        C, A, y = dataset
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (len(C),):
            raise ModelError(f"y has shape {y.shape}, expected ({len(C)},)")
        mean = self.mean_reward(params, C, A).data
        resid = (y[None, :] - mean) / self.obs_scale
        return -0.5 * np.sum(resid * resid, axis=1) - len(C) * (0.5 * LOG_2PI + np.log(self.obs_scale))

    def default_contexts(self):
        return ContextSet(context_grid(7, 1.0)), ContextSet(self.cstar)


def rbf_sym(x: dg.Tensor, lengthscale: float) -> dg.Tensor:
    n, d = x.shape
    diff = dg.reshape(x, (n, 1, d)) - dg.reshape(x, (1, n, d))
    return dg.exp(dg.sum(dg.square(diff), axis=-1) * (-0.5 / lengthscale**2))


def _tensor_cholesky(cov: dg.Tensor) -> dg.Tensor:
    n = cov.shape[0]
    sym = (cov + dg.transpose(cov)) * 0.5
    for jitter in JITTER_LADDER:
        try:
            return dg.cholesky(sym + dg.Tensor(jitter * np.eye(n)))
        except dg.DomainError:
            continue
    eig = np.linalg.eigvalsh(sym.data)
    raise CholeskyError(f"conditional covariance indefinite after jitter {JITTER_LADDER[-1]:g}: "
                        f"min eigenvalue {eig[0]:.3e}")
