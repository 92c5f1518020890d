"""Deployment-phase scoring: infer optimal actions from simulated experiment data.

For each ground-truth environment we simulate the experiment under a fixed
design, form a posterior (importance-weighted prior particles, exact Gaussian
conditioning for the GP model, or a cross-validated Lasso fit for the causal
model), act greedily under it on the evaluation contexts, and compare with the
truth.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import diffgraph as dg
from .inference import PosteriorError, snis_posterior
from .models.base import ContextSet, first_argmax
from .models.causal import CausalGraphModel, closed_form_actions
from .models.gp import GPModel, rbf
from .stochastics import STREAMS, RngStream

METRICS_SCHEMA = "metrics/v1"
METRICS_COLUMNS = ("schema", "method", "eig", "eig_se", "mse_m", "mse_m_se", "hit_rate", "hit_rate_se",
                   "mse_a", "mse_a_se", "regret", "regret_se", "reward", "reward_se", "n_env", "n_dropped",
                   "flagged", "seed")
REFINE_STEPS = 20
MAX_DROP_FRACTION = 0.05


@dataclass
class MetricsReport:
    method: str
    n_env: int
    n_dropped: int
    regret: float
    regret_se: float
    mse_m: float
    mse_m_se: float
    hit_rate: float | None = None
    hit_rate_se: float | None = None
    mse_a: float | None = None
    mse_a_se: float | None = None
    reward: float = float("nan")
    reward_se: float = float("nan")
    eig: float | None = None
    eig_se: float | None = None
    mean_ess: float | None = None
    seed: int | None = None
    flagged: bool = False
    per_env: dict = field(default_factory=dict, repr=False)

    def row(self) -> dict:
        d = {k: getattr(self, k) for k in METRICS_COLUMNS if k != "schema"}
        d["schema"] = METRICS_SCHEMA
        return d

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("per_env")
        d["schema"] = METRICS_SCHEMA
        return d

    def write(self, directory) -> None:
        directory = Path(directory)
        (directory / "metrics.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))
        write_metrics_csv(directory / "metrics.csv", [self])


def write_metrics_csv(path, reports: list[MetricsReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        w.writeheader()
        for r in reports:
            w.writerow({k: ("" if v is None else v) for k, v in r.row().items()})


def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return float("nan"), float("nan")
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


# -- Lasso ------------------------------------------------------------------------
@dataclass
class LassoResult:
    coef: np.ndarray
    converged: bool
    n_iter: int
    objective: list[float]


@dataclass
class LassoFit:
    coef: np.ndarray
    penalty: float
    penalties: np.ndarray
    cv_scores: np.ndarray


def _column_scale(X: np.ndarray) -> np.ndarray:
    scale = np.sqrt(np.mean(X * X, axis=0))
    return np.where(scale > 0, scale, 1.0)


def lasso_objective(X, y, beta, penalty) -> float:
    r = y - X @ beta
    return float(0.5 * (r @ r) / len(y) + penalty * np.abs(beta).sum())


def lasso_max_penalty(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty giving the all-zero fit (on RMS-scaled columns)."""
    X = np.asarray(X, dtype=np.float64)
    return float(np.max(np.abs((X / _column_scale(X)).T @ y)) / len(y))


def lasso_coordinate_descent(X, y, penalty: float, tol: float = 1e-10, max_iter: int = 10_000,
                             warm_start: np.ndarray | None = None) -> LassoResult:
    """Cyclic coordinate descent with soft-thresholding.

    Columns are scaled to unit RMS internally and the fit is mapped back, so
    ``penalty`` acts on the scaled problem. Stops when the largest coefficient
    change in a sweep drops below ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if penalty < 0:
        raise ValueError("penalty must be >= 0")
    n, p = X.shape
    scale = _column_scale(X)
    Z = X / scale
    col_sq = np.einsum("ij,ij->j", Z, Z) / n
    beta = np.zeros(p) if warm_start is None else np.asarray(warm_start, float) * scale
    r = y - Z @ beta
    objective = [lasso_objective(Z, y, beta, penalty)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        biggest = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            old = beta[j]
            rho = Z[:, j] @ r / n + col_sq[j] * old
            new = np.sign(rho) * max(abs(rho) - penalty, 0.0) / col_sq[j]
            if new != old:
                r -= Z[:, j] * (new - old)
                beta[j] = new
                biggest = max(biggest, abs(new - old))
        objective.append(lasso_objective(Z, y, beta, penalty))
        if biggest < tol:
            converged = True
            break
    return LassoResult(beta / scale, converged, it, objective)


def penalty_grid(X, y, n: int = 30, low: float = 1e-4) -> np.ndarray:
    top = lasso_max_penalty(X, y)
    if top == 0:
        return np.zeros(1)
    return top * np.logspace(0.0, np.log10(low), n)


def _path(X, y, penalties, tol, max_iter) -> list[np.ndarray]:
    """Fits along ``penalties`` visited from largest to smallest with warm starts."""
    order = np.argsort(-penalties, kind="stable")
    coefs = [None] * len(penalties)
    warm = None
    for i in order:
        warm = lasso_coordinate_descent(X, y, penalties[i], tol, max_iter, warm_start=warm).coef
        coefs[i] = warm
    return coefs


def lasso_cv_select(X, y, penalties=None, folds: int = 5, rng: RngStream | None = None,
                    tol: float = 1e-8, max_iter: int = 2000) -> LassoFit:
    """Penalty minimising mean held-out squared error over ``folds`` folds, refit on all rows."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if folds < 2:
        raise ValueError("need at least two folds")
    penalties = penalty_grid(X, y) if penalties is None else np.asarray(penalties, dtype=np.float64)
    if penalties.size == 0:
        raise ValueError("empty penalty grid")
    n = len(y)
    folds = min(folds, n)
    rng = rng if rng is not None else RngStream(0, STREAMS["lasso_folds"])
    assignment = np.array_split(rng.generator.permutation(n), folds)
    scores = np.zeros(len(penalties))
    if len(penalties) > 1:
        for held in assignment:
            train = np.setdiff1d(np.arange(n), held)
            for i, coef in enumerate(_path(X[train], y[train], penalties, tol, max_iter)):
                resid = y[held] - X[held] @ coef
                scores[i] += resid @ resid / n
    best = int(np.argmin(scores))
    coef = lasso_coordinate_descent(X, y, penalties[best], tol, max_iter).coef
    return LassoFit(coef, float(penalties[best]), penalties, scores)


def causal_design_matrix(C: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Row ``d`` is the flattened outer product ``c_d a_d^T``."""
    return np.einsum("dk,dl->dkl", C, A).reshape(len(C), -1)


def causal_post_actions(weights_hat: np.ndarray, Cstar) -> np.ndarray:
    """Binary treatments ``a_j = 1[sum_i c_i W_ij > 1]`` per evaluation context."""
    rows = Cstar.rows if isinstance(Cstar, ContextSet) else np.asarray(Cstar, dtype=np.float64)
    return closed_form_actions(np.asarray(weights_hat)[None], rows)[0][0]


# -- per-environment inference ------------------------------------------------------
def _refine(value_fn, a0: np.ndarray, step: float, lower: float, upper: float) -> np.ndarray:
    """Coordinate-wise local ascent: try +/- step, keep improvements, halve otherwise."""
    a = a0.copy()
    h = np.full_like(a, step)
    f = value_fn(a)
    for _ in range(REFINE_STEPS):
        up = np.clip(a + h, lower, upper)
        down = np.clip(a - h, lower, upper)
        f_up, f_down = value_fn(up), value_fn(down)
        take_up = (f_up > f) & (f_up >= f_down)
        take_down = (f_down > f) & ~take_up
        a = np.where(take_up, up, np.where(take_down, down, a))
        f = np.where(take_up, f_up, np.where(take_down, f_down, f))
        h = np.where(take_up | take_down, h, 0.5 * h)
    return a


class _Evaluator:
    """Everything needed to score one environment; picklable for worker pools."""

    def __init__(self, model, design, C, Cstar, n_particles, seed, support_mass, lasso_grid):
        self.model, self.C, self.Cstar = model, C, Cstar
        self.A = np.asarray(design.matrix, dtype=np.float64)
        self.n_particles = n_particles
        self.seed = seed
        self.support_mass = support_mass
        self.lasso_grid = lasso_grid
        space = model.action_space
        self.discrete = space.is_discrete
        if isinstance(model, GPModel):
            self._gp_setup()

    def _gp_setup(self):
        m = self.model
        x_e = np.column_stack([self.C.rows, self.A])
        x = np.vstack([m.obs_x, x_e])
        K = rbf(x, x, m.lengthscale) + m.obs_scale**2 * np.eye(len(x))
        fac = cho_factor(K, lower=True)
        self.gp_mean_map = cho_solve(fac, rbf(x, m.x_star, m.lengthscale)).T  # (D*G) x (n_obs + D)

    def streams(self, e: int):
        return (RngStream(self.seed, STREAMS["eval_truth"], (e,)),
                RngStream(self.seed, STREAMS["eval_noise"], (e,)),
                RngStream(self.seed, STREAMS["eval_particles"], (e,)),
                RngStream(self.seed, STREAMS["lasso_folds"], (e,)))

    def __call__(self, e: int) -> dict | None:
        model, C, Cstar = self.model, self.C, self.Cstar
        truth_rng, noise_rng, particle_rng, fold_rng = self.streams(e)
        truth = model.sample_prior(1, truth_rng)
        y = model.simulate_rewards(truth, C, dg.Tensor(self.A), rng=noise_rng).data[0]
        a_true, m_true = model.true_optimum(truth, Cstar)
        ess = float("nan")
        if isinstance(model, GPModel):
            post_mean = self.gp_mean_map @ np.concatenate([model.obs_y, y])
            post_mean = post_mean.reshape(len(Cstar), -1)
            idx = first_argmax(post_mean, axis=-1)
            a_post = model.grid[idx][:, None]
            m_post = post_mean[np.arange(len(Cstar)), idx]
            achieved = model.f_star(truth)[0][np.arange(len(Cstar)), idx]
        elif isinstance(model, CausalGraphModel):
            X = causal_design_matrix(C.rows, self.A)
            target = y + self.A.sum(axis=1)
            fit = lasso_cv_select(X, target, self.lasso_grid, 5, fold_rng)
            W_hat = fit.coef.reshape(model.k, model.n_treatments)
            a_post = causal_post_actions(W_hat, Cstar)
            gain_hat = Cstar.rows @ W_hat - 1.0
            m_post = np.sum(gain_hat * a_post, axis=-1)
            achieved = model.reward_of(truth, Cstar, a_post)[0]
        else:
            try:
                post = snis_posterior(model, (C, self.A, y), self.n_particles, particle_rng, warn=False)
            except PosteriorError:
                return None
            ess = post.ess
            keep = post.support(self.support_mass)
            parts = post.particles.take(keep)
            w = post.weights[keep]
            w = w / w.sum()
            space = model.action_space
            vals = model.action_values(parts, Cstar, space.candidates())  # n x D* x G
            post_vals = np.einsum("n,ndg->dg", w, vals)
            idx = first_argmax(post_vals, axis=-1)
            if self.discrete:
                a_post = idx
                m_post = post_vals[np.arange(len(Cstar)), idx]
            else:
                def value_fn(a):
                    v = model.action_values(parts, Cstar, a)  # n x D* x D*
                    return np.einsum("n,nd->d", w, np.diagonal(v, axis1=1, axis2=2))

                grid = space.grid[:, 0]
                step = float(grid[1] - grid[0]) if grid.size > 1 else 1.0
                a_post = _refine(value_fn, grid[idx], step, space.lower, space.upper)
                m_post = value_fn(a_post)
                a_post = a_post[:, None]
            achieved = model.reward_of(truth, Cstar, a_post)[0]
        regret = m_true - achieved
        out = {"regret": float(np.mean(regret)), "mse_m": float(np.mean((m_post - m_true) ** 2)),
               "reward": float(np.mean(achieved)), "ess": ess, "min_regret": float(np.min(regret))}
        if self.discrete:
            out["hit_rate"] = float(np.mean(a_post == a_true))
        else:
            diff = np.asarray(a_post, float).reshape(len(Cstar), -1) - np.asarray(a_true, float).reshape(len(Cstar), -1)
            out["mse_a"] = float(np.mean(np.sum(diff * diff, axis=-1)))
        return out


def _run_chunk(evaluator: _Evaluator, envs: list[int]) -> list:
    return [evaluator(e) for e in envs]


def evaluate_design(model, design, C, Cstar, n_environments: int, n_particles: int = 2000,
                    seed: int = 0, method: str = "design", jobs: int = 1,
                    support_mass: float = 1.0 - 1e-12, lasso_grid=None) -> MetricsReport:
    """Average deployment metrics over ``n_environments`` prior draws of the truth.

    Deterministic in ``(design, seed, n_environments)`` regardless of ``jobs``.
    Particles outside the smallest set holding ``support_mass`` of the posterior
    weight are skipped when forming posterior-mean rewards.
    """
    if n_environments < 1:
        raise ValueError("need at least one environment")
    evaluator = _Evaluator(model, design, C, Cstar, n_particles, seed, support_mass, lasso_grid)
    envs = list(range(n_environments))
    if jobs > 1:
        chunks = [envs[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(jobs) as pool:
            parts = list(pool.map(_run_chunk, [evaluator] * jobs, chunks))
        by_env = {}
        for chunk, res in zip(chunks, parts):
            by_env.update(zip(chunk, res))
        results = [by_env[e] for e in envs]
    else:
        results = _run_chunk(evaluator, envs)
    kept = [r for r in results if r is not None]
    dropped = len(results) - len(kept)
    if not kept:
        raise PosteriorError("every environment failed")
    per_env = {k: np.array([r[k] for r in kept]) for k in kept[0]}
    regret, regret_se = _mean_se(per_env["regret"])
    mse_m, mse_m_se = _mean_se(per_env["mse_m"])
    reward, reward_se = _mean_se(per_env["reward"])
    report = MetricsReport(method, len(kept), dropped, regret, regret_se, mse_m, mse_m_se,
                           reward=reward, reward_se=reward_se, seed=seed,
                           flagged=dropped > MAX_DROP_FRACTION * n_environments, per_env=per_env)
    if "hit_rate" in per_env:
        report.hit_rate, report.hit_rate_se = _mean_se(per_env["hit_rate"])
    else:
        report.mse_a, report.mse_a_se = _mean_se(per_env["mse_a"])
    ess = per_env["ess"]
    if np.any(np.isfinite(ess)):
        report.mean_ess = float(np.nanmean(ess))
    return report
