import json

import numpy as np
import pytest

from ctxbed.design import FixedDesign
from ctxbed.evaluate import (METRICS_COLUMNS, causal_design_matrix, causal_post_actions, evaluate_design,
                             lasso_coordinate_descent, lasso_cv_select, lasso_max_penalty,
                             lasso_objective, penalty_grid)
from ctxbed.models import build_model
from ctxbed.models.causal import CausalGraphModel
from ctxbed.models.parametric import DiscreteQuadraticModel
from ctxbed.stochastics import RngStream


# -- Lasso -----------------------------------------------------------------------------
def test_penalty_zero_matches_least_squares():
    r = RngStream(0)
    X, y = r.normal((8, 8)), r.normal(8)
    res = lasso_coordinate_descent(X, y, 0.0, tol=1e-13, max_iter=200_000)
    np.testing.assert_allclose(res.coef, np.linalg.solve(X, y), atol=1e-6)


def test_full_shrinkage_threshold():
    r = RngStream(1)
    X = r.normal((40, 6))
    X /= np.sqrt((X * X).mean(0))
    y = r.normal(40)
    top = np.max(np.abs(X.T @ y)) / 40
    assert lasso_max_penalty(X, y) == pytest.approx(top)
    assert np.all(lasso_coordinate_descent(X, y, top).coef == 0.0)
    assert np.any(lasso_coordinate_descent(X, y, 0.9 * top).coef != 0.0)


def test_orthonormal_columns_soft_threshold():
    n = 50
    Q, _ = np.linalg.qr(RngStream(2).normal((n, 5)))
    X = np.sqrt(n) * Q  # X^T X / n = I
    y = RngStream(3).normal(n)
    lam = 0.1
    z = X.T @ y / n
    expected = np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)
    np.testing.assert_allclose(lasso_coordinate_descent(X, y, lam).coef, expected, atol=1e-9)


def test_objective_non_increasing():
    r = RngStream(4)
    X, y = r.normal((30, 12)), r.normal(30)
    res = lasso_coordinate_descent(X, y, 0.05, tol=1e-12)
    assert res.converged
    assert np.all(np.diff(res.objective) <= 1e-12)


def test_non_convergence_flagged():
    r = RngStream(5)
    X = r.normal((20, 10))
    X[:, 1] = X[:, 0] + 1e-6 * r.normal(20)
    res = lasso_coordinate_descent(X, r.normal(20), 0.0, tol=1e-15, max_iter=3)
    assert not res.converged and res.n_iter == 3


def test_negative_penalty_rejected():
    with pytest.raises(ValueError):
        lasso_coordinate_descent(np.eye(2), np.ones(2), -1.0)


def test_sparse_support_recovery():
    r = RngStream(6)
    n, p = 200, 30
    X = r.normal((n, p))
    beta = np.zeros(p)
    beta[[2, 7, 19]] = [1.5, -2.0, 0.8]
    fit = lasso_cv_select(X, X @ beta, folds=5, rng=RngStream(0, 13))
    np.testing.assert_array_equal(np.flatnonzero(np.abs(fit.coef) > 1e-8), [2, 7, 19])


def test_cv_single_penalty_and_determinism():
    r = RngStream(7)
    X, y = r.normal((25, 4)), r.normal(25)
    assert lasso_cv_select(X, y, [0.3]).penalty == 0.3
    a = lasso_cv_select(X, y, rng=RngStream(3, 13))
    b = lasso_cv_select(X, y, rng=RngStream(3, 13))
    assert a.penalty == b.penalty and np.array_equal(a.cv_scores, b.cv_scores)


def test_penalty_grid_span():
    r = RngStream(8)
    X, y = r.normal((20, 3)), r.normal(20)
    g = penalty_grid(X, y)
    assert len(g) == 30
    assert g[0] == pytest.approx(lasso_max_penalty(X, y)) and g[-1] == pytest.approx(1e-4 * g[0])


def test_lasso_objective_value():
    X = np.array([[1.0, 0.0], [0.0, 2.0]])
    assert lasso_objective(X, np.array([1.0, 1.0]), np.array([1.0, 0.0]), 0.5) == pytest.approx(0.25 + 0.5)


# -- causal decision rule ---------------------------------------------------------------------
def test_causal_design_matrix_outer_product():
    C = np.array([[1.0, 0.0], [1.0, 1.0]])
    A = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
    np.testing.assert_array_equal(causal_design_matrix(C, A)[1], np.outer(C[1], A[1]).ravel())


def test_causal_post_actions_examples():
    m = CausalGraphModel(k=8, n_treatments=6, D=10)
    _, Cs = m.default_contexts()
    assert np.all(causal_post_actions(np.zeros((8, 6)), Cs) == 0)
    for i in range(10):
        p = m.sample_prior(1, RngStream(i, 2))
        W = CausalGraphModel.weights(p)[0]
        a_true, _ = m.true_optimum(p, Cs)
        np.testing.assert_array_equal(causal_post_actions(W, Cs), a_true)
        masked = np.where(p["G"][0] > 0, W, 0.0)
        np.testing.assert_array_equal(causal_post_actions(masked, Cs), a_true)


# -- evaluate_design ----------------------------------------------------------------------------
def test_point_mass_prior_is_perfect():
    model = DiscreteQuadraticModel(prior_var_scale=0.0, D=4)
    C, Cs = model.default_contexts()
    r = evaluate_design(model, FixedDesign([0, 1, 2, 3], model.action_space), C, Cs, 20, 50, seed=0)
    assert r.regret == 0.0 and r.hit_rate == 1.0
    assert r.mse_m == pytest.approx(0.0, abs=1e-20)


@pytest.fixture(scope="module")
def quadratic():
    model, C, Cs, _ = build_model("discrete_quadratic", {"D": 10}, 0)
    return model, C, Cs, FixedDesign([0, 1] * 5, model.action_space)


def test_regret_nonnegative_per_environment(quadratic):
    model, C, Cs, design = quadratic
    r = evaluate_design(model, design, C, Cs, 60, 500, seed=1)
    assert r.per_env["min_regret"].min() >= 0.0
    assert r.regret >= -3 * r.regret_se
    assert 0.0 <= r.hit_rate <= 1.0


def test_deterministic_and_parallel_equivalent(quadratic):
    model, C, Cs, design = quadratic
    a = evaluate_design(model, design, C, Cs, 12, 300, seed=4)
    b = evaluate_design(model, design, C, Cs, 12, 300, seed=4)
    c = evaluate_design(model, design, C, Cs, 12, 300, seed=4, jobs=2)
    assert a.to_json() == b.to_json() == c.to_json()


def test_more_particles_do_not_hurt(quadratic):
    model, C, Cs, design = quadratic
    lo = evaluate_design(model, design, C, Cs, 200, 200, seed=2)
    hi = evaluate_design(model, design, C, Cs, 200, 2000, seed=2)
    assert hi.regret <= lo.regret + 2 * np.hypot(lo.regret_se, hi.regret_se)


def test_continuous_reports_mse_a():
    model, C, Cs, _ = build_model("continuous_bump", {"D": 5}, 0)
    design = FixedDesign(np.linspace(0, 5, 5)[:, None], model.action_space)
    r = evaluate_design(model, design, C, Cs, 10, 300, seed=0)
    assert r.hit_rate is None and r.mse_a >= 0 and r.per_env["min_regret"].min() >= -1e-12


def test_causal_noiseless_identifiable_gives_zero_regret():
    model = CausalGraphModel(k=3, n_treatments=2, D=60, obs_scale=1e-9, rng=RngStream(0, 40))
    C, Cs = model.default_contexts()
    A = (RngStream(1).uniform(size=(60, 2)) < 0.5).astype(float)
    grid = np.array([1e-8, 1e-6])
    r = evaluate_design(model, FixedDesign(A, model.action_space), C, Cs, 10, 10, seed=0, lasso_grid=grid)
    assert r.regret == pytest.approx(0.0, abs=1e-6)


def test_metrics_files(tmp_path, quadratic):
    model, C, Cs, design = quadratic
    r = evaluate_design(model, design, C, Cs, 5, 100, seed=0, method="random")
    r.write(tmp_path)
    blob = json.loads((tmp_path / "metrics.json").read_text())
    assert blob["schema"] == "metrics/v1" and blob["method"] == "random"
    header = (tmp_path / "metrics.csv").read_text().splitlines()[0].split(",")
    assert header == list(METRICS_COLUMNS)
    assert {"method", "eig", "mse_m", "hit_rate", "regret"} <= set(header)
