import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ctxbed import diffgraph as dg
from ctxbed.design import FixedDesign
from ctxbed.models import build_model
from ctxbed.objective import (BoundError, BoundEstimate, estimate_design_eig, infonce_bound,
                              infonce_bound_fresh)
from ctxbed.stochastics import RngStream
from ctxbed.trainer import TrainConfig

scores = st.integers(2, 12).flatmap(
    lambda b: arrays(np.float64, (b, b), elements=st.floats(-50, 50, allow_nan=False)))


def test_constant_scores_give_zero():
    assert infonce_bound(np.full((5, 5), 3.7)).value == pytest.approx(0.0, abs=1e-15)


def test_saturated_scores_reach_log_b():
    S = np.full((64, 64), -10.0)
    np.fill_diagonal(S, 10.0)
    est = infonce_bound(S)
    assert abs(est.value - math.log(64)) < 1e-3
    assert est.value <= est.ceiling and est.n_contrastive == 63


def test_reference_value():
    # frozen from a direct evaluation with scipy.special.logsumexp
    S = np.array([[1.0, 0.0, -1.0], [0.5, 2.0, 0.0], [0.0, 0.0, 0.0]])
    assert infonce_bound(S).value == pytest.approx(0.4944209669, abs=1e-9)


def test_row_and_column_swap_symmetry():
    S = RngStream(0).normal((6, 6))
    p = np.array([1, 0, 2, 3, 5, 4])
    assert infonce_bound(S[p][:, p]).value == pytest.approx(infonce_bound(S).value, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(scores)
def test_bound_never_exceeds_log_b(S):
    assert infonce_bound(S).value <= math.log(S.shape[0]) + 1e-9


@settings(max_examples=100, deadline=None)
@given(scores, st.data())
def test_row_constant_gauge(S, data):
    c = data.draw(arrays(np.float64, (S.shape[0], 1), elements=st.floats(-100, 100)))
    assert infonce_bound(S + c).value == pytest.approx(infonce_bound(S).value, abs=1e-9)


def test_rejects_bad_input():
    with pytest.raises(BoundError, match="row 2"):
        S = np.zeros((3, 3))
        S[2, 0] = np.inf
        infonce_bound(S)
    with pytest.raises(BoundError):
        infonce_bound(np.zeros((3, 4)))
    with pytest.raises(BoundError):
        infonce_bound(np.zeros((1, 1)))


def test_gradient_through_scores():
    S0 = RngStream(1).normal((4, 4))
    assert dg.grad_check(lambda s: infonce_bound(s).tensor, S0) < 1e-6


def test_fresh_mode_matches_formula_and_ceiling():
    r = RngStream(2)
    pos, neg = r.normal(5), r.normal((5, 7))
    est = infonce_bound_fresh(pos, neg)
    allc = np.column_stack([pos, neg])
    lse = np.log(np.exp(allc).sum(1))
    assert est.value == pytest.approx(np.mean(pos - lse + math.log(8)), abs=1e-12)
    assert est.value <= math.log(8)


def test_pooled_stderr():
    a = BoundEstimate.from_rows(np.array([1.0, 2.0, 3.0]), 2)
    b = BoundEstimate.from_rows(np.array([4.0, 5.0]), 2)
    p = BoundEstimate.pooled([a, b])
    assert p.value == 3.0 and p.stderr == pytest.approx(np.std([1, 2, 3, 4, 5], ddof=1) / np.sqrt(5))


def test_pure_noise_design_gives_zero_eig():
    model, C, Cs, _ = build_model("discrete_quadratic", {"D": 3, "obs_scale": 1e6}, 0)
    design = FixedDesign([0, 1, 0], model.action_space)
    # batch norm keeps the critic's inputs at unit scale despite rewards of size 1e6
    cfg = TrainConfig(steps=500, batch_size=64, lr=1e-3,
                      critic={"hidden": [16], "embed_dim": 8, "batch_norm": True}, log_every=500)
    est, _, _ = estimate_design_eig(model, design, C, Cs, cfg, RngStream(0, 30), n_eval_batches=10)
    assert abs(est.value) < 0.05


def test_estimate_rejects_trainable_design():
    from ctxbed.design import GumbelSoftmaxPolicy

    model, C, Cs, _ = build_model("discrete_quadratic", {"D": 3}, 0)
    with pytest.raises(BoundError):
        estimate_design_eig(model, GumbelSoftmaxPolicy(np.zeros((3, 4))), C, Cs, TrainConfig(steps=1),
                            RngStream(0))
