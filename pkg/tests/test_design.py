import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ctxbed import diffgraph as dg
from ctxbed.design import (ContinuousDesign, DesignError, FixedDesign, GumbelSoftmaxPolicy,
                           TemperatureSchedule, load_design, make_design, save_design)
from ctxbed.models import build_model
from ctxbed.models.base import ActionSpace
from ctxbed.stochastics import RngStream

DISCRETE = ActionSpace("discrete", K=4)


def test_schedule_values():
    s = TemperatureSchedule(2.0, 0.5, 10_000, 40_000)
    assert s.tau(0) == 2.0 and s.tau(9_999) == 2.0 and s.tau(10_000) == 1.0 and s.tau(45_000) == 0.125
    assert not s.hard(39_999) and s.hard(40_000)
    with pytest.raises(DesignError):
        TemperatureSchedule(0.0)


def test_infinite_temperature_is_uniform():
    pol = GumbelSoftmaxPolicy(RngStream(0).normal((3, 4)) * 3)
    rows = pol.realize(RngStream(1), batch=10, tau=1e6).data
    np.testing.assert_allclose(rows, 0.25, atol=1e-3)


def test_zero_noise_unit_temperature_is_softmax():
    logits = np.log(np.array([[0.1, 0.2, 0.3, 0.4]]))
    pol = GumbelSoftmaxPolicy(logits)
    row = pol.realize(noise=np.zeros((1, 4)), tau=1.0).data
    np.testing.assert_allclose(row, [[0.1, 0.2, 0.3, 0.4]], atol=1e-12)


def test_nonpositive_temperature_rejected():
    with pytest.raises(DesignError):
        GumbelSoftmaxPolicy(np.zeros((1, 3))).realize(noise=np.zeros((1, 3)), tau=0.0)


def test_argmax_frequencies_follow_softmax():
    alpha = np.array([[0.5, 1.5, -0.3, 0.0]])
    pol = GumbelSoftmaxPolicy(alpha)
    rows = pol.realize(RngStream(2, 4), batch=100_000, tau=0.5).data[:, 0]
    freq = np.bincount(rows.argmax(-1), minlength=4) / 100_000
    np.testing.assert_allclose(freq, pol.probabilities()[0], atol=0.01)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-20, 20)), st.floats(0.01, 100))
def test_soft_rows_sum_to_one(alpha, tau):
    rows = GumbelSoftmaxPolicy(alpha).realize(RngStream(3), batch=4, tau=tau).data
    np.testing.assert_allclose(rows.sum(-1), 1.0, atol=1e-6)


def test_soft_gradient_matches_finite_differences():
    noise = RngStream(4, 4).normal((6, 2, 3))
    W = RngStream(5).normal((6, 2, 3))

    def f(alpha):
        pol = GumbelSoftmaxPolicy(alpha.data)
        pol.logits = alpha
        return dg.sum(pol.realize(noise=noise, tau=0.7, batch=6) * dg.Tensor(W))

    assert dg.grad_check(f, RngStream(6).normal((2, 3))) < 1e-4


def test_hard_mode_one_hot_forward_soft_gradient():
    noise = RngStream(7, 4).normal((5, 2, 3))
    W = RngStream(8).normal((5, 2, 3))
    grads = {}
    for mode in ("soft", "hard"):
        pol = GumbelSoftmaxPolicy(np.array([[0.1, 0.4, -0.2], [1.0, 0.0, 0.3]]))
        out = pol.realize(noise=noise, tau=0.8, batch=5, mode=mode)
        if mode == "hard":
            assert set(np.unique(out.data)) <= {0.0, 1.0}
            np.testing.assert_array_equal(out.data.sum(-1), 1.0)
        dg.backward(dg.sum(out * dg.Tensor(W)))
        grads[mode] = pol.logits.grad
    np.testing.assert_array_equal(grads["soft"], grads["hard"])


def test_schedule_switches_to_hard():
    pol = GumbelSoftmaxPolicy(np.zeros((2, 3)), TemperatureSchedule(1.0, hard_after=5))
    assert not set(np.unique(pol.realize(RngStream(0), step=4, batch=3).data)) <= {0.0, 1.0}
    assert set(np.unique(pol.realize(RngStream(0), step=5, batch=3).data)) <= {0.0, 1.0}


def test_extract_final_examples():
    pol = GumbelSoftmaxPolicy(np.array([[0.1, 5.0, 0.1, 0.1], [2.0, 2.0, 1.0, 0.0]]))
    np.testing.assert_array_equal(pol.extract_final(), [1, 0])
    np.testing.assert_array_equal(pol.realize(mode="argmax").data, np.eye(4)[[1, 0]])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-5, 5)),
       arrays(np.float64, (4, 1), elements=st.floats(-50, 50)))
def test_extract_final_shift_invariant(alpha, shift):
    a = GumbelSoftmaxPolicy(alpha).extract_final()
    b = GumbelSoftmaxPolicy(alpha + shift).extract_final()
    # shifting can only change the result through float rounding of near-ties
    gaps = np.sort(alpha, axis=1)
    clear = gaps[:, -1] - gaps[:, -2] > 1e-9
    np.testing.assert_array_equal(a[clear], b[clear])


def test_continuous_squashing_limits():
    d = ContinuousDesign(np.array([[0.0], [50.0], [-50.0]]), -1.0, 1.0)
    np.testing.assert_allclose(d.extract_final()[:, 0], [0.0, 1.0, -1.0])
    assert ContinuousDesign(np.array([[3.5]])).extract_final()[0, 0] == 3.5


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (5, 2), elements=st.floats(-30, 30)))
def test_continuous_inside_bounds(raw):
    a = ContinuousDesign(raw, -2.0, 3.0).realize().data
    assert np.all(a >= -2.0) and np.all(a <= 3.0)


def test_make_design_per_space():
    m, C, _, _ = build_model("continuous_bump", {"D": 5}, 0)
    d = make_design(m, 5, RngStream(0), init="prior_optimum", C=C)
    assert isinstance(d, ContinuousDesign) and d.bounds is None
    q, Cq, _, _ = build_model("discrete_quadratic", {"D": 5}, 0)
    assert isinstance(make_design(q, 5, RngStream(0)), GumbelSoftmaxPolicy)
    with pytest.raises(DesignError):
        make_design(m, 5, RngStream(0), init="nope")


def test_prior_optimum_centre():
    m, C, _, _ = build_model("continuous_bump", {"D": 5}, 0)
    d = make_design(m, 5, RngStream(0), init="prior_optimum", init_scale=1e-9, C=C)
    # the centre is the average closed-form optimum; for uniform(0.1, 1.1) priors E[g] = 0.6 (1 + c + c^2)
    c = C.rows[:, 0]
    approx = 0.6 * (1 + c + c * c) / (1 + 0.1 * 0.6)
    np.testing.assert_allclose(d.extract_final()[:, 0], approx, rtol=0.1)


def test_design_json_round_trip(tmp_path):
    pol = GumbelSoftmaxPolicy(np.array([[0.0, 2.0, 0.0, 0.0], [3.0, 0.0, 0.0, 0.0]]))
    save_design(tmp_path / "d.json", pol, "discrete_quadratic", "cobed")
    fixed = load_design(tmp_path / "d.json", DISCRETE, "discrete_quadratic")
    np.testing.assert_array_equal(fixed.actions, [1, 0])
    with pytest.raises(DesignError):
        load_design(tmp_path / "d.json", DISCRETE, "gp")
    with pytest.raises(DesignError):
        load_design(tmp_path / "d.json", ActionSpace("continuous", lower=-1.0, upper=1.0))


def test_fixed_design_validates_indices():
    with pytest.raises(DesignError):
        FixedDesign([0, 4], DISCRETE)
    f = FixedDesign([2, 0], DISCRETE)
    assert f.parameters() == [] and np.array_equal(f.realize().data, np.eye(4)[[2, 0]])
