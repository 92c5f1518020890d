import numpy as np
import pytest

from ctxbed import diffgraph as dg
from ctxbed.critic import CriticError, SeparableCritic, init_critic, resolve_hidden
from ctxbed.stochastics import RngStream


def _critic(bn=False, hidden=(8,), embed=4, seed=0):
    return init_critic(3, 2, list(hidden), embed, bn, RngStream(seed, 1))


def test_same_stream_same_init():
    a, b = _critic(), _critic()
    for p, q in zip(a.parameters(), b.parameters()):
        assert np.array_equal(p.data, q.data)


def test_he_init_scale_and_zero_biases():
    c = init_critic(200, 2, [400], 32, False, RngStream(0, 1))
    w = c.encoder_y.weights[0].data
    assert w.std() == pytest.approx(np.sqrt(2 / 200), rel=0.02)
    assert all(np.all(b.data == 0) for b in c.encoder_y.biases)


def test_zero_input_gives_zero_embedding():
    c = _critic()
    assert np.all(c.embed_y(np.zeros((5, 3))).data == 0)


def test_embedding_width():
    c = _critic(embed=7)
    assert c.embed_m(np.ones((9, 2))).shape == (9, 7)


def test_zero_final_layer_gives_zero_scores():
    c = _critic()
    c.encoder_y.weights[-1].data[:] = 0.0
    r = RngStream(1)
    assert np.all(c.score_matrix(r.normal((4, 3)), r.normal((4, 2))).data == 0.0)


def test_bilinearity_and_permutation_equivariance():
    c = _critic()
    r = RngStream(2)
    y, m = r.normal((6, 3)), r.normal((6, 2))
    S = c.score_matrix(y, m).data
    perm = np.array([3, 1, 5, 0, 2, 4])
    np.testing.assert_allclose(c.score_matrix(y, m[perm]).data, S[:, perm], atol=1e-12)
    c.encoder_y.weights[-1].data *= 2.5
    c.encoder_y.biases[-1].data *= 2.5
    np.testing.assert_allclose(c.score_matrix(y, m).data, 2.5 * S, atol=1e-12)


def test_training_needs_contrastives():
    c = _critic()
    with pytest.raises(CriticError):
        c.score_matrix(np.zeros((1, 3)), np.zeros((1, 2)))
    with pytest.raises(CriticError):
        c.score_matrix(np.zeros((3, 3)), np.zeros((2, 2)))


def test_score_gradients_match_finite_differences():
    c = init_critic(2, 2, [3], 3, False, RngStream(4, 1))
    r = RngStream(5)
    y, m = r.normal((5, 2)), r.normal((5, 2))
    W = r.normal((5, 5))
    for param in c.parameters():
        saved = param.data.copy()
        param.grad = None
        dg.backward(dg.sum(c.score_matrix(y, m) * dg.Tensor(W)))
        analytic = param.grad.copy()
        numeric = np.zeros_like(saved)
        for i in np.ndindex(saved.shape):
            hi, lo = saved.copy(), saved.copy()
            hi[i] += 1e-5
            lo[i] -= 1e-5
            param.data = hi
            fh = np.sum(c.score_matrix(y, m).data * W)
            param.data = lo
            fl = np.sum(c.score_matrix(y, m).data * W)
            numeric[i] = (fh - fl) / 2e-5
        param.data = saved
        err = np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)
        assert err.max() < 1e-4


def test_batch_norm_train_mode_standardises():
    c = _critic(bn=True, hidden=(16,))
    x = RngStream(6).normal((64, 3)) * 5 + 3
    pre = dg.linear(dg.Tensor(x), c.encoder_y.weights[0], c.encoder_y.biases[0]).data
    mu, var = pre.mean(0), pre.var(0)
    xhat = (pre - mu) / np.sqrt(var + 1e-9)
    assert np.abs(xhat.mean(0)).max() < 1e-6
    assert np.abs(xhat.var(0) - 1).max() < 1e-6
    # the layer output before ReLU equals this standardisation at the initial affine (1, 0)
    out = c.encoder_y.norms[0](dg.Tensor(pre), train=True).data
    np.testing.assert_allclose(out, xhat, atol=1e-9)


def test_eval_mode_is_batch_independent():
    c = _critic(bn=True)
    r = RngStream(7)
    for _ in range(5):
        c.score_matrix(r.normal((32, 3)), r.normal((32, 2)))
    c.eval()
    y = r.normal((4, 3))
    alone = c.embed_y(y).data
    mixed = c.embed_y(np.vstack([y, r.normal((20, 3))])).data[:4]
    np.testing.assert_array_equal(alone, mixed)


def test_running_stats_momentum():
    c = _critic(bn=True)
    bn = c.encoder_y.norms[0]
    x = dg.Tensor(RngStream(8).normal((50, 8)))
    bn(x, train=True)
    np.testing.assert_allclose(bn.running_mean, 0.1 * x.data.mean(0))
    np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.data.var(0))


def test_checkpoint_round_trip(tmp_path):
    c = _critic(bn=True)
    r = RngStream(9)
    c.score_matrix(r.normal((16, 3)), r.normal((16, 2)))
    c.save(tmp_path / "critic.json")
    d = SeparableCritic.load(tmp_path / "critic.json")
    c.eval()
    d.eval()
    y, m = r.normal((5, 3)), r.normal((5, 2))
    np.testing.assert_array_equal(c.score_matrix(y, m).data, d.score_matrix(y, m).data)


def test_checkpoint_schema_checked():
    blob = _critic().to_dict()
    blob["schema"] = "critic/v0"
    with pytest.raises(CriticError):
        SeparableCritic.from_dict(blob)


def test_resolve_hidden_multiples():
    assert resolve_hidden(["2x", 412, 256], 20) == [40, 412, 256]
    assert resolve_hidden(["0.5x"], 5) == [2]
