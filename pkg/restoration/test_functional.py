"""
Tests for restoration/functional.py. Gradient checks go through the autograd
wrappers so the same finite-difference harness covers every primitive.
"""

import numpy as np
import pytest

from restoration import autograd as ag
from restoration import functional as F
from restoration.autograd import Parameter
from restoration.gradcheck import grad_check


def test_conv_identity_weight():
    x = np.random.default_rng(0).normal(size=(2, 3, 5, 5))
    w = np.eye(3)[:, :, None, None]
    out, _ = F.conv2d_forward(x, w)
    assert np.allclose(out, x)


def test_conv_zero_weight_gives_bias():
    x = np.random.default_rng(1).normal(size=(2, 3, 4, 4))
    out, _ = F.conv2d_forward(x, np.zeros((2, 3, 3, 3)), np.array([0.5, -1.0]))
    assert np.allclose(out[:, 0], 0.5) and np.allclose(out[:, 1], -1.0)


def test_conv_keeps_constant_input_constant():
    w = np.random.default_rng(2).normal(size=(4, 2, 3, 3))
    x = np.full((1, 2, 6, 6), 0.7)
    out, _ = F.conv2d_forward(x, w)
    expected = 0.7 * w.sum(axis=(1, 2, 3))
    assert np.allclose(out, expected[None, :, None, None])


def test_conv_matches_direct_sum():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(1, 2, 3, 3))
    out, _ = F.conv2d_forward(x, w, np.array([0.25]))
    # interior pixel, no padding involved
    direct = 0.25 + np.sum(x[0, :, 1:4, 2:5] * w[0])
    assert out[0, 0, 2, 3] == pytest.approx(direct)


def test_conv_validation():
    with pytest.raises(ValueError, match="channel mismatch"):
        F.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 1, 1)))
    with pytest.raises(ValueError):
        F.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 2, 2, 2)))
    with pytest.raises(ValueError):
        F.conv2d_forward(np.zeros((2, 4, 4)), np.zeros((1, 2, 1, 1)))


def test_conv_gradients():
    rng = np.random.default_rng(4)
    w = Parameter(rng.normal(size=(4, 3, 3, 3)), "weight")
    b = Parameter(rng.normal(size=4), "bias")
    assert grad_check(lambda x: ag.conv2d(x, w, b), [rng.normal(size=(2, 3, 5, 5))], [w, b]) <= 1e-3


def test_fold_edge_pad_is_adjoint_of_pad():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(1, 2, 4, 5))
    y = rng.normal(size=(1, 2, 8, 9))
    padded = np.pad(x, ((0, 0), (0, 0), (2, 2), (2, 2)), mode="edge")
    assert np.vdot(padded, y) == pytest.approx(np.vdot(x, F._fold_edge_pad(y, 2, 4, 5)))


def test_batchnorm_train_normalises():
    x = np.random.default_rng(6).normal(3.0, 10.0, size=(4, 3, 5, 5))
    out, _ = F.batchnorm2d_forward(x, np.ones(3), np.zeros(3), {"mode": "train"})
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-5)


def test_batchnorm_constant_channel_is_zero():
    x = np.full((2, 1, 3, 3), 4.2)
    out, _ = F.batchnorm2d_forward(x, np.ones(1), np.zeros(1), {"mode": "train"})
    assert np.allclose(out, 0.0)


def test_batchnorm_running_statistics():
    x = np.arange(8, dtype=float).reshape(2, 1, 2, 2)
    param = {"mode": "train"}
    F.batchnorm2d_forward(x, np.ones(1), np.zeros(1), param)
    assert param["running_mean"][0] == pytest.approx(0.1 * 3.5)
    assert param["running_var"][0] == pytest.approx(0.9 + 0.1 * np.var(x, ddof=1))

    param["mode"] = "eval"
    out, _ = F.batchnorm2d_forward(x, np.full(1, 2.0), np.full(1, 1.0), param)
    expected = 2.0 * (x - param["running_mean"][0]) / np.sqrt(param["running_var"][0] + 1e-5) + 1.0
    assert np.allclose(out, expected)


def test_batchnorm_validation():
    with pytest.raises(ValueError):
        F.batchnorm2d_forward(np.zeros((1, 2, 1, 1)), np.ones(2), np.zeros(2), {"mode": "train"})
    with pytest.raises(ValueError, match="invalid batch norm mode"):
        F.batchnorm2d_forward(np.zeros((2, 2, 2, 2)), np.ones(2), np.zeros(2), {"mode": "test"})


@pytest.mark.parametrize("mode", ["train", "eval"])
def test_batchnorm_gradients(mode):
    rng = np.random.default_rng(7)
    gamma = Parameter(rng.uniform(0.5, 1.5, size=3), "gamma")
    beta = Parameter(rng.normal(size=3), "beta")
    state = {"mode": mode, "running_mean": rng.normal(size=3), "running_var": rng.uniform(0.5, 2.0, size=3)}
    fn = lambda x: ag.batchnorm2d(x, gamma, beta, state)  # noqa: E731
    assert grad_check(fn, [rng.normal(size=(2, 3, 4, 4))], [gamma, beta]) <= 1e-3


def test_relu_sigmoid_softmax_values():
    out, _ = F.relu_forward(np.array([-1.0, 0.0, 2.0]))
    assert out.tolist() == [0.0, 0.0, 2.0]

    with np.errstate(over="raise"):
        s, _ = F.sigmoid_forward(np.array([-1000.0, 0.0, 1000.0]))
    assert s.tolist() == [0.0, 0.5, 1.0]

    p, _ = F.softmax_forward(np.full((2, 4), 3.0), axis=1)
    assert np.allclose(p, 0.25)
    q, _ = F.softmax_forward(np.random.default_rng(8).normal(size=(3, 5)) * 50, axis=0)
    assert np.allclose(q.sum(axis=0), 1.0)


def test_activation_gradients():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(2, 3, 4, 4))
    assert grad_check(ag.relu, [x]) <= 1e-3
    assert grad_check(ag.sigmoid, [x]) <= 1e-3
    assert grad_check(lambda t: ag.softmax(t, axis=1), [x]) <= 1e-3


def test_avgpool_checkerboard():
    board = (np.indices((4, 4)).sum(axis=0) % 2).astype(float)[None, None]
    out, _ = F.avgpool2_forward(board)
    assert out.shape == (1, 1, 2, 2)
    assert np.allclose(out, 0.5)
    with pytest.raises(ValueError, match="even"):
        F.avgpool2_forward(np.zeros((1, 1, 3, 4)))


def test_resampling_preserves_constants():
    x = np.full((1, 2, 8, 6), 1.25)
    down, _ = F.avgpool2_forward(x)
    up, _ = F.upsample2_forward(down)
    assert up.shape == x.shape
    assert np.allclose(up, 1.25)
    assert np.allclose(F.upsample_matrix(5).sum(axis=1), 1.0)


def test_resampling_gradients():
    x = np.random.default_rng(10).normal(size=(2, 3, 4, 6))
    assert grad_check(ag.downsample_half, [x]) <= 1e-3
    assert grad_check(ag.upsample_double, [x]) <= 1e-3
