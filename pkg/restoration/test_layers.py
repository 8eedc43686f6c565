"""
Tests for restoration/layers.py.
"""

import numpy as np
import pytest

from restoration import autograd as ag
from restoration.autograd import NnTensor
from restoration.gradcheck import grad_check
from restoration.layers import CAM, SAFM, BatchNorm2d, Conv2d, ConvBlock, gram_schmidt


def rng(seed=0):
    return np.random.default_rng(seed)


def test_module_discovers_parameters_and_buffers():
    block = ConvBlock(2, 4, 3, rng())
    names = [name for name, _ in block.named_parameters()]
    assert names == [
        "conv1.weight", "conv1.bias", "bn1.gamma", "bn1.beta",
        "conv2.weight", "conv2.bias", "bn2.gamma", "bn2.beta",
    ]
    assert [name for name, _ in block.named_buffers()] == [
        "bn1.running_mean", "bn1.running_var", "bn2.running_mean", "bn2.running_var",
    ]
    assert block.parameter_count() == ConvBlock.count(2, 4, 3)


def test_train_and_eval_propagate():
    block = ConvBlock(1, 2, 1, rng())
    block.eval()
    assert not block.bn1.training and not block.conv2.training
    block.train()
    assert block.bn2.training


def test_conv2d_rejects_even_kernel():
    with pytest.raises(ValueError):
        Conv2d(1, 1, 2, rng())


def test_batchnorm_module_switches_mode():
    bn = BatchNorm2d(2)
    x = NnTensor(rng(1).normal(5.0, 2.0, size=(3, 2, 4, 4)))
    bn(x)
    assert bn.state["running_mean"][0] != 0.0
    bn.eval()
    bn.load_buffer("running_mean", np.zeros(2))
    bn.load_buffer("running_var", np.ones(2))
    out = bn(x)
    assert np.allclose(out.data, x.data / np.sqrt(1 + 1e-5))


def test_gram_schmidt_orthonormal():
    v = NnTensor(rng(2).normal(size=(2, 3, 20)))
    q = gram_schmidt(v).data
    for b in range(2):
        assert np.allclose(q[b] @ q[b].T, np.eye(3), atol=1e-5)


def make_safm(upper=4, channels=8, k=2, seed=0):
    return SAFM(3, 3, upper, channels, k, rng(seed))


def safm_inputs(seed=3, batch=2, size=8, upper=4):
    r = rng(seed)
    return r.normal(size=(batch, 3, size, size)), r.normal(size=(batch, 3, size, size)), r.normal(size=(batch, upper, size, size))


def test_safm_shape_and_basis():
    safm = make_safm()
    amp, phase, upper = safm_inputs()
    out = safm(NnTensor(amp), NnTensor(phase), NnTensor(upper))
    assert out.shape == (2, 8, 8, 8)
    basis = safm.last_basis
    assert basis.shape == (2, 2, 64)
    for b in range(2):
        assert np.allclose(basis[b] @ basis[b].T, np.eye(2), atol=1e-5)


def test_safm_zero_inputs_give_zero():
    safm = make_safm()
    zeros = [NnTensor(np.zeros(shape)) for shape in [(1, 3, 4, 4), (1, 3, 4, 4), (1, 4, 4, 4)]]
    assert not safm(*zeros).data.any()


def test_safm_validation():
    with pytest.raises(ValueError):
        SAFM(3, 3, 4, 2, 4, rng())
    safm = make_safm()
    with pytest.raises(ValueError, match="disagree spatially"):
        safm(NnTensor(np.zeros((1, 3, 4, 4))), NnTensor(np.zeros((1, 3, 4, 4))), NnTensor(np.zeros((1, 4, 2, 2))))


def test_safm_parameter_count():
    safm = make_safm(upper=16, channels=32, k=4)
    assert safm.parameter_count() == SAFM.count(16, 32, 4)


def test_safm_gradients():
    safm = make_safm(seed=4)
    report = {}
    error = grad_check(lambda a, p, u: safm(a, p, u), list(safm_inputs(5)), safm.parameters(), report=report)
    assert error <= 2e-3, report


def test_cam_gates_and_passthrough():
    cam = CAM(8, 4, rng(6))
    x = NnTensor(rng(7).normal(size=(2, 8, 4, 4)))
    out = cam(x)
    assert np.all((cam.last_gates > 0) & (cam.last_gates < 1))
    assert not cam(NnTensor(np.zeros((1, 8, 4, 4)))).data.any()

    cam.excite.bias.data[:] = 50.0
    assert np.allclose(cam(x).data, x.data, atol=1e-12)
    assert out.shape == x.shape


def test_cam_validation_and_count():
    with pytest.raises(ValueError):
        CAM(10, 4, rng())
    assert CAM(12, 4, rng()).parameter_count() == CAM.count(12, 4)


def test_cam_gradients():
    cam = CAM(8, 2, rng(8))
    assert grad_check(cam, [rng(9).normal(size=(2, 8, 3, 3))], cam.parameters()) <= 1e-3


def test_conv_block_gradients_in_eval_mode():
    block = ConvBlock(2, 3, 3, rng(10)).eval()
    for bn in (block.bn1, block.bn2):
        bn.load_buffer("running_mean", rng(11).normal(size=3))
        bn.load_buffer("running_var", rng(12).uniform(0.5, 2.0, size=3))
    assert grad_check(block, [rng(13).normal(size=(2, 2, 5, 5))], block.parameters()) <= 1e-3


def test_concat_of_layers_output():
    conv = Conv2d(2, 3, 1, rng(14))
    x = NnTensor(np.ones((1, 2, 2, 2)))
    merged = ag.concat([conv(x), x], axis=1)
    assert merged.shape == (1, 5, 2, 2)
