"""
Tests for restoration/sarnet.py.
"""

import numpy as np
import pytest

from imaging.spectral import FeatureStack
from lib.tensorio import Image2D
from restoration import sarnet
from restoration.autograd import NnTensor
from restoration.gradcheck import grad_check
from restoration.sarnet import Sarnet, SarnetConfig

TINY = SarnetConfig(base_channels=4, subspace_dim=2, max_channels=8)
FREQS = np.linspace(0.3, 1.2, 12)


def random_stack(size=16, seed=0):
    return FeatureStack(np.random.default_rng(seed).uniform(size=(25, size, size)), FREQS)


def test_default_parameter_count():
    cfg = SarnetConfig()
    assert cfg.widths == [16, 32, 64, 64, 64]
    assert sarnet.parameter_count(cfg) == 109_925
    assert Sarnet(cfg).parameter_count() == 109_925


@pytest.mark.parametrize(
    "cfg",
    [TINY, SarnetConfig(base_channels=8, subspace_dim=8, block_kernel=3), SarnetConfig(cam_reduction=2, max_channels=32)],
)
def test_parameter_count_matches_modules(cfg):
    assert Sarnet(cfg).parameter_count() == sarnet.parameter_count(cfg)


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        SarnetConfig(base_channels=2, subspace_dim=4)
    with pytest.raises(ValueError):
        SarnetConfig(block_kernel=2)
    with pytest.raises(ValueError):
        SarnetConfig(base_channels=6, cam_reduction=4)
    assert SarnetConfig.from_dict({**TINY.to_dict(), "unused": 1}) == TINY


def test_band_slices_ascend_with_branch():
    assert sarnet.band_slices(2) == (slice(0, 3), slice(12, 15))
    assert sarnet.band_slices(5) == (slice(9, 12), slice(21, 24))


def test_forward_shape_and_range():
    net = Sarnet(TINY, seed=1)
    x = np.stack([random_stack(32, s).channels for s in range(2)])
    out = net(NnTensor(x))
    assert out.shape == (2, 1, 32, 32)
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0


def test_forward_validation():
    net = Sarnet(TINY)
    with pytest.raises(ValueError, match="divisible by 16"):
        net(NnTensor(np.zeros((1, 25, 24, 24))))
    with pytest.raises(ValueError):
        net(NnTensor(np.zeros((1, 24, 16, 16))))


def test_zero_input_gives_constant_output():
    net = Sarnet(TINY, seed=2).eval()
    out = net(NnTensor(np.zeros((1, 25, 16, 16)))).data
    assert np.allclose(out, out[0, 0, 0, 0], atol=1e-12)


def test_same_seed_same_network():
    x = NnTensor(random_stack(16, 3).channels[None])
    a = Sarnet(TINY, seed=5).eval()(x).data
    b = Sarnet(TINY, seed=5).eval()(x).data
    c = Sarnet(TINY, seed=6).eval()(x).data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sarnet_forward_uses_timemax_and_restores_mode():
    net = Sarnet(TINY, seed=4)
    stack = random_stack(16, 7)
    timemax = Image2D(np.zeros((16, 16)), 0.25)
    out = sarnet.sarnet_forward(timemax, stack, net)
    assert out.shape == (16, 16) and out.pitch_mm == 0.25
    assert net.training

    expected = sarnet.stack_input([stack], [timemax.data])
    assert not expected[0, 0].any()
    assert np.array_equal(expected[0, 1:], stack.channels[1:])


@pytest.mark.slow
def test_full_network_gradients():
    net = Sarnet(TINY, seed=8).eval()
    x = np.stack([random_stack(16, s).channels for s in (9, 10)])
    report = {}
    error = grad_check(net, [x], net.parameters(), max_coords=6, report=report)
    assert error <= 5e-3, report
