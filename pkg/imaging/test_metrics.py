"""
Tests for imaging/metrics.py.
"""

import math

import numpy as np
import pytest

from imaging import metrics
from lib.tensorio import Image2D, Volume3D


def random_pair(seed=0, shape=(32, 32)):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=shape)
    return a, np.clip(a + 0.1 * rng.normal(size=shape), 0, 1)


def test_psnr_identical_is_capped():
    a, _ = random_pair()
    assert metrics.psnr(a, a) == 99.0


def test_psnr_of_constants():
    assert metrics.psnr(np.zeros((4, 4)), np.ones((4, 4))) == pytest.approx(0.0)
    assert metrics.psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) == pytest.approx(20.0)


def test_psnr_validation():
    with pytest.raises(ValueError, match="shape mismatch"):
        metrics.psnr(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ValueError):
        metrics.psnr(np.zeros((4, 4)), np.zeros((4, 4)), data_range=0.0)


def test_psnr_symmetric_and_affine_invariant():
    a, b = random_pair(1)
    assert metrics.psnr(a, b) == pytest.approx(metrics.psnr(b, a))
    assert metrics.psnr(3 * a + 2, 3 * b + 2, data_range=3.0) == pytest.approx(metrics.psnr(a, b))
    assert metrics.psnr(Image2D(a, 0.25), Image2D(b, 0.25)) == pytest.approx(metrics.psnr(a, b))


def test_ssim_identical_is_one():
    a, _ = random_pair(2)
    assert metrics.ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_of_inverted_binary_is_negative():
    a = (np.random.default_rng(3).uniform(size=(32, 32)) > 0.5).astype(float)
    assert metrics.ssim(a, 1 - a) < 0


def test_ssim_symmetric_and_scale_invariant():
    a, b = random_pair(4)
    score = metrics.ssim(a, b)
    assert -1.0 <= score <= 1.0
    assert metrics.ssim(b, a) == pytest.approx(score, abs=1e-12)
    assert metrics.ssim(5 * a, 5 * b, data_range=5.0) == pytest.approx(score, abs=1e-9)


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError, match="SSIM window"):
        metrics.ssim(np.zeros((10, 32)), np.zeros((10, 32)))
    with pytest.raises(ValueError):
        metrics.ssim(np.zeros((12, 12, 12)), np.zeros((12, 12, 12)))


def test_normalize_volume():
    v = np.array([[[2.0, 4.0], [6.0, 10.0]]])
    assert metrics.normalize_volume(v).ravel().tolist() == [0.0, 0.25, 0.5, 1.0]
    assert np.array_equal(metrics.normalize_volume(np.full((1, 2, 2), 3.0)), np.ones((1, 2, 2)))
    assert np.array_equal(metrics.normalize_volume(np.full((1, 2, 2), -3.0)), np.zeros((1, 2, 2)))


def test_mse_cross_sections():
    v = np.random.default_rng(5).uniform(size=(4, 8, 8))
    assert metrics.mse_cross_sections(v, v) == 0.0
    assert metrics.mse_cross_sections(np.zeros((2, 3, 3)), np.ones((2, 3, 3))) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        metrics.mse_cross_sections(np.zeros((2, 3, 3)), np.zeros((2, 3, 4)))
    with pytest.raises(ValueError):
        metrics.mse_cross_sections(np.zeros((3, 3)), np.zeros((3, 3)))


def test_mse_cross_sections_equals_voxel_mse():
    rng = np.random.default_rng(6)
    a = Volume3D(rng.normal(size=(5, 6, 7)), 0.5)
    b = rng.uniform(size=(5, 6, 7))
    flat = np.mean((metrics.normalize_volume(a.data) - metrics.normalize_volume(b)) ** 2)
    assert metrics.mse_cross_sections(a, b) == pytest.approx(flat, abs=1e-12)


def test_metrics_table_fills_missing_with_nan():
    rows = metrics.metrics_table({"sarnet": {"deer": {"psnr": 22.98, "ssim": 0.84}}, "fbp": {"deer": {"mse": 0.2}}})
    assert [label for label, _ in rows] == [("fbp", "deer"), ("sarnet", "deer")]
    fbp_values = rows[0][1]
    assert math.isnan(fbp_values[0]) and math.isnan(fbp_values[1]) and fbp_values[2] == 0.2
    assert rows[1][1][:2] == [22.98, 0.84]
