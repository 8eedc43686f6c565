"""
Tests for imaging/forward_sim.py.
"""

import numpy as np
import pytest

from imaging import cs, forward_sim, phantom
from imaging.physics import MaterialSpec, PulseModel, WaterVaporModel, fresnel_transmission
from lib import runtime

SHORT_PULSE = PulseModel(n_samples=256)
DRY = WaterVaporModel(lines=())


def small_config(size=8, **overrides):
    values = dict(n_views=2, angle_step_deg=6.0, angular_range_deg=12.0, pulse=SHORT_PULSE)
    values.update(overrides)
    return forward_sim.scaled_config(size, 0.25, **values)


def slab(material, shape=(4, 16, 16)):
    return phantom.make_primitive("box", {}, shape=shape, material=material)


def test_scan_config_invariants():
    cfg = forward_sim.ScanConfig()
    assert cfg.width == 288
    assert cfg.angles()[-1] == 174.0
    with pytest.raises(ValueError):
        forward_sim.ScanConfig(n_views=30, angle_step_deg=5.0)
    with pytest.raises(ValueError):
        forward_sim.ScanConfig(x_step_mm=0.0)


def test_air_pixel_is_reference_trace():
    cfg = small_config()
    p = phantom.empty_phantom((8, 8, 8))
    trace = forward_sim.simulate_pixel(p, 0.0, 3, 3, cfg)
    assert np.allclose(trace.samples, forward_sim.reference_trace(cfg).samples, atol=1e-12)


def test_lossless_slab_is_pure_delay():
    glass = MaterialSpec.constant("glass", n=1.5, alpha=0.0)
    p = slab(glass)
    cfg = small_config(16, water=DRY, fresnel=False)
    length = phantom.path_length(p, 0.0, 2, 8)
    trace = forward_sim.simulate_pixel(p, 0.0, 2, 8, cfg)
    reference = forward_sim.reference_trace(cfg)

    delay_ps = 0.5 * length / forward_sim.C_MM_PER_PS
    shift = (np.argmax(trace.samples) - np.argmax(reference.samples)) * cfg.pulse.dt_ps
    assert shift == pytest.approx(delay_ps, abs=cfg.pulse.dt_ps)
    assert np.linalg.norm(trace.samples) == pytest.approx(np.linalg.norm(reference.samples), rel=1e-6)


def test_absorbing_slab_peak_ratio():
    hips = MaterialSpec.constant("hips", n=1.54, alpha=0.2)
    p = slab(hips)
    cfg = small_config(16, water=DRY)
    length = phantom.path_length(p, 0.0, 2, 8)
    assert length == pytest.approx(4.0)

    trace = forward_sim.simulate_pixel(p, 0.0, 2, 8, cfg)
    reference = forward_sim.reference_trace(cfg)
    expected = fresnel_transmission(1.0, 1.54) * fresnel_transmission(1.54, 1.0) * np.exp(-0.4)
    # constant n and alpha: the delay leaves the magnitude spectrum untouched
    assert np.linalg.norm(trace.samples) / np.linalg.norm(reference.samples) == pytest.approx(expected, rel=1e-6)
    assert np.max(trace.samples) / np.max(reference.samples) == pytest.approx(expected, rel=0.1)


def test_pixel_model_is_linear_in_pulse_amplitude():
    p = phantom.make_primitive("sphere", {"radius": 3}, shape=(8, 8, 8))
    base = small_config()
    double = small_config(pulse=PulseModel(n_samples=256, peak_amplitude=2.0))
    a = forward_sim.simulate_view(p, 0, base)
    b = forward_sim.simulate_view(p, 0, double)
    assert np.allclose(b, 2.0 * a, atol=1e-12)


def test_air_spectrum_dips_at_water_lines():
    cfg = forward_sim.ScanConfig()
    spectrum = np.abs(np.fft.rfft(forward_sim.reference_trace(cfg).samples))
    df = cfg.pulse.df_thz
    for center in (0.55694, 0.75203, 1.09737):
        k = int(round(center / df))
        assert spectrum[k] < spectrum[k - 3] and spectrum[k] < spectrum[k + 3]


def test_empty_phantom_scan_equals_air_everywhere():
    cfg = small_config()
    cube = forward_sim.simulate_scan(phantom.empty_phantom((8, 8, 8)), cfg)
    reference = forward_sim.reference_trace(cfg).samples
    assert cube.traces.shape == (2, 8, 8, 256)
    assert np.allclose(cube.traces, reference, atol=1e-12)


def test_scan_has_one_view_per_angle():
    cfg = small_config(8, n_views=30, angular_range_deg=180.0, pulse=PulseModel(n_samples=64))
    views = list(forward_sim.iter_views(phantom.empty_phantom((2, 8, 8)), cfg))
    assert len(views) == 30


def test_scan_is_deterministic_across_threads():
    p = phantom.make_primitive("sphere", {"radius": 3}, shape=(8, 8, 8))
    cfg = small_config(rng_seed=11)
    first = forward_sim.simulate_scan(p, cfg).traces
    runtime.configure(3)
    try:
        second = forward_sim.simulate_scan(p, cfg).traces
    finally:
        runtime.configure(1)
    assert np.array_equal(first, second)
    assert not np.array_equal(first, forward_sim.simulate_scan(p, small_config(rng_seed=12)).traces)


def test_simulate_pixel_matches_view_noise():
    p = phantom.make_primitive("sphere", {"radius": 3}, shape=(8, 8, 8))
    cfg = small_config(rng_seed=5)
    view = forward_sim.simulate_view(p, 1, cfg)
    pixel = forward_sim.simulate_pixel(p, 6.0, 4, 2, cfg)
    assert np.allclose(pixel.samples, view[4, 2], atol=1e-12)


def test_phantom_wider_than_scan_range():
    p = phantom.make_primitive("box", {}, shape=(4, 16, 16))
    with pytest.raises(ValueError, match="wider than x range"):
        forward_sim.simulate_scan(p, small_config(8))


def test_augment_flip():
    p = phantom.build_preset("deer", 16)
    cube = forward_sim.simulate_scan(p, small_config(16))
    flipped = forward_sim.augment_flip(cube)
    assert flipped.n_views == 4
    assert np.array_equal(flipped.traces[2:, :, ::-1], cube.traces)
    assert flipped.angles_deg.tolist() == [0.0, 6.0, 180.0, 186.0]


def test_flip_of_symmetric_view_is_identity():
    p = phantom.make_primitive("sphere", {"radius": 5}, shape=(16, 16, 16))
    cube = forward_sim.simulate_scan(p, small_config(16))
    flipped = forward_sim.augment_flip(cube)
    assert np.allclose(flipped.traces[2], cube.traces[0], atol=1e-9)


def test_add_noise_sigma():
    assert forward_sim.noise_sigma(41.7) == pytest.approx(8.22e-3, rel=1e-3)
    rng = np.random.default_rng(0)
    noisy = forward_sim.add_noise(np.zeros(1_000_000), 41.7, rng)
    assert np.std(noisy) == pytest.approx(forward_sim.noise_sigma(41.7), rel=0.01)


def test_add_noise_passthrough_and_validation():
    trace = np.linspace(0, 1, 5)
    assert forward_sim.add_noise(trace, 300.0, np.random.default_rng(0)) is trace
    with pytest.raises(ValueError):
        forward_sim.add_noise(trace, 0.0, np.random.default_rng(0))


def test_cs_measure():
    img = np.arange(6, dtype=float).reshape(2, 3)
    identity = cs.make_sensing_matrix("explicit", 6, 6, data=np.eye(6))
    assert np.array_equal(forward_sim.cs_measure(identity, img), img.reshape(-1))
    ones = cs.make_sensing_matrix("explicit", 1, 6, data=np.ones((1, 6)))
    assert forward_sim.cs_measure(ones, img).tolist() == [15.0]
    bern = cs.make_sensing_matrix("bernoulli_pm1", 4, 6, seed=1)
    assert np.array_equal(forward_sim.cs_measure(bern, np.zeros((2, 3))), np.zeros(4))
    with pytest.raises(ValueError):
        forward_sim.cs_measure(bern, np.zeros((3, 3)))


def test_save_load_scan(tmp_path):
    cfg = small_config(rng_seed=2)
    cube = forward_sim.simulate_scan(phantom.make_primitive("sphere", {"radius": 2}, shape=(8, 8, 8)), cfg)
    forward_sim.save_scan(cube, tmp_path / "scan.thzt")
    back = forward_sim.load_scan(tmp_path / "scan.thzt")
    assert back.config == cfg
    assert np.allclose(back.traces, cube.traces, atol=1e-6)
