"""
Tests for imaging/holo.py.
"""

import math

import numpy as np
import pytest

from imaging import holo
from imaging.physics import wavelength_mm
from lib.tensorio import Image2D

PITCH = 0.25
FREQ = 0.6
TILT = 20.0


def gaussian_object(size=128, sigma=6.0, amplitude=0.3, phase=0.0):
    yy, xx = np.mgrid[0:size, 0:size] - (size - 1) / 2.0
    envelope = amplitude * np.exp(-(xx ** 2 + yy ** 2) / (2 * sigma ** 2))
    return holo.ComplexField2D(envelope * np.exp(1j * phase), PITCH, FREQ)


def random_field(shape, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def test_complex_field_validation():
    with pytest.raises(ValueError):
        holo.ComplexField2D(np.zeros(4), 0.5, 1.0)
    with pytest.raises(ValueError):
        holo.ComplexField2D(np.zeros((2, 2)), 0.0, 1.0)
    with pytest.raises(ValueError):
        holo.ComplexField2D(np.zeros((2, 2)), 0.5, 0.0)
    field = holo.ComplexField2D(np.zeros((2, 3)), 0.5, 1.0)
    assert field.shape == (2, 3)
    assert field.wavelength_mm == pytest.approx(0.299792458)


def test_transfer_function_is_unitary_on_propagating_disk():
    shape, pitch, freq = (64, 64), 0.1, 1.0
    h = holo.transfer_function(shape, pitch, freq, 7.0)
    fy, fx = holo.spatial_frequencies(shape, pitch)
    propagating = fx ** 2 + fy ** 2 <= 1 / wavelength_mm(freq) ** 2
    assert not propagating.all()
    assert np.allclose(np.abs(h[propagating]), 1.0, atol=1e-12)
    assert not h[~propagating].any()


def test_zero_distance_is_identity():
    u = holo.ComplexField2D(random_field((32, 32)), 0.5, 0.5)
    assert np.allclose(holo.angular_spectrum_propagate(u, 0.0).field, u.field, atol=1e-12)


def test_forward_then_back_propagation():
    u = holo.ComplexField2D(random_field((32, 32), 1), 0.5, 0.5)
    back = holo.angular_spectrum_propagate(holo.angular_spectrum_propagate(u, 12.0), -12.0)
    assert np.linalg.norm(back.field - u.field) / np.linalg.norm(u.field) <= 1e-10


def test_plane_wave_picks_up_phase():
    z = 3.0
    u = holo.ComplexField2D(np.ones((16, 16)), 0.5, 0.5)
    out = holo.angular_spectrum_propagate(u, z).field
    expected = np.exp(2j * math.pi * z / wavelength_mm(0.5))
    assert np.allclose(out, expected, atol=1e-12)


def test_propagation_never_adds_energy():
    u = holo.ComplexField2D(random_field((64, 64), 2), 0.1, 1.0)
    out = holo.angular_spectrum_propagate(u, 5.0)
    assert np.linalg.norm(out.field) <= np.linalg.norm(u.field) + 1e-12
    assert np.linalg.norm(out.field) < np.linalg.norm(u.field)


def test_carrier_frequency():
    assert holo.carrier_frequency(30.0, 0.299792458) == pytest.approx(0.5)
    assert holo.carrier_frequency(0.0, 1.0) == 0.0


def test_hologram_of_empty_object_is_reference_intensity():
    empty = holo.ComplexField2D(np.zeros((16, 16)), PITCH, FREQ)
    h = holo.synthesize_hologram(empty, TILT, 1.5)
    assert np.allclose(h.data, 2.25)
    assert h.pitch_mm == PITCH


def test_hologram_without_reference_is_object_intensity():
    obj = holo.ComplexField2D(random_field((16, 16), 3), PITCH, FREQ)
    h = holo.synthesize_hologram(obj, TILT, 0.0)
    assert np.allclose(h.data, np.abs(obj.field) ** 2, atol=1e-12)


def test_hologram_expansion_identity():
    obj = holo.ComplexField2D(random_field((24, 24), 4), PITCH, FREQ)
    h = holo.synthesize_hologram(obj, TILT, 0.8)
    fc = holo.carrier_frequency(TILT, FREQ)
    u_r = holo.reference_wave(obj.shape, PITCH, fc, 0.8)
    assert h.data.min() >= 0.0
    assert np.allclose(h.data, np.abs(u_r + obj.field) ** 2, atol=1e-12)


def test_hologram_rejects_carrier_above_nyquist():
    obj = holo.ComplexField2D(np.zeros((8, 8)), PITCH, 1.0)
    with pytest.raises(ValueError, match="Nyquist"):
        holo.synthesize_hologram(obj, 60.0, 1.0)
    with pytest.raises(ValueError, match="Nyquist"):
        holo.reconstruct_offaxis(Image2D(np.zeros((8, 8)), PITCH), 60.0, 1.0, 0.0, 1.0)


def test_reconstruct_in_focus_amplitude():
    obj = gaussian_object()
    h = holo.synthesize_hologram(obj, TILT, 1.0)
    recon = holo.reconstruct_offaxis(h, TILT, 1.0, 0.0, FREQ)
    truth = np.abs(obj.field)
    assert np.linalg.norm(np.abs(recon.field) - truth) / np.linalg.norm(truth) <= 0.05


def test_reconstruct_after_propagation():
    obj = gaussian_object()
    at_sensor = holo.angular_spectrum_propagate(obj, 10.0)
    h = holo.synthesize_hologram(at_sensor, TILT, 1.0)
    recon = holo.reconstruct_offaxis(h, TILT, 1.0, 10.0, FREQ)
    truth = np.abs(obj.field)
    assert np.linalg.norm(np.abs(recon.field) - truth) / np.linalg.norm(truth) <= 0.05


def test_reconstruct_phase_plate_is_flat():
    obj = gaussian_object(phase=0.7)
    h = holo.synthesize_hologram(obj, TILT, 1.0)
    recon = holo.reconstruct_offaxis(h, TILT, 1.0, 0.0, FREQ)
    interior = np.abs(obj.field) >= 0.5 * np.abs(obj.field).max()
    assert np.all(np.abs(np.angle(recon.field[interior]) - 0.7) <= 0.05)


def test_reconstruct_with_hann_window():
    obj = gaussian_object()
    h = holo.synthesize_hologram(obj, TILT, 1.0)
    recon = np.abs(holo.reconstruct_offaxis(h, TILT, 1.0, 0.0, FREQ, holo.OrderWindow.HANN).field)
    truth = np.abs(obj.field)
    correlation = np.vdot(recon, truth) / (np.linalg.norm(recon) * np.linalg.norm(truth))
    assert correlation >= 0.95


def test_reconstruct_zero_hologram_and_errors():
    zero = Image2D(np.zeros((16, 16)), PITCH)
    assert not holo.reconstruct_offaxis(zero, TILT, 1.0, 5.0, FREQ).field.any()
    with pytest.raises(ValueError):
        holo.reconstruct_offaxis(zero, TILT, 0.0, 5.0, FREQ)
    with pytest.raises(ValueError):
        holo.reconstruct_offaxis(zero, 0.0, 1.0, 5.0, FREQ)
