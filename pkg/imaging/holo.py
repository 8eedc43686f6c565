"""
Off-axis holography: hologram synthesis and angular-spectrum reconstruction.

The tilted reference U_r = a exp(i 2 pi fc x), fc = sin(tilt) / lambda,
places the U_r* U_o term of |U_r + U_o|^2 around -fc in the spatial-frequency
plane. Reconstruction cuts that order out, shifts it back to baseband,
divides by the reference amplitude and back-propagates to the object plane.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np
from scipy import fft as sfft

from imaging.physics import wavelength_mm
from lib import runtime
from lib.tensorio import Image2D

LOGGER = logging.getLogger(__name__)


class OrderWindow(str, Enum):
    RECT = "rect"
    HANN = "hann"


@dataclass(frozen=True)
class ComplexField2D:
    field: np.ndarray
    pitch_mm: float
    freq_thz: float

    def __post_init__(self) -> None:
        arr = np.asarray(self.field, dtype=np.complex128)
        if arr.ndim != 2:
            raise ValueError(f"ComplexField2D needs a 2-D array, got shape {arr.shape}")
        if not self.pitch_mm > 0:
            raise ValueError(f"pitch_mm must be > 0, got {self.pitch_mm}")
        if not self.freq_thz > 0:
            raise ValueError(f"freq_thz must be > 0, got {self.freq_thz}")
        object.__setattr__(self, "field", arr)

    @property
    def wavelength_mm(self) -> float:
        return wavelength_mm(self.freq_thz)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.field.shape  # type: ignore[return-value]

    def with_field(self, field: np.ndarray) -> "ComplexField2D":
        return ComplexField2D(field, self.pitch_mm, self.freq_thz)


def spatial_frequencies(shape: Tuple[int, int], pitch_mm: float) -> Tuple[np.ndarray, np.ndarray]:
    """(fy, fx) grids in cycles/mm matching ``fft2`` ordering."""
    fy = sfft.fftfreq(shape[0], d=pitch_mm)
    fx = sfft.fftfreq(shape[1], d=pitch_mm)
    return fy[:, None], fx[None, :]


def transfer_function(shape: Tuple[int, int], pitch_mm: float, freq_thz: float, z_mm: float) -> np.ndarray:
    """H = exp(i 2 pi z sqrt(1/lambda^2 - fx^2 - fy^2)); zero for evanescent waves."""
    fy, fx = spatial_frequencies(shape, pitch_mm)
    arg = 1.0 / wavelength_mm(freq_thz) ** 2 - fx ** 2 - fy ** 2
    propagating = arg >= 0
    kz = np.sqrt(np.where(propagating, arg, 0.0))
    return np.where(propagating, np.exp(2j * np.pi * z_mm * kz), 0.0)


def propagate_array(field: np.ndarray, pitch_mm: float, freq_thz: float, z_mm: float) -> np.ndarray:
    workers = runtime.threads()
    spectrum = sfft.fft2(field, workers=workers)
    return sfft.ifft2(spectrum * transfer_function(field.shape, pitch_mm, freq_thz, z_mm), workers=workers)


def angular_spectrum_propagate(u: ComplexField2D, z_mm: float) -> ComplexField2D:
    return u.with_field(propagate_array(u.field, u.pitch_mm, u.freq_thz, z_mm))


def carrier_frequency(tilt_deg: float, freq_thz: float) -> float:
    """Reference-beam carrier in cycles/mm."""
    return math.sin(math.radians(tilt_deg)) / wavelength_mm(freq_thz)


def _check_carrier(fc: float, pitch_mm: float) -> None:
    nyquist = 1.0 / (2.0 * pitch_mm)
    if abs(fc) >= nyquist:
        raise ValueError(f"carrier {abs(fc):.4g} cycles/mm is at or above Nyquist {nyquist:.4g} cycles/mm")


def reference_wave(shape: Tuple[int, int], pitch_mm: float, fc: float, ref_amp: float) -> np.ndarray:
    x = np.arange(shape[1]) * pitch_mm
    return np.broadcast_to(ref_amp * np.exp(2j * np.pi * fc * x)[None, :], shape)


def synthesize_hologram(obj: ComplexField2D, ref_tilt_deg: float, ref_amp: float) -> Image2D:
    """Recorded intensity |U_r|^2 + U_r* U_o + U_r U_o* + |U_o|^2."""
    fc = carrier_frequency(ref_tilt_deg, obj.freq_thz)
    _check_carrier(fc, obj.pitch_mm)
    u_r = reference_wave(obj.shape, obj.pitch_mm, fc, ref_amp)
    u_o = obj.field
    h = np.abs(u_r) ** 2 + np.conj(u_r) * u_o + u_r * np.conj(u_o) + np.abs(u_o) ** 2
    return Image2D(np.maximum(h.real, 0.0), obj.pitch_mm)


def _order_window(shape: Tuple[int, int], pitch_mm: float, fc: float, window: OrderWindow) -> np.ndarray:
    fy, fx = spatial_frequencies(shape, pitch_mm)
    half = abs(fc) / 2.0
    dx, dy = fx + fc, fy
    inside = (np.abs(dx) <= half) & (np.abs(dy) <= half)
    if window is OrderWindow.RECT:
        return inside.astype(np.float64)
    taper = np.cos(np.pi * dx / (2.0 * half)) ** 2 * np.cos(np.pi * dy / (2.0 * half)) ** 2
    return np.where(inside, taper, 0.0)


def reconstruct_offaxis(
    h: Image2D,
    tilt_deg: float,
    ref_amp: float,
    z_mm: float,
    freq_thz: float,
    window: OrderWindow = OrderWindow.RECT,
) -> ComplexField2D:
    """Object field estimate at its own plane, ``z_mm`` before the hologram.

    The object band must be narrower than half the carrier offset; that
    separation is the caller's responsibility.
    """
    if ref_amp == 0:
        raise ValueError("reference amplitude must be non-zero")
    fc = carrier_frequency(tilt_deg, freq_thz)
    _check_carrier(fc, h.pitch_mm)
    if fc == 0:
        raise ValueError("an on-axis reference leaves no carrier to demodulate")

    workers = runtime.threads()
    spectrum = sfft.fft2(h.data, workers=workers)
    order = sfft.ifft2(spectrum * _order_window(h.shape, h.pitch_mm, fc, OrderWindow(window)), workers=workers)
    x = np.arange(h.shape[1]) * h.pitch_mm
    baseband = order * np.exp(2j * np.pi * fc * x)[None, :] / ref_amp
    LOGGER.debug("Demodulated carrier %.4g cycles/mm, back-propagating %.3g mm", fc, z_mm)
    return angular_spectrum_propagate(ComplexField2D(baseband, h.pitch_mm, freq_thz), -z_mm)
