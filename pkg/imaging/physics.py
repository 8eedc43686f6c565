"""
Wave and material models: reference pulse, water-vapour absorption,
Fresnel and Beer-Lambert losses, time of flight and the Gaussian-beam PSF.

Units throughout: time in ps, frequency in THz, length in mm. With those
units the speed of light is ``C_MM_PER_PS`` and a wavelength is simply
``C_MM_PER_PS / f``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
from scipy import fft as sfft
from scipy.optimize import brentq

from lib.tensorio import Image2D

LOGGER = logging.getLogger(__name__)

C_MM_PER_PS = 0.299792458

ArrayLike = Union[float, Sequence[float], np.ndarray]


# ---------------------------------------------------------------------------
# Pulse
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeTrace:
    """One sampled THz electric-field waveform."""

    samples: np.ndarray
    dt_ps: float

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"TimeTrace needs 1-D samples, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("TimeTrace samples must be finite")
        if not self.dt_ps > 0:
            raise ValueError(f"dt_ps must be > 0, got {self.dt_ps}")
        object.__setattr__(self, "samples", arr)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def times_ps(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt_ps

    def scaled(self, factor: float) -> "TimeTrace":
        return TimeTrace(self.samples * factor, self.dt_ps)


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class PulseModel:
    dt_ps: float = 0.1
    n_samples: int = 1024
    fwhm_fs: float = 516.0
    peak_amplitude: float = 1.0

    def __post_init__(self) -> None:
        if not self.dt_ps > 0:
            raise ValueError(f"dt_ps must be > 0, got {self.dt_ps}")
        if not is_power_of_two(self.n_samples):
            raise ValueError(f"n_samples must be a power of two, got {self.n_samples}")
        if not self.fwhm_fs > 0:
            raise ValueError(f"fwhm_fs must be > 0, got {self.fwhm_fs}")

    @property
    def df_thz(self) -> float:
        return 1.0 / (self.n_samples * self.dt_ps)

    @property
    def nyquist_thz(self) -> float:
        return 0.5 / self.dt_ps

    @property
    def freqs_thz(self) -> np.ndarray:
        return sfft.rfftfreq(self.n_samples, d=self.dt_ps)

    @property
    def center_ps(self) -> float:
        return self.n_samples // 4 * self.dt_ps


def _half_max_offset() -> float:
    """Outer root of u*exp((1-u^2)/2) = 1/2, the unit-peak derivative pulse."""
    return brentq(lambda u: u * math.exp((1.0 - u * u) / 2.0) - 0.5, 1.0, 10.0, xtol=1e-14)


HALF_MAX_OFFSET = _half_max_offset()


def reference_pulse(model: PulseModel = PulseModel()) -> TimeTrace:
    """Single-cycle Gaussian first-derivative pulse centred at n/4 samples.

    The width parameter is chosen so the outer extent of ``|E| >= peak/2``
    equals ``fwhm_fs``. Samples are antisymmetric around the centre sample,
    so the DC bin of the spectrum vanishes.
    """
    sigma_ps = model.fwhm_fs * 1e-3 / (2.0 * HALF_MAX_OFFSET)
    u = (np.arange(model.n_samples) * model.dt_ps - model.center_ps) / sigma_ps
    shape = -u * np.exp((1.0 - u * u) / 2.0)
    shape *= model.peak_amplitude / np.max(np.abs(shape))
    return TimeTrace(shape, model.dt_ps)


def pulse_fwhm_ps(trace: TimeTrace) -> float:
    """Outer width of the region where ``|E|`` reaches half its maximum.

    Crossings are located by linear interpolation between samples.
    """
    mag = np.abs(trace.samples)
    half = mag.max() / 2.0
    above = np.flatnonzero(mag >= half)
    first, last = int(above[0]), int(above[-1])

    def crossing(inside: int, outside: int) -> float:
        if outside < 0 or outside >= mag.size:
            return float(inside)
        a, b = mag[inside], mag[outside]
        return inside + (outside - inside) * (a - half) / (a - b)

    left = crossing(first, first - 1)
    right = crossing(last, last + 1)
    return (right - left) * trace.dt_ps


def center_frequency(trace: TimeTrace) -> float:
    """Amplitude-weighted mean frequency of ``trace`` in THz."""
    spectrum = np.abs(sfft.rfft(trace.samples))
    freqs = sfft.rfftfreq(trace.n_samples, d=trace.dt_ps)
    total = spectrum.sum()
    if total == 0:
        raise ValueError("cannot take the centre frequency of an all-zero trace")
    return float(np.sum(freqs * spectrum) / total)


# ---------------------------------------------------------------------------
# Materials and water vapour
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaterialSpec:
    """Refractive index and field absorption sampled on one frequency grid."""

    name: str
    freqs_thz: np.ndarray
    n_table: np.ndarray
    alpha_table: np.ndarray

    def __post_init__(self) -> None:
        freqs = np.atleast_1d(np.asarray(self.freqs_thz, dtype=np.float64))
        n = np.atleast_1d(np.asarray(self.n_table, dtype=np.float64))
        alpha = np.atleast_1d(np.asarray(self.alpha_table, dtype=np.float64))
        if not (freqs.shape == n.shape == alpha.shape):
            raise ValueError(f"{self.name}: n and alpha tables must share the frequency grid")
        if freqs.size > 1 and np.any(np.diff(freqs) <= 0):
            raise ValueError(f"{self.name}: frequency grid must be strictly increasing")
        if np.any(n < 1):
            raise ValueError(f"{self.name}: refractive index must be >= 1")
        if np.any(alpha < 0):
            raise ValueError(f"{self.name}: absorption must be >= 0")
        object.__setattr__(self, "freqs_thz", freqs)
        object.__setattr__(self, "n_table", n)
        object.__setattr__(self, "alpha_table", alpha)

    @classmethod
    def constant(cls, name: str, n: float, alpha: float) -> "MaterialSpec":
        return cls(name, np.array([0.0]), np.array([n]), np.array([alpha]))

    def n_at(self, freqs: ArrayLike) -> np.ndarray:
        return np.interp(np.asarray(freqs, dtype=np.float64), self.freqs_thz, self.n_table)

    def alpha_at(self, freqs: ArrayLike) -> np.ndarray:
        return np.interp(np.asarray(freqs, dtype=np.float64), self.freqs_thz, self.alpha_table)


HIPS = MaterialSpec.constant("hips", n=1.54, alpha=0.2)
AIR = MaterialSpec.constant("air", n=1.0, alpha=0.0)


def load_material_csv(path: Union[str, Path], name: str = "") -> MaterialSpec:
    """Load a ``freq_THz,n,alpha`` table (header line required)."""
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] != 3:
        raise ValueError(f"{path}: expected 3 columns freq_THz,n,alpha, got {table.shape[1]}")
    return MaterialSpec(name or Path(path).stem, table[:, 0], table[:, 1], table[:, 2])


def time_of_flight_index(material: MaterialSpec, reference: TimeTrace) -> float:
    """n(f) of ``material`` at the centre frequency of the ``reference`` pulse."""
    return float(material.n_at(center_frequency(reference)))


@dataclass(frozen=True)
class WaterLine:
    center_thz: float
    strength: float
    halfwidth_thz: float


# Atmospheric water-vapour lines (centre THz, field strength 1/mm, half width
# THz). The in-band set matches the 12 strongest maxima between 0.3 and
# 1.3 THz; strengths are scaled for a lab air path of a few hundred mm.
DEFAULT_WATER_LINES: Tuple[WaterLine, ...] = tuple(
    WaterLine(c, s, 0.01)
    for c, s in (
        (0.18331, 0.010),
        (0.32515, 0.004),
        (0.38020, 0.010),
        (0.44800, 0.006),
        (0.55694, 0.016),
        (0.62070, 0.004),
        (0.65801, 0.003),
        (0.75203, 0.014),
        (0.91617, 0.006),
        (0.98793, 0.012),
        (1.09737, 0.015),
        (1.16291, 0.014),
        (1.20764, 0.005),
        (1.41060, 0.012),
        (1.60220, 0.020),
        (1.66100, 0.030),
        (1.71680, 0.025),
        (1.76200, 0.015),
        (1.79480, 0.020),
        (1.86770, 0.020),
        (1.91940, 0.025),
        (2.04070, 0.015),
        (2.16410, 0.030),
        (2.19630, 0.020),
        (2.22180, 0.020),
        (2.26410, 0.025),
    )
)


@dataclass(frozen=True)
class WaterVaporModel:
    lines: Tuple[WaterLine, ...] = field(default=DEFAULT_WATER_LINES)
    continuum: float = 0.0

    def __post_init__(self) -> None:
        lines = tuple(self.lines)
        for line in lines:
            if line.center_thz <= 0:
                raise ValueError(f"water line centre must be > 0, got {line.center_thz}")
            if line.strength < 0:
                raise ValueError(f"water line strength must be >= 0, got {line.strength}")
            if line.halfwidth_thz <= 0:
                raise ValueError(f"water line half width must be > 0, got {line.halfwidth_thz}")
        if self.continuum < 0:
            raise ValueError(f"continuum must be >= 0, got {self.continuum}")
        object.__setattr__(self, "lines", lines)

    @property
    def centers_thz(self) -> np.ndarray:
        return np.array([line.center_thz for line in self.lines])

    def to_dict(self) -> dict:
        return {
            "continuum": self.continuum,
            "lines": [[l.center_thz, l.strength, l.halfwidth_thz] for l in self.lines],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WaterVaporModel":
        return cls(tuple(WaterLine(*map(float, row)) for row in data.get("lines", [])), float(data.get("continuum", 0.0)))


def load_water_lines(path: Union[str, Path], continuum: float = 0.0) -> WaterVaporModel:
    """Load a ``center_THz,strength,halfwidth_THz`` table (header line required)."""
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] != 3:
        raise ValueError(f"{path}: expected 3 columns center,strength,halfwidth, got {table.shape[1]}")
    return WaterVaporModel(tuple(WaterLine(*map(float, row)) for row in table), continuum)


def absorption_spectrum(w: WaterVaporModel, freqs: ArrayLike) -> np.ndarray:
    """Field absorption coefficient alpha(f) in 1/mm: continuum plus Lorentzians."""
    f = np.asarray(freqs, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequencies must be >= 0")
    alpha = np.full(f.shape, w.continuum, dtype=np.float64)
    for line in w.lines:
        hw2 = line.halfwidth_thz ** 2
        alpha += line.strength * hw2 / ((f - line.center_thz) ** 2 + hw2)
    return alpha


# ---------------------------------------------------------------------------
# Interfaces, attenuation, delay
# ---------------------------------------------------------------------------


def _check_index(*values: ArrayLike) -> None:
    for value in values:
        if np.any(np.asarray(value) < 1):
            raise ValueError(f"refractive index must be >= 1, got {value}")


def _scalar_or_array(value: np.ndarray) -> ArrayLike:
    return float(value) if np.ndim(value) == 0 else value


def fresnel_transmission(n1: ArrayLike, n2: ArrayLike) -> ArrayLike:
    """Normal-incidence field transmission t = 2 n1 / (n1 + n2)."""
    _check_index(n1, n2)
    a, b = np.asarray(n1, dtype=np.float64), np.asarray(n2, dtype=np.float64)
    return _scalar_or_array(2.0 * a / (a + b))


def fresnel_reflection(n1: ArrayLike, n2: ArrayLike) -> ArrayLike:
    """Normal-incidence field reflection r = (n1 - n2) / (n1 + n2) = t - 1."""
    _check_index(n1, n2)
    a, b = np.asarray(n1, dtype=np.float64), np.asarray(n2, dtype=np.float64)
    return _scalar_or_array((a - b) / (a + b))


def beer_lambert_field(alpha: ArrayLike, path_mm: ArrayLike) -> ArrayLike:
    """Field attenuation exp(-alpha * path / 2); intensity falls as exp(-alpha * path)."""
    if np.any(np.asarray(alpha) < 0):
        raise ValueError("alpha must be >= 0")
    if np.any(np.asarray(path_mm) < 0):
        raise ValueError("path length must be >= 0")
    return _scalar_or_array(np.exp(-np.asarray(alpha, dtype=np.float64) * np.asarray(path_mm, dtype=np.float64) / 2.0))


def time_of_flight_thickness(delta_t_ps: float, n: float) -> float:
    """Reflection-mode thickness d = c * dt / (2 n) in mm."""
    if n < 1:
        raise ValueError(f"refractive index must be >= 1, got {n}")
    if delta_t_ps < 0:
        raise ValueError(f"delay must be >= 0, got {delta_t_ps}")
    return C_MM_PER_PS * delta_t_ps / (2.0 * n)


def transmission_delay_thickness(delta_t_ps: float, n: float) -> float:
    """Thickness of a slab from its transmission delay relative to air.

    A transmitted pulse lags the air pulse by (n - 1) L / c; the matching
    echo delay is 2 n L / c, which ``time_of_flight_thickness`` inverts.
    """
    if n <= 1:
        raise ValueError(f"transmission delay carries no thickness for n = {n}")
    return time_of_flight_thickness(2.0 * n * delta_t_ps / (n - 1.0), n)


# ---------------------------------------------------------------------------
# Beam
# ---------------------------------------------------------------------------


def wavelength_mm(freq_thz: float) -> float:
    if freq_thz <= 0:
        raise ValueError(f"frequency must be > 0, got {freq_thz}")
    return C_MM_PER_PS / freq_thz


def beam_radius_mm(freq_thz: float, waist_mm: float, z_mm: float) -> float:
    """Gaussian beam radius w(z) = w0 sqrt(1 + (z / zR)^2), zR = pi w0^2 / lambda."""
    if waist_mm <= 0:
        raise ValueError(f"waist must be > 0, got {waist_mm}")
    rayleigh = math.pi * waist_mm ** 2 / wavelength_mm(freq_thz)
    return waist_mm * math.sqrt(1.0 + (z_mm / rayleigh) ** 2)


def rayleigh_range_mm(freq_thz: float, waist_mm: float) -> float:
    return math.pi * waist_mm ** 2 / wavelength_mm(freq_thz)


@dataclass(frozen=True)
class BeamPsf:
    kernel: Image2D
    radius_mm: float
    truncated: bool


def gaussian_beam_psf(
    freq_thz: float,
    waist_mm: float,
    z_mm: float,
    pitch_mm: float,
    kernel_size: int,
) -> BeamPsf:
    """Normalised intensity kernel exp(-2 r^2 / w(z)^2) on a square grid.

    ``truncated`` is set when the kernel half-width cannot hold 3 w(z).
    """
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError(f"kernel_size must be a positive odd number, got {kernel_size}")
    if pitch_mm <= 0:
        raise ValueError(f"pitch must be > 0, got {pitch_mm}")

    radius = beam_radius_mm(freq_thz, waist_mm, z_mm)
    half = kernel_size // 2
    coords = (np.arange(kernel_size) - half) * pitch_mm
    r2 = coords[:, None] ** 2 + coords[None, :] ** 2
    kernel = np.exp(-2.0 * r2 / radius ** 2)
    kernel /= kernel.sum()

    truncated = half * pitch_mm < 3.0 * radius
    if truncated:
        LOGGER.warning(
            "PSF kernel %dx%d (half width %.3f mm) cannot hold 3 w(z) = %.3f mm",
            kernel_size,
            kernel_size,
            half * pitch_mm,
            3.0 * radius,
        )
    return BeamPsf(Image2D(kernel, pitch_mm), radius, truncated)


def psf_sigma_pixels(freq_thz: float, waist_at_1thz_mm: float, z_mm: float, pitch_mm: float) -> float:
    """Standard deviation in pixels of the intensity PSF at ``freq_thz``.

    The waist scales as 1/f from its value at 1 THz.
    """
    radius = beam_radius_mm(freq_thz, waist_at_1thz_mm / freq_thz, z_mm)
    return radius / (2.0 * pitch_mm)
