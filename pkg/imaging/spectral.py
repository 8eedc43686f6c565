"""
Per-pixel spectral features: Time-max, water-band amplitude and phase
images, band selection and time-of-flight maps.

Spectra use the one-sided real DFT with numpy's default ("backward")
normalisation, X_k = sum_t x_t exp(-i 2 pi k t / N). Under that convention

    sum_t x_t^2 = (|X_0|^2 + 2 sum_{0<k<N/2} |X_k|^2 + |X_{N/2}|^2) / N

which ``spectral_energy`` evaluates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy import fft as sfft
from scipy.optimize import minimize_scalar
from scipy.signal import find_peaks

from imaging.physics import (
    TimeTrace,
    WaterVaporModel,
    absorption_spectrum,
    is_power_of_two,
    transmission_delay_thickness,
)
from lib import runtime, tensorio
from lib.tensorio import Image2D

LOGGER = logging.getLogger(__name__)

N_BANDS = 12
N_CHANNELS = 1 + 2 * N_BANDS
BAND_LO_THZ = 0.3
BAND_HI_THZ = 1.3
SELECTION_GRID_THZ = 1e-4


@dataclass(frozen=True)
class Spectrum:
    """One-sided spectrum (last axis) of one trace or a batch of traces."""

    bins: np.ndarray
    df_thz: float
    n_samples: int

    def __post_init__(self) -> None:
        if self.bins.shape[-1] != self.n_samples // 2 + 1:
            raise ValueError(f"{self.bins.shape[-1]} bins do not match {self.n_samples} samples")

    @property
    def freqs_thz(self) -> np.ndarray:
        return np.arange(self.bins.shape[-1]) * self.df_thz

    @property
    def nyquist_thz(self) -> float:
        return self.df_thz * (self.n_samples // 2)

    def nearest_bin(self, f_thz: float) -> int:
        if f_thz < 0 or f_thz > self.nyquist_thz + 1e-12:
            raise ValueError(f"frequency {f_thz} THz outside [0, {self.nyquist_thz:.4g}] THz")
        return int(round(f_thz / self.df_thz))


@dataclass(frozen=True)
class FeatureStack:
    """25 x H x W: Time-max, 12 amplitude bands, 12 phase bands (ascending f)."""

    channels: np.ndarray
    band_freqs: np.ndarray

    def __post_init__(self) -> None:
        if self.channels.ndim != 3 or self.channels.shape[0] != N_CHANNELS:
            raise ValueError(f"feature stack must be {N_CHANNELS} x H x W, got {self.channels.shape}")
        freqs = np.asarray(self.band_freqs, dtype=np.float64)
        if freqs.shape != (N_BANDS,) or np.any(np.diff(freqs) <= 0):
            raise ValueError("band frequencies must be 12 strictly increasing values")
        object.__setattr__(self, "band_freqs", freqs)

    @property
    def time_max(self) -> np.ndarray:
        return self.channels[0]

    @property
    def amplitude(self) -> np.ndarray:
        return self.channels[1 : 1 + N_BANDS]

    @property
    def phase(self) -> np.ndarray:
        return self.channels[1 + N_BANDS :]

    def flipped(self) -> "FeatureStack":
        return FeatureStack(self.channels[:, :, ::-1].copy(), self.band_freqs)


def _samples(t: Union[TimeTrace, np.ndarray]) -> np.ndarray:
    return t.samples if isinstance(t, TimeTrace) else np.asarray(t, dtype=np.float64)


def fft_traces(traces: np.ndarray, dt_ps: float) -> Spectrum:
    """One-sided DFT along the last axis of ``traces``."""
    n = traces.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"trace length must be a power of two, got {n}")
    bins = sfft.rfft(traces, axis=-1, workers=runtime.threads())
    return Spectrum(bins, 1.0 / (n * dt_ps), n)


def fft_trace(t: TimeTrace) -> Spectrum:
    return fft_traces(t.samples, t.dt_ps)


def inverse_fft(spectrum: Spectrum) -> np.ndarray:
    return sfft.irfft(spectrum.bins, n=spectrum.n_samples, axis=-1, workers=runtime.threads())


def spectral_energy(spectrum: Spectrum) -> np.ndarray:
    power = np.abs(spectrum.bins) ** 2
    interior = power[..., 1:-1].sum(axis=-1) if spectrum.n_samples % 2 == 0 else power[..., 1:].sum(axis=-1)
    edges = power[..., 0] + (power[..., -1] if spectrum.n_samples % 2 == 0 else 0.0)
    return (edges + 2.0 * interior) / spectrum.n_samples


def time_max(t: Union[TimeTrace, np.ndarray]) -> Union[float, np.ndarray]:
    """Signed maximum over samples (last axis)."""
    result = np.max(_samples(t), axis=-1)
    return float(result) if np.ndim(result) == 0 else result


def time_max_index(t: Union[TimeTrace, np.ndarray]) -> Union[int, np.ndarray]:
    """Arg-max of the signed samples; ties resolve to the earliest index."""
    result = np.argmax(_samples(t), axis=-1)
    return int(result) if np.ndim(result) == 0 else result


def time_max_position(t: Union[TimeTrace, np.ndarray], dt_ps: float = 0.0) -> Union[float, np.ndarray]:
    """Peak time in ps, refined by a parabola through the peak and its neighbours."""
    if isinstance(t, TimeTrace):
        dt_ps = t.dt_ps
    if dt_ps <= 0:
        raise ValueError("dt_ps must be > 0")
    x = _samples(t)
    n = x.shape[-1]
    k = np.argmax(x, axis=-1)
    left = np.take_along_axis(x, np.clip(k - 1, 0, n - 1)[..., None], axis=-1)[..., 0]
    mid = np.take_along_axis(x, k[..., None], axis=-1)[..., 0]
    right = np.take_along_axis(x, np.clip(k + 1, 0, n - 1)[..., None], axis=-1)[..., 0]
    curvature = left - 2.0 * mid + right
    interior = (k > 0) & (k < n - 1) & (curvature < 0)
    offset = np.where(interior, 0.5 * (left - right) / np.where(interior, curvature, -1.0), 0.0)
    result = (k + offset) * dt_ps
    return float(result) if np.ndim(result) == 0 else result


def _wrap_phase(phase: np.ndarray) -> np.ndarray:
    """Map angles into (-pi, pi]."""
    return np.where(phase <= -np.pi, phase + 2.0 * np.pi, phase)


def _band_from_bins(bins: np.ndarray, k: int, reference: Spectrum) -> Tuple[np.ndarray, np.ndarray]:
    values = bins[..., k]
    ref = reference.bins[..., k]
    if ref == 0:
        raise ValueError(f"reference spectrum vanishes at bin {k}")
    return np.abs(values), _wrap_phase(np.angle(values / ref))


def band_image(cube_view: np.ndarray, f_thz: float, reference: Spectrum, pitch_mm: float = 0.25) -> Tuple[Image2D, Image2D]:
    """Amplitude |E(f)| and reference-relative wrapped phase at the nearest bin."""
    dt_ps = 1.0 / (reference.df_thz * reference.n_samples)
    spectrum = fft_traces(np.asarray(cube_view, dtype=np.float64), dt_ps)
    k = spectrum.nearest_bin(f_thz)
    amp, phase = _band_from_bins(spectrum.bins, k, reference)
    return Image2D(amp, pitch_mm), Image2D(phase, pitch_mm)


def select_water_bands(
    w: WaterVaporModel,
    f_lo: float = BAND_LO_THZ,
    f_hi: float = BAND_HI_THZ,
    count: int = N_BANDS,
) -> np.ndarray:
    """The ``count`` strongest local maxima of alpha(f) in [f_lo, f_hi], ascending.

    Maxima are located on a 0.1 GHz grid and then polished to the exact peak.
    """
    grid = np.arange(f_lo, f_hi + SELECTION_GRID_THZ / 2.0, SELECTION_GRID_THZ)
    alpha = absorption_spectrum(w, grid)
    peaks, _ = find_peaks(alpha)
    if peaks.size < count:
        raise ValueError(f"only {peaks.size} absorption maxima in [{f_lo}, {f_hi}] THz, need {count}")

    strongest = peaks[np.argsort(alpha[peaks], kind="stable")[::-1][:count]]
    refined = []
    for idx in strongest:
        lo, hi = grid[max(idx - 1, 0)], grid[min(idx + 1, grid.size - 1)]
        best = minimize_scalar(
            lambda f: -float(absorption_spectrum(w, np.array([f]))[0]),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-10},
        )
        refined.append(float(best.x))
    return np.sort(np.array(refined))


def minmax01(img: np.ndarray) -> np.ndarray:
    """Min-max normalise into [0, 1]; a constant image maps to zeros."""
    lo, hi = float(np.min(img)), float(np.max(img))
    if hi == lo:
        return np.zeros_like(img, dtype=np.float64)
    return (img - lo) / (hi - lo)


def feature_stack(cube_view: np.ndarray, bands: Sequence[float], reference: Spectrum) -> FeatureStack:
    """Normalised 25-channel stack for one view of (H, W, n_samples) traces.

    Time-max and amplitude channels are min-max normalised; phase channels
    map (-pi, pi] affinely onto [0, 1].
    """
    bands = np.asarray(bands, dtype=np.float64)
    if bands.shape != (N_BANDS,):
        raise ValueError(f"feature stacks need {N_BANDS} bands, got {bands.size}")
    bands = np.sort(bands)
    traces = np.asarray(cube_view, dtype=np.float64)
    dt_ps = 1.0 / (reference.df_thz * reference.n_samples)
    spectrum = fft_traces(traces, dt_ps)

    channels = np.empty((N_CHANNELS,) + traces.shape[:2])
    channels[0] = minmax01(time_max(traces))
    for i, f in enumerate(bands):
        amp, phase = _band_from_bins(spectrum.bins, spectrum.nearest_bin(f), reference)
        channels[1 + i] = minmax01(amp)
        channels[1 + N_BANDS + i] = (phase + np.pi) / (2.0 * np.pi)
    return FeatureStack(channels, bands)


def raw_projection(cube_view: np.ndarray) -> np.ndarray:
    """Absorption-like projection 1 - normalised Time-max."""
    return 1.0 - minmax01(time_max(np.asarray(cube_view, dtype=np.float64)))


def delay_image(cube_view: np.ndarray, reference: TimeTrace) -> np.ndarray:
    """Time-max delay in ps of every pixel relative to the air reference."""
    positions = time_max_position(np.asarray(cube_view, dtype=np.float64), reference.dt_ps)
    return positions - time_max_position(reference)


def thickness_image(cube_view: np.ndarray, reference: TimeTrace, n: float) -> np.ndarray:
    """Transmission time-of-flight thickness map in mm; negative delays clip to 0."""
    delays = np.clip(delay_image(cube_view, reference), 0.0, None)
    return delays * transmission_delay_thickness(1.0, n)


def save_features(stack: FeatureStack, path: Union[str, Path], **meta) -> None:
    tensorio.save_tensor(path, stack.channels, kind="features", band_freqs_thz=stack.band_freqs, **meta)


def load_features(path: Union[str, Path]) -> FeatureStack:
    data, meta = tensorio.load_tensor(path)
    return FeatureStack(data.astype(np.float64), np.asarray(meta["band_freqs_thz"]))


def save_feature_views(
    stacks: Sequence[FeatureStack],
    path: Union[str, Path],
    angles_deg: Sequence[float],
    pitch_mm: float,
) -> None:
    """Persist one stack per view as a (views, 25, H, W) tensor."""
    if not stacks:
        raise ValueError("no feature stacks to save")
    tensorio.save_tensor(
        path,
        np.stack([s.channels for s in stacks]),
        kind="feature_views",
        band_freqs_thz=stacks[0].band_freqs,
        angles_deg=np.asarray(angles_deg, dtype=np.float64),
        pitch_mm=pitch_mm,
    )


def load_feature_views(path: Union[str, Path]) -> Tuple[List[FeatureStack], np.ndarray, float]:
    data, meta = tensorio.load_tensor(path)
    if data.ndim != 4:
        raise tensorio.ThztFormatError(f"{path}: feature views must be 4-D, got shape {data.shape}")
    bands = np.asarray(meta["band_freqs_thz"], dtype=np.float64)
    stacks = [FeatureStack(view.astype(np.float64), bands) for view in data]
    angles = np.asarray(meta.get("angles_deg", np.arange(len(stacks))), dtype=np.float64)
    return stacks, angles, float(meta.get("pitch_mm", 1.0))
