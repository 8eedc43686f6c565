"""
Raster-scan THz-TDS CT measurement synthesis.

Each pixel trace is built in the frequency domain from the reference pulse:

    E_out(f) = E_ref(f) * t_in t_out * exp(-alpha_mat(f) L / 2)
               * exp(-alpha_water(f) air / 2) * exp(-i 2 pi f (n(f) - 1) L / c)

followed by an inverse real FFT. Fresnel factors apply only to pixels whose
ray crosses material (L > 0); echoes inside the slab are not modelled.
Noise is white Gaussian with a stream per (view, row, column), so a scan is
bit-identical for a given seed whatever the thread count.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional, Tuple, Union

import numpy as np
from scipy import fft as sfft
from scipy.ndimage import gaussian_filter

from imaging import phantom as ph
from imaging.cs import SensingMatrix
from imaging.physics import (
    AIR,
    C_MM_PER_PS,
    MaterialSpec,
    PulseModel,
    TimeTrace,
    WaterVaporModel,
    absorption_spectrum,
    fresnel_transmission,
    psf_sigma_pixels,
    reference_pulse,
)
from lib import runtime, tensorio
from lib.tensorio import Image2D

LOGGER = logging.getLogger(__name__)

PASSTHROUGH_DB = 300.0


@dataclass(frozen=True)
class ScanConfig:
    """Scan geometry, source model and noise level.

    ``rng_seed`` None produces noise-free traces. ``psf_waist_mm`` is the beam
    waist at 1 THz; when set every frequency bin of the field map is blurred
    by the beam PSF (waist scaling as 1/f, defocus ``psf_defocus_mm``).
    """

    n_views: int = 30
    angular_range_deg: float = 180.0
    angle_step_deg: float = 6.0
    x_range_mm: float = 72.0
    x_step_mm: float = 0.25
    z_step_mm: float = 0.25
    pulse: PulseModel = field(default_factory=PulseModel)
    water: WaterVaporModel = field(default_factory=WaterVaporModel)
    air_path_mm: float = 300.0
    noise_dynamic_range_db: float = 41.7
    rng_seed: Optional[int] = None
    fresnel: bool = True
    psf_waist_mm: Optional[float] = None
    psf_defocus_mm: float = 0.0

    def __post_init__(self) -> None:
        if self.n_views < 1:
            raise ValueError(f"n_views must be >= 1, got {self.n_views}")
        if self.angle_step_deg <= 0 or self.x_step_mm <= 0 or self.z_step_mm <= 0:
            raise ValueError("angle, x and z steps must be > 0")
        if not math.isclose(self.n_views * self.angle_step_deg, self.angular_range_deg, rel_tol=1e-9):
            raise ValueError(
                f"{self.n_views} views x {self.angle_step_deg} deg != range {self.angular_range_deg} deg"
            )
        if self.x_range_mm < self.x_step_mm:
            raise ValueError("x_range_mm must cover at least one step")
        if self.air_path_mm < 0:
            raise ValueError("air_path_mm must be >= 0")
        if self.noise_dynamic_range_db <= 0:
            raise ValueError("noise_dynamic_range_db must be > 0")
        if self.psf_waist_mm is not None and self.psf_waist_mm <= 0:
            raise ValueError("psf_waist_mm must be > 0 when set")

    @property
    def width(self) -> int:
        return int(round(self.x_range_mm / self.x_step_mm))

    def angles(self) -> np.ndarray:
        return np.arange(self.n_views) * self.angle_step_deg

    def view_of(self, angle_deg: float) -> int:
        """Index of the view acquired at ``angle_deg``; off-grid angles are an error."""
        position = angle_deg / self.angle_step_deg
        view = int(round(position))
        if not math.isclose(position, view, abs_tol=1e-6) or not 0 <= view < self.n_views:
            raise ValueError(f"angle {angle_deg} deg is not one of the {self.n_views} scan angles")
        return view

    def to_dict(self) -> dict:
        data = asdict(self)
        data["water"] = self.water.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ScanConfig":
        values = dict(data)
        values["pulse"] = PulseModel(**values.get("pulse", {}))
        values["water"] = WaterVaporModel.from_dict(values.get("water", {}))
        return cls(**values)


@dataclass(frozen=True)
class ScanCube:
    """views x height x width x n_samples traces plus the config that made them."""

    traces: np.ndarray
    config: ScanConfig
    angles_deg: np.ndarray

    def __post_init__(self) -> None:
        if self.traces.ndim != 4:
            raise ValueError(f"ScanCube traces must be 4-D, got {self.traces.shape}")
        if self.traces.shape[0] != len(self.angles_deg):
            raise ValueError("one angle per view required")
        if self.traces.shape[3] != self.config.pulse.n_samples:
            raise ValueError("trace length does not match the pulse model")

    @property
    def n_views(self) -> int:
        return self.traces.shape[0]

    def view(self, index: int) -> np.ndarray:
        return self.traces[index]


def flipped_angle(angle_deg: float) -> float:
    """Angle whose ray set a horizontally flipped view reproduces."""
    return float((angle_deg + 180.0) % 360.0)


# ---------------------------------------------------------------------------
# Pixel model
# ---------------------------------------------------------------------------


def reference_trace(cfg: ScanConfig) -> TimeTrace:
    """Noise-free air pixel: the pulse after the water-vapour path only."""
    return TimeTrace(_synthesize(np.zeros((1, 1)), AIR, cfg)[0, 0], cfg.pulse.dt_ps)


def _transfer(lengths: np.ndarray, material: MaterialSpec, cfg: ScanConfig) -> np.ndarray:
    """Per-pixel complex transfer function, shape lengths.shape + (n_freqs,)."""
    freqs = cfg.pulse.freqs_thz
    n = material.n_at(freqs)
    alpha = material.alpha_at(freqs)
    water = np.exp(-absorption_spectrum(cfg.water, freqs) * cfg.air_path_mm / 2.0)

    L = lengths[..., None]
    # Phase (n - 1) L / c delays the pulse under the e^{-i 2 pi f t} DFT convention.
    transfer = np.exp(-alpha * L / 2.0 - 2j * np.pi * freqs * (n - 1.0) * L / C_MM_PER_PS)
    if cfg.fresnel:
        interfaces = np.asarray(fresnel_transmission(1.0, n)) * np.asarray(fresnel_transmission(n, 1.0))
        transfer = np.where(L > 0, transfer * interfaces, transfer)
    return transfer * water


def _blur_field(spectra: np.ndarray, cfg: ScanConfig) -> np.ndarray:
    """Apply the beam PSF to every frequency bin of a (rows, cols, freqs) field map."""
    freqs = cfg.pulse.freqs_thz
    out = np.empty_like(spectra)
    out[..., 0] = spectra[..., 0]
    limit = float(max(spectra.shape[:2]))
    for k in range(1, freqs.size):
        sigma_z = min(psf_sigma_pixels(freqs[k], cfg.psf_waist_mm, cfg.psf_defocus_mm, cfg.z_step_mm), limit)
        sigma_x = min(psf_sigma_pixels(freqs[k], cfg.psf_waist_mm, cfg.psf_defocus_mm, cfg.x_step_mm), limit)
        plane = spectra[..., k]
        out[..., k] = gaussian_filter(plane.real, (sigma_z, sigma_x), mode="nearest") + 1j * gaussian_filter(
            plane.imag, (sigma_z, sigma_x), mode="nearest"
        )
    return out


def _synthesize(lengths: np.ndarray, material: MaterialSpec, cfg: ScanConfig, blur: bool = False) -> np.ndarray:
    e_ref = sfft.rfft(reference_pulse(cfg.pulse).samples)
    spectra = e_ref * _transfer(lengths, material, cfg)
    if blur and cfg.psf_waist_mm is not None:
        spectra = _blur_field(spectra, cfg)
    return sfft.irfft(spectra, n=cfg.pulse.n_samples, axis=-1, workers=runtime.threads())


def noise_sigma(dynamic_range_db: float, reference_peak: float = 1.0) -> float:
    return reference_peak / 10.0 ** (dynamic_range_db / 20.0)


def add_noise(
    trace: Union[TimeTrace, np.ndarray],
    dynamic_range_db: float,
    rng: np.random.Generator,
    reference_peak: float = 1.0,
) -> Union[TimeTrace, np.ndarray]:
    """Add white Gaussian noise with sigma = reference_peak / 10^(DR / 20).

    Dynamic ranges of ``PASSTHROUGH_DB`` and above return the input unchanged.
    """
    if dynamic_range_db <= 0:
        raise ValueError(f"dynamic range must be > 0 dB, got {dynamic_range_db}")
    if dynamic_range_db >= PASSTHROUGH_DB:
        return trace
    sigma = noise_sigma(dynamic_range_db, reference_peak)
    if isinstance(trace, TimeTrace):
        return TimeTrace(trace.samples + rng.normal(0.0, sigma, trace.n_samples), trace.dt_ps)
    samples = np.asarray(trace, dtype=np.float64)
    return samples + rng.normal(0.0, sigma, samples.shape)


def _noisy_view(traces: np.ndarray, view: int, cfg: ScanConfig) -> np.ndarray:
    if cfg.rng_seed is None or cfg.noise_dynamic_range_db >= PASSTHROUGH_DB:
        return traces
    rows, cols, _ = traces.shape
    for r in range(rows):
        for c in range(cols):
            rng = runtime.item_rng(cfg.rng_seed, view, r, c)
            traces[r, c] = add_noise(traces[r, c], cfg.noise_dynamic_range_db, rng, cfg.pulse.peak_amplitude)
    return traces


def _check_geometry(p: ph.Phantom, cfg: ScanConfig) -> None:
    if not math.isclose(cfg.z_step_mm, p.pitch_mm, rel_tol=1e-9):
        raise ValueError(f"z step {cfg.z_step_mm} mm must equal the phantom pitch {p.pitch_mm} mm")
    radius = ph.max_radius_mm(p)
    if radius > cfg.x_range_mm / 2.0 + 1e-9:
        raise ValueError(f"phantom reaches {radius:.2f} mm from the axis, wider than x range {cfg.x_range_mm} mm")


def simulate_pixel(p: ph.Phantom, angle_deg: float, row: int, col: int, cfg: ScanConfig) -> TimeTrace:
    """Trace of one pixel; the beam PSF is not applied at single-pixel level."""
    view = cfg.view_of(angle_deg)
    length = ph.path_length(p, angle_deg, row, col, cfg.width, cfg.x_step_mm)
    samples = _synthesize(np.array([[length]]), p.material, cfg)[0, 0]
    if cfg.rng_seed is not None:
        samples = add_noise(samples, cfg.noise_dynamic_range_db, runtime.item_rng(cfg.rng_seed, view, row, col), cfg.pulse.peak_amplitude)
    return TimeTrace(samples, cfg.pulse.dt_ps)


def simulate_view(p: ph.Phantom, view: int, cfg: ScanConfig) -> np.ndarray:
    """All pixel traces of one view, shape (height, width, n_samples)."""
    angle = float(cfg.angles()[view])
    lengths = ph.path_lengths(p, angle, cfg.width, cfg.x_step_mm)
    traces = _synthesize(lengths, p.material, cfg, blur=True)
    return _noisy_view(traces, view, cfg)


def iter_views(p: ph.Phantom, cfg: ScanConfig) -> Iterator[Tuple[int, np.ndarray]]:
    """Stream (view index, traces) without holding the whole cube."""
    _check_geometry(p, cfg)
    for view in range(cfg.n_views):
        yield view, simulate_view(p, view, cfg)


def simulate_scan(p: ph.Phantom, cfg: ScanConfig) -> ScanCube:
    _check_geometry(p, cfg)
    LOGGER.info(
        "Simulating %d views of %dx%d pixels, %d samples each",
        cfg.n_views,
        p.shape[0],
        cfg.width,
        cfg.pulse.n_samples,
    )
    views = runtime.parallel_map(lambda v: simulate_view(p, v, cfg), list(range(cfg.n_views)), desc="scan")
    return ScanCube(np.stack(views), cfg, cfg.angles())


def augment_flip(cube: ScanCube) -> ScanCube:
    """Append a width-reversed copy of every view (2x views)."""
    flipped = cube.traces[:, :, ::-1, :]
    angles = np.concatenate([cube.angles_deg, [flipped_angle(a) for a in cube.angles_deg]])
    return ScanCube(np.concatenate([cube.traces, flipped], axis=0), cube.config, angles)


def cs_measure(
    masks: SensingMatrix,
    img: Union[Image2D, np.ndarray],
    noise_db: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """s = A vec(x) with row-major vec; optional noise relative to the peak |s|."""
    data = img.data if isinstance(img, Image2D) else np.asarray(img, dtype=np.float64)
    vec = data.reshape(-1)
    if masks.n != vec.size:
        raise ValueError(f"sensing matrix has {masks.n} columns, image has {vec.size} pixels")
    s = masks.data @ vec
    if noise_db is not None:
        if rng is None:
            raise ValueError("noisy measurements need an rng")
        s = add_noise(s, noise_db, rng, float(np.max(np.abs(s))) if s.size else 1.0)
    return s


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_scan(cube: ScanCube, path: Union[str, Path]) -> None:
    tensorio.save_tensor(path, cube.traces, kind="scan", config=cube.config.to_dict(), angles_deg=cube.angles_deg)


def load_scan(path: Union[str, Path]) -> ScanCube:
    traces, meta = tensorio.load_tensor(path)
    if traces.ndim != 4:
        raise tensorio.ThztFormatError(f"{path}: scan must be 4-D, got shape {traces.shape}")
    cfg = ScanConfig.from_dict(meta.get("config", {}))
    angles = np.asarray(meta.get("angles_deg", cfg.angles()), dtype=np.float64)
    return ScanCube(traces.astype(np.float64), cfg, angles)


def scaled_config(size: int, pitch_mm: float = ph.DEFAULT_PITCH_MM, **overrides) -> ScanConfig:
    """Scan geometry whose x range just covers a ``size``-voxel phantom."""
    base = ScanConfig(x_range_mm=size * pitch_mm, x_step_mm=pitch_mm, z_step_mm=pitch_mm)
    return replace(base, **overrides)
