"""
Parallel-beam tomography: Radon transform, its exact adjoint, filtered
back-projection, SART and per-row volume assembly.

Image pixel (r, c) of an N x N slice sits at x = (c - (N - 1) / 2) pitch,
y = (r - (N - 1) / 2) pitch; detector bin k at rho = (k - (B - 1) / 2) pitch.
The projector samples each ray every pixel pitch with bilinear weights, so
forward and adjoint are one sparse matrix applied both ways.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import fft as sfft
from scipy.ndimage import binary_fill_holes

from lib import runtime, tensorio
from lib.tensorio import Image2D, Volume3D

LOGGER = logging.getLogger(__name__)

DEFAULT_RELAX = 0.25


class FbpFilter(str, Enum):
    RAM_LAK = "ram-lak"
    SHEPP_LOGAN = "shepp-logan"
    HANN = "hann"


@dataclass(frozen=True)
class Sinogram:
    data: np.ndarray
    angles_deg: np.ndarray
    bin_pitch_mm: float

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        angles = np.asarray(self.angles_deg, dtype=np.float64).reshape(-1)
        if data.ndim != 2 or data.shape[0] != angles.size:
            raise ValueError(f"sinogram {data.shape} needs one row per angle ({angles.size})")
        if angles.size and (angles.min() < 0 or angles.max() >= 180):
            raise ValueError("sinogram angles must lie in [0, 180)")
        if np.any(np.diff(angles) <= 0):
            raise ValueError("sinogram angles must be strictly increasing")
        if not self.bin_pitch_mm > 0:
            raise ValueError("bin pitch must be > 0")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "angles_deg", angles)

    @property
    def n_angles(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]


def wrap_angles(data: np.ndarray, angles_deg: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Fold projections at theta >= 180 onto theta - 180 with reversed bins, sorted.

    Rows that land on the same angle (a view and its flipped copy) are averaged.
    """
    data = np.asarray(data, dtype=np.float64)
    angles = np.mod(np.asarray(angles_deg, dtype=np.float64), 360.0)
    folded = angles >= 180.0
    out = np.where(folded[:, None], data[:, ::-1], data)
    angles = np.where(folded, angles - 180.0, angles)
    unique, inverse = np.unique(np.round(angles, 9), return_inverse=True)
    if unique.size == angles.size:
        order = np.argsort(angles, kind="stable")
        return out[order], angles[order]
    merged = np.zeros((unique.size, out.shape[1]))
    np.add.at(merged, inverse, out)
    merged /= np.bincount(inverse, minlength=unique.size)[:, None]
    return merged, unique


# ---------------------------------------------------------------------------
# Projector
# ---------------------------------------------------------------------------


class ParallelProjector:
    """Bilinear ray-sampling projector for an N x N grid and a fixed angle set.

    Per-angle footprints (bin, pixel, weight) are computed lazily and cached,
    so repeated forward/adjoint calls (SART) reuse them.
    """

    def __init__(self, size: int, angles_deg: Sequence[float], pitch_mm: float = 1.0, n_bins: Optional[int] = None):
        if size < 1:
            raise ValueError("grid size must be >= 1")
        self.size = int(size)
        self.angles_deg = np.asarray(angles_deg, dtype=np.float64).reshape(-1)
        self.pitch_mm = float(pitch_mm)
        self.n_bins = int(n_bins) if n_bins is not None else self.size
        self._cache: Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.angles_deg.size * self.n_bins, self.size * self.size)

    def footprint(self, index: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        cached = self._cache.get(index)
        if cached is None:
            cached = self._build(float(self.angles_deg[index]))
            self._cache[index] = cached
        return cached

    def _build(self, angle_deg: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.size
        n_t = int(math.ceil(n * math.sqrt(2.0)))
        theta = math.radians(angle_deg)
        cos_t, sin_t = math.cos(theta), math.sin(theta)

        rho = np.arange(self.n_bins) - (self.n_bins - 1) / 2.0
        t = np.arange(n_t) - (n_t - 1) / 2.0
        # Pixel-unit sample positions along every ray.
        col = rho[:, None] * cos_t - t[None, :] * sin_t + (n - 1) / 2.0
        row = rho[:, None] * sin_t + t[None, :] * cos_t + (n - 1) / 2.0
        bins = np.broadcast_to(np.arange(self.n_bins)[:, None], col.shape)

        c0 = np.floor(col).astype(np.int64)
        r0 = np.floor(row).astype(np.int64)
        fc = col - c0
        fr = row - r0

        bin_parts: List[np.ndarray] = []
        pix_parts: List[np.ndarray] = []
        w_parts: List[np.ndarray] = []
        for dr, dc, weight in (
            (0, 0, (1 - fr) * (1 - fc)),
            (0, 1, (1 - fr) * fc),
            (1, 0, fr * (1 - fc)),
            (1, 1, fr * fc),
        ):
            rr, cc = r0 + dr, c0 + dc
            keep = (rr >= 0) & (rr < n) & (cc >= 0) & (cc < n) & (weight > 0)
            bin_parts.append(bins[keep])
            pix_parts.append((rr * n + cc)[keep])
            w_parts.append(weight[keep])
        return np.concatenate(bin_parts), np.concatenate(pix_parts), np.concatenate(w_parts)

    def forward_angle(self, index: int, image: np.ndarray) -> np.ndarray:
        bins, pix, w = self.footprint(index)
        flat = image.reshape(-1)
        return np.bincount(bins, weights=w * flat[pix], minlength=self.n_bins) * self.pitch_mm

    def adjoint_angle(self, index: int, row: np.ndarray) -> np.ndarray:
        bins, pix, w = self.footprint(index)
        flat = np.bincount(pix, weights=w * row[bins], minlength=self.size * self.size)
        return flat.reshape(self.size, self.size) * self.pitch_mm

    def forward(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        return np.stack([self.forward_angle(i, image) for i in range(self.angles_deg.size)])

    def adjoint(self, sino: np.ndarray) -> np.ndarray:
        sino = np.asarray(sino, dtype=np.float64)
        out = np.zeros((self.size, self.size))
        for i in range(self.angles_deg.size):
            out += self.adjoint_angle(i, sino[i])
        return out


def _square(img: Union[Image2D, np.ndarray], pitch_mm: Optional[float]) -> Tuple[np.ndarray, float]:
    if isinstance(img, Image2D):
        data, pitch = img.data, img.pitch_mm
    else:
        data, pitch = np.asarray(img, dtype=np.float64), 1.0
    if pitch_mm is not None:
        pitch = pitch_mm
    if data.ndim != 2 or data.shape[0] != data.shape[1]:
        raise ValueError(f"tomography needs a square image, got shape {data.shape}")
    return data, pitch


def radon(img: Union[Image2D, np.ndarray], angles_deg: Sequence[float], pitch_mm: Optional[float] = None) -> Sinogram:
    """Line integrals R(theta, rho) of a square image (units: value x mm)."""
    data, pitch = _square(img, pitch_mm)
    projector = ParallelProjector(data.shape[0], angles_deg, pitch)
    rows = runtime.parallel_map(lambda i: projector.forward_angle(i, data), list(range(projector.angles_deg.size)))
    return Sinogram(np.array(rows).reshape(len(rows), -1), projector.angles_deg, pitch)


def radon_adjoint(s: Sinogram, out_size: Optional[int] = None) -> Image2D:
    """Exact transpose of ``radon``: smear every projection back along its rays."""
    size = out_size if out_size is not None else s.n_bins
    projector = ParallelProjector(size, s.angles_deg, s.bin_pitch_mm, n_bins=s.n_bins)
    return Image2D(projector.adjoint(s.data), s.bin_pitch_mm)


# ---------------------------------------------------------------------------
# Filtered back-projection
# ---------------------------------------------------------------------------


def ramp_filter(size: int, kind: Union[FbpFilter, str] = FbpFilter.RAM_LAK) -> np.ndarray:
    """Frequency response of the band-limited ramp (spatial Ram-Lak kernel) with apodisation."""
    kind = FbpFilter(kind)
    n = np.concatenate((np.arange(1, size // 2 + 1, 2), np.arange(size // 2 - 1, 0, -2)))
    kernel = np.zeros(size)
    kernel[0] = 0.25
    kernel[1::2] = -1.0 / (np.pi * n) ** 2
    response = np.real(sfft.fft(kernel))
    if kind is FbpFilter.SHEPP_LOGAN:
        response *= np.sinc(sfft.fftfreq(size))
    elif kind is FbpFilter.HANN:
        response *= sfft.fftshift(np.hanning(size))
    return response


def filter_projections(data: np.ndarray, kind: Union[FbpFilter, str] = FbpFilter.RAM_LAK) -> np.ndarray:
    n_bins = data.shape[-1]
    padded = max(64, 1 << int(math.ceil(math.log2(2 * n_bins))))
    workers = runtime.threads()
    spectrum = sfft.fft(data, n=padded, axis=-1, workers=workers)
    filtered = sfft.ifft(spectrum * ramp_filter(padded, kind), axis=-1, workers=workers)
    return np.real(filtered[..., :n_bins])


def backproject(data: np.ndarray, angles_deg: Sequence[float], out_size: int) -> np.ndarray:
    """Pixel-driven linear-interpolation backprojection (unscaled sum over angles)."""
    n_bins = data.shape[-1]
    centre = (out_size - 1) / 2.0
    coords = np.arange(out_size) - centre
    x = coords[None, :]
    y = coords[:, None]
    bins = np.arange(n_bins, dtype=np.float64)
    out = np.zeros((out_size, out_size))
    for row, angle in zip(data, angles_deg):
        theta = math.radians(angle)
        rho = x * math.cos(theta) + y * math.sin(theta) + (n_bins - 1) / 2.0
        out += np.interp(rho.ravel(), bins, row, left=0.0, right=0.0).reshape(out.shape)
    return out


def fbp(s: Sinogram, filter: Union[FbpFilter, str] = FbpFilter.RAM_LAK, out_size: Optional[int] = None) -> Image2D:
    """Ramp-filter every projection, backproject, scale by pi / n_angles."""
    kind = FbpFilter(filter)
    if s.n_angles < 2:
        raise ValueError("filtered back-projection needs at least 2 angles")
    size = out_size if out_size is not None else s.n_bins
    filtered = filter_projections(s.data, kind)
    image = backproject(filtered, s.angles_deg, size) * (math.pi / s.n_angles) / s.bin_pitch_mm
    return Image2D(image, s.bin_pitch_mm)


# ---------------------------------------------------------------------------
# SART
# ---------------------------------------------------------------------------


def sinogram_residual(projector: ParallelProjector, image: np.ndarray, data: np.ndarray) -> float:
    return float(np.linalg.norm(projector.forward(image) - data))


def sart(
    s: Sinogram,
    iters: int = 10,
    relax: float = DEFAULT_RELAX,
    x0: Optional[np.ndarray] = None,
    residuals: Optional[List[float]] = None,
) -> Image2D:
    """Per-angle SART sweeps with a nonnegativity clamp after each sweep.

    ``relax = 0`` returns ``x0`` untouched, negative entries included.

    x <- x + relax * A_t^T((p_t - A_t x) / row_sums) / col_sums for every angle t.
    ``residuals`` (if given) receives ||A x - p|| after every sweep.
    """
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    if not 0 <= relax <= 1:
        raise ValueError(f"relax must lie in [0, 1], got {relax}")

    size = s.n_bins
    projector = ParallelProjector(size, s.angles_deg, s.bin_pitch_mm)
    x = np.zeros((size, size)) if x0 is None else np.array(x0, dtype=np.float64)
    ones_img = np.ones((size, size))

    weights = []
    for i in range(s.n_angles):
        row_sums = projector.forward_angle(i, ones_img)
        col_sums = projector.adjoint_angle(i, np.ones(s.n_bins))
        weights.append((row_sums, col_sums))

    for sweep in range(iters):
        for i, (row_sums, col_sums) in enumerate(weights):
            residual = s.data[i] - projector.forward_angle(i, x)
            correction = np.divide(residual, row_sums, out=np.zeros_like(residual), where=row_sums > 0)
            update = projector.adjoint_angle(i, correction)
            x = x + relax * np.divide(update, col_sums, out=np.zeros_like(update), where=col_sums > 0)
        if relax > 0:
            np.maximum(x, 0.0, out=x)
        if residuals is not None:
            residuals.append(sinogram_residual(projector, x, s.data))
        LOGGER.debug("SART sweep %d/%d done", sweep + 1, iters)
    return Image2D(x, s.bin_pitch_mm)


# ---------------------------------------------------------------------------
# Volumes
# ---------------------------------------------------------------------------


def binarize_volume(volume: np.ndarray, threshold: float = 0.5, empty_fraction: float = 0.1) -> np.ndarray:
    """Per-slice min-max normalise, threshold, fill enclosed holes.

    Slices whose peak stays below ``empty_fraction`` of the volume peak are
    treated as empty.
    """
    out = np.zeros(volume.shape, dtype=np.float64)
    peak = float(volume.max()) if volume.size else 0.0
    if peak <= 0:
        return out
    for z, plane in enumerate(volume):
        if plane.max() < empty_fraction * peak:
            continue
        lo, hi = float(plane.min()), float(plane.max())
        if hi == lo:
            continue
        mask = (plane - lo) / (hi - lo) > threshold
        out[z] = binary_fill_holes(mask)
    return out


def reconstruct_volume(
    projections: Sequence[Union[Image2D, np.ndarray]],
    angles_deg: Sequence[float],
    filter: Union[FbpFilter, str] = FbpFilter.RAM_LAK,
    binarize: bool = False,
    pitch_mm: Optional[float] = None,
) -> Volume3D:
    """FBP every detector row across views and stack the slices along z.

    Projections are (height, width) images, one per angle. Angles at or beyond
    180 deg fold onto their mirror ray set.
    """
    if len(projections) != len(angles_deg):
        raise ValueError(f"{len(projections)} projections for {len(angles_deg)} angles")
    if not projections:
        raise ValueError("no projections given")
    arrays = [p.data if isinstance(p, Image2D) else np.asarray(p, dtype=np.float64) for p in projections]
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ValueError("all projections must share one shape")
    if pitch_mm is None:
        pitch_mm = projections[0].pitch_mm if isinstance(projections[0], Image2D) else 1.0

    stack = np.stack(arrays)  # views, height, width
    height, width = shape

    def slice_at(z: int) -> np.ndarray:
        data, angles = wrap_angles(stack[:, z, :], angles_deg)
        return fbp(Sinogram(data, angles, pitch_mm), filter).data

    slices = runtime.parallel_map(slice_at, list(range(height)), desc="volume")
    volume = np.stack(slices)
    if binarize:
        volume = binarize_volume(volume)
    LOGGER.info("Reconstructed %dx%dx%d volume from %d views", height, width, width, len(arrays))
    return Volume3D(volume, pitch_mm)


def save_sinogram(s: Sinogram, path: Union[str, Path]) -> None:
    tensorio.save_tensor(path, s.data, kind="sinogram", angles_deg=s.angles_deg, bin_pitch_mm=s.bin_pitch_mm)


def load_sinogram(path: Union[str, Path]) -> Sinogram:
    data, meta = tensorio.load_tensor(path)
    if data.ndim != 2:
        raise tensorio.ThztFormatError(f"{path}: sinogram must be 2-D, got shape {data.shape}")
    return Sinogram(data.astype(np.float64), np.asarray(meta["angles_deg"], dtype=np.float64), float(meta.get("bin_pitch_mm", 1.0)))


def save_projections(
    images: Sequence[Union[Image2D, np.ndarray]],
    angles_deg: Sequence[float],
    pitch_mm: float,
    path: Union[str, Path],
    **meta,
) -> None:
    """Persist per-view projection images as one (views, H, W) tensor."""
    arrays = np.stack([img.data if isinstance(img, Image2D) else np.asarray(img, dtype=np.float64) for img in images])
    tensorio.save_tensor(path, arrays, kind="projections", angles_deg=np.asarray(angles_deg, dtype=np.float64), pitch_mm=pitch_mm, **meta)


def load_projections(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray, float]:
    data, meta = tensorio.load_tensor(path)
    if data.ndim != 3:
        raise tensorio.ThztFormatError(f"{path}: projections must be 3-D (views, H, W), got shape {data.shape}")
    if "angles_deg" not in meta:
        raise tensorio.ThztFormatError(f"{path}: sidecar lacks angles_deg")
    angles = np.asarray(meta["angles_deg"], dtype=np.float64)
    if angles.size != data.shape[0]:
        raise tensorio.ThztFormatError(f"{path}: {angles.size} angles for {data.shape[0]} views")
    return data.astype(np.float64), angles, float(meta.get("pitch_mm", 1.0))
