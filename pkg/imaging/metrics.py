"""Image and volume quality metrics: PSNR, SSIM and cross-section MSE."""

from __future__ import annotations

import logging
import math
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
from skimage.metrics import mean_squared_error, structural_similarity

from lib.tensorio import Image2D, Volume3D

LOGGER = logging.getLogger(__name__)

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
METRIC_NAMES = ("psnr", "ssim", "mse")

ImageLike = Union[Image2D, np.ndarray]
VolumeLike = Union[Volume3D, np.ndarray]


def _array(x: Union[ImageLike, VolumeLike]) -> np.ndarray:
    if isinstance(x, (Image2D, Volume3D)):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _pair(a, b) -> Tuple[np.ndarray, np.ndarray]:
    a, b = _array(a), _array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: ImageLike, b: ImageLike, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs report 99 dB."""
    a, b = _pair(a, b)
    if not data_range > 0:
        raise ValueError(f"data_range must be > 0, got {data_range}")
    mse = float(mean_squared_error(a, b))
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(data_range ** 2 / mse))


def ssim(a: ImageLike, b: ImageLike, data_range: float = 1.0) -> float:
    """Mean SSIM over 11x11 Gaussian windows (sigma 1.5, K1 0.01, K2 0.03)."""
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ValueError(f"ssim needs 2-D images, got shape {a.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    return float(
        structural_similarity(
            a,
            b,
            data_range=data_range,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            K1=0.01,
            K2=0.03,
        )
    )


def normalize_volume(v: np.ndarray) -> np.ndarray:
    """Min-max into [0, 1]; a constant volume is only clipped into that range."""
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.clip(v, 0.0, 1.0)
    return (v - lo) / (hi - lo)


def mse_cross_sections(v1: VolumeLike, v2: VolumeLike) -> float:
    """Mean over z of per-slice MSE between the min-max normalised volumes."""
    a, b = _pair(v1, v2)
    if a.ndim != 3:
        raise ValueError(f"cross-section MSE needs 3-D volumes, got shape {a.shape}")
    a, b = normalize_volume(a), normalize_volume(b)
    per_slice = np.mean((a - b) ** 2, axis=(1, 2))
    return float(per_slice.mean())


# Results: method -> object -> metric name -> value.
Results = Mapping[str, Mapping[str, Mapping[str, float]]]


def metrics_table(results: Results, metrics: Sequence[str] = METRIC_NAMES) -> List[Tuple[Tuple[str, str], List[float]]]:
    """Flatten nested results into ``export_csv`` rows keyed by (method, object).

    Missing entries are written as NaN.
    """
    rows = []
    for method in sorted(results):
        per_object = results[method]
        for obj in sorted(per_object):
            values: Dict[str, float] = dict(per_object[obj])
            rows.append(((method, obj), [float(values.get(m, float("nan"))) for m in metrics]))
    return rows
