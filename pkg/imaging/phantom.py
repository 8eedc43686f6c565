"""
Synthetic voxel phantoms and their geometric ground truth.

Volumes are indexed (z, y, x). The voxel with index i along an axis of n
voxels sits at (i - (n - 1) / 2) * pitch, so the rotation axis passes through
the centre of the (y, x) plane. A parallel ray at angle theta and detector
offset rho runs through

    rho * (cos theta, sin theta) + t * (-sin theta, cos theta)

in (x, y). Detector column k of a W-column view sits at
rho_k = (k - (W - 1) / 2) * x_step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from imaging import glyphs
from imaging.physics import HIPS, MaterialSpec
from lib import tensorio
from lib.settings import CONFIG_DIR, load_yaml
from lib.tensorio import Image2D, Volume3D

LOGGER = logging.getLogger(__name__)

DEFAULT_PITCH_MM = 0.25
DEFAULT_PRESETS = CONFIG_DIR / "phantoms.yml"


class PrimitiveKind(str, Enum):
    SPHERE = "sphere"
    BOX = "box"
    CYLINDER = "cylinder"
    EXTRUDED_GLYPH = "extruded_glyph"


@dataclass(frozen=True)
class Phantom:
    grid: Volume3D
    material: MaterialSpec = HIPS

    def __post_init__(self) -> None:
        data = self.grid.data
        if data.size and (data.min() < 0 or data.max() > 1):
            raise ValueError("phantom occupancy must lie in [0, 1]")

    @property
    def pitch_mm(self) -> float:
        return self.grid.pitch_mm

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.grid.shape

    @property
    def occupancy(self) -> np.ndarray:
        return self.grid.data

    def voxel_count(self) -> float:
        return float(self.grid.data.sum())


def empty_phantom(
    shape: Sequence[int] = (64, 64, 64),
    pitch_mm: float = DEFAULT_PITCH_MM,
    material: MaterialSpec = HIPS,
) -> Phantom:
    return Phantom(Volume3D(np.zeros(tuple(shape)), pitch_mm), material)


def _axes(shape: Tuple[int, int, int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return np.ogrid[: shape[0], : shape[1], : shape[2]]


def _grid_center(shape: Tuple[int, int, int]) -> Tuple[float, float, float]:
    return tuple((n - 1) / 2.0 for n in shape)  # type: ignore[return-value]


def _check_extent(kind: str, lo: Sequence[float], hi: Sequence[float], shape: Tuple[int, ...]) -> None:
    for axis, (a, b, n) in enumerate(zip(lo, hi, shape)):
        if a < -0.5 - 1e-9 or b > n - 0.5 + 1e-9:
            raise ValueError(
                f"{kind} spans [{a:.2f}, {b:.2f}] on axis {axis}, outside grid of {n} voxels"
            )


def make_primitive(
    kind: Union[PrimitiveKind, str],
    params: Optional[Mapping[str, Any]] = None,
    shape: Sequence[int] = (64, 64, 64),
    pitch_mm: float = DEFAULT_PITCH_MM,
    material: MaterialSpec = HIPS,
) -> Phantom:
    """Binary primitive in voxel units; centres default to the grid centre.

    sphere          radius, center (z, y, x)
    box             size (z, y, x), center
    cylinder        radius, height, center; axis along z
    extruded_glyph  text, scale (voxels per font pixel), depth (y voxels), center
    """
    kind = PrimitiveKind(kind)
    params = dict(params or {})
    grid_shape = tuple(int(n) for n in shape)
    if len(grid_shape) != 3 or min(grid_shape) < 1:
        raise ValueError(f"grid shape must be three positive sizes, got {shape}")
    center = tuple(float(c) for c in params.get("center", _grid_center(grid_shape)))
    z, y, x = _axes(grid_shape)

    if kind is PrimitiveKind.SPHERE:
        radius = float(params.get("radius", 0.0))
        _check_extent(kind.value, [c - radius for c in center], [c + radius for c in center], grid_shape)
        inside = (z - center[0]) ** 2 + (y - center[1]) ** 2 + (x - center[2]) ** 2 < radius ** 2
    elif kind is PrimitiveKind.BOX:
        size = tuple(float(s) for s in params.get("size", grid_shape))
        half = [s / 2.0 for s in size]
        _check_extent(kind.value, [c - h for c, h in zip(center, half)], [c + h for c, h in zip(center, half)], grid_shape)
        inside = (
            (np.abs(z - center[0]) < half[0])
            & (np.abs(y - center[1]) < half[1])
            & (np.abs(x - center[2]) < half[2])
        )
    elif kind is PrimitiveKind.CYLINDER:
        radius = float(params.get("radius", 0.0))
        height = float(params.get("height", grid_shape[0]))
        lo = [center[0] - height / 2.0, center[1] - radius, center[2] - radius]
        hi = [center[0] + height / 2.0, center[1] + radius, center[2] + radius]
        _check_extent(kind.value, lo, hi, grid_shape)
        inside = (np.abs(z - center[0]) < height / 2.0) & ((y - center[1]) ** 2 + (x - center[2]) ** 2 < radius ** 2)
    else:
        inside = _glyph_mask(params, center, grid_shape)

    occupancy = np.broadcast_to(inside, grid_shape).astype(np.float64)
    LOGGER.debug("%s primitive: %d voxels", kind.value, int(occupancy.sum()))
    return Phantom(Volume3D(occupancy, pitch_mm), material)


def _glyph_mask(params: Mapping[str, Any], center: Tuple[float, ...], shape: Tuple[int, int, int]) -> np.ndarray:
    text = str(params.get("text", ""))
    scale = int(params.get("scale", 1))
    depth = int(params.get("depth", 1))
    if scale < 1 or depth < 1:
        raise ValueError("glyph scale and depth must be >= 1")

    bitmap = np.kron(glyphs.render_text(text), np.ones((scale, scale), dtype=bool))
    rows, cols = bitmap.shape
    z0 = int(round(center[0] - (rows - 1) / 2.0))
    x0 = int(round(center[2] - (cols - 1) / 2.0))
    y0 = int(round(center[1] - (depth - 1) / 2.0))
    if z0 < 0 or x0 < 0 or y0 < 0 or z0 + rows > shape[0] or x0 + cols > shape[2] or y0 + depth > shape[1]:
        raise ValueError(f"glyph block {rows}x{depth}x{cols} for {text!r} does not fit grid {shape}")

    mask = np.zeros(shape, dtype=bool)
    mask[z0 : z0 + rows, y0 : y0 + depth, x0 : x0 + cols] = bitmap[:, None, :]
    return mask


def _check_compatible(a: Phantom, b: Phantom) -> None:
    if a.shape != b.shape:
        raise ValueError(f"phantom shapes differ: {a.shape} vs {b.shape}")
    if not math.isclose(a.pitch_mm, b.pitch_mm):
        raise ValueError(f"phantom pitches differ: {a.pitch_mm} vs {b.pitch_mm}")
    if a.material.name != b.material.name:
        raise ValueError(f"phantom materials differ: {a.material.name} vs {b.material.name}")


def csg_union(a: Phantom, b: Phantom) -> Phantom:
    _check_compatible(a, b)
    return Phantom(Volume3D(np.maximum(a.occupancy, b.occupancy), a.pitch_mm), a.material)


def csg_difference(a: Phantom, b: Phantom) -> Phantom:
    """Remove ``b`` from ``a`` (cavities, hollow shells)."""
    _check_compatible(a, b)
    return Phantom(Volume3D(np.clip(a.occupancy - b.occupancy, 0.0, 1.0), a.pitch_mm), a.material)


# ---------------------------------------------------------------------------
# Ray geometry
# ---------------------------------------------------------------------------


def detector_positions(width: int, x_step_mm: float) -> np.ndarray:
    return (np.arange(width) - (width - 1) / 2.0) * x_step_mm


def _ray_steps(p: Phantom) -> Tuple[np.ndarray, float]:
    _, ny, nx = p.shape
    step = p.pitch_mm / 2.0
    reach = p.pitch_mm * (math.hypot(nx / 2.0, ny / 2.0) + 1.0)
    m = int(math.ceil(reach / step))
    return (np.arange(2 * m) - m + 0.5) * step, step


def _resolve_detector(p: Phantom, width: Optional[int], x_step_mm: Optional[float]) -> Tuple[int, float]:
    return (p.shape[2] if width is None else int(width)), (p.pitch_mm if x_step_mm is None else float(x_step_mm))


def _march(p: Phantom, angle_deg: float, rho: np.ndarray) -> np.ndarray:
    """Material path (mm) for every row and every rho; shape (nz, len(rho))."""
    _, ny, nx = p.shape
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    t, step = _ray_steps(p)

    x = rho[:, None] * cos_t - t[None, :] * sin_t
    y = rho[:, None] * sin_t + t[None, :] * cos_t
    ix = np.rint(x / p.pitch_mm + (nx - 1) / 2.0).astype(np.int64)
    iy = np.rint(y / p.pitch_mm + (ny - 1) / 2.0).astype(np.int64)
    valid = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    ix = np.where(valid, ix, 0)
    iy = np.where(valid, iy, 0)

    samples = p.occupancy[:, iy, ix] * valid[None, :, :]
    return samples.sum(axis=2) * step


def path_lengths(
    p: Phantom,
    angle_deg: float,
    width: Optional[int] = None,
    x_step_mm: Optional[float] = None,
) -> np.ndarray:
    """Material path length in mm for every (row, column) of one view."""
    width, x_step_mm = _resolve_detector(p, width, x_step_mm)
    return _march(p, angle_deg, detector_positions(width, x_step_mm))


def path_length(
    p: Phantom,
    angle_deg: float,
    row_z: int,
    col_x: int,
    width: Optional[int] = None,
    x_step_mm: Optional[float] = None,
) -> float:
    width, x_step_mm = _resolve_detector(p, width, x_step_mm)
    if not 0 <= row_z < p.shape[0] or not 0 <= col_x < width:
        raise IndexError(f"pixel ({row_z}, {col_x}) outside scan grid {p.shape[0]}x{width}")
    rho = detector_positions(width, x_step_mm)[col_x : col_x + 1]
    return float(_march(p, angle_deg, rho)[row_z, 0])


def ground_truth_projection(
    p: Phantom,
    angle_deg: float,
    width: Optional[int] = None,
    x_step_mm: Optional[float] = None,
) -> Image2D:
    """Binary silhouette: 1 where the ray crosses any occupied voxel."""
    if not 0 <= angle_deg < 360:
        raise ValueError(f"angle must lie in [0, 360), got {angle_deg}")
    width, x_step_mm = _resolve_detector(p, width, x_step_mm)
    lengths = path_lengths(p, angle_deg, width, x_step_mm)
    return Image2D((lengths > 0).astype(np.float64), x_step_mm)


def max_radius_mm(p: Phantom) -> float:
    """Largest distance of an occupied voxel edge from the rotation axis."""
    _, ny, nx = p.shape
    occupied = np.any(p.occupancy > 0, axis=0)
    if not occupied.any():
        return 0.0
    iy, ix = np.nonzero(occupied)
    y = (iy - (ny - 1) / 2.0) * p.pitch_mm
    x = (ix - (nx - 1) / 2.0) * p.pitch_mm
    return float(np.sqrt(x ** 2 + y ** 2).max() + p.pitch_mm * math.sqrt(0.5))


# ---------------------------------------------------------------------------
# Persistence and presets
# ---------------------------------------------------------------------------


def save_phantom(p: Phantom, path: Union[str, Path]) -> None:
    tensorio.save_tensor(
        path,
        p.occupancy,
        kind="phantom",
        pitch_mm=p.pitch_mm,
        material={
            "name": p.material.name,
            "freqs_thz": p.material.freqs_thz,
            "n": p.material.n_table,
            "alpha": p.material.alpha_table,
        },
    )


def load_phantom(path: Union[str, Path]) -> Phantom:
    data, meta = tensorio.load_tensor(path)
    if data.ndim != 3:
        raise tensorio.ThztFormatError(f"{path}: phantom must be 3-D, got shape {data.shape}")
    mat = meta.get("material") or {}
    material = (
        MaterialSpec(mat["name"], mat["freqs_thz"], mat["n"], mat["alpha"]) if mat else HIPS
    )
    return Phantom(Volume3D(np.clip(data.astype(np.float64), 0.0, 1.0), float(meta.get("pitch_mm", DEFAULT_PITCH_MM))), material)


def load_presets(path: Union[str, Path] = DEFAULT_PRESETS) -> Dict[str, Dict[str, Any]]:
    config = load_yaml(Path(path)) or {}
    presets = config.get("presets")
    if not isinstance(presets, dict) or not presets:
        raise ValueError(f"{path}: no presets defined")
    return presets


def _scaled_params(shape_spec: Mapping[str, Any], size: int) -> Dict[str, Any]:
    """Turn fractional preset coordinates into voxel units for a cubic grid."""
    params: Dict[str, Any] = {}
    if "center" in shape_spec:
        params["center"] = [float(c) * (size - 1) for c in shape_spec["center"]]
    for key in ("radius", "height"):
        if key in shape_spec:
            params[key] = float(shape_spec[key]) * size
    if "size" in shape_spec:
        params["size"] = [float(s) * size for s in shape_spec["size"]]
    if "text" in shape_spec:
        params["text"] = str(shape_spec["text"])
        params["scale"] = max(1, int(round(float(shape_spec.get("scale", 0.1)) * size)))
        params["depth"] = max(1, int(round(float(shape_spec.get("depth", 0.1)) * size)))
    return params


def build_preset(
    name: str,
    size: int = 64,
    pitch_mm: float = DEFAULT_PITCH_MM,
    material: MaterialSpec = HIPS,
    presets: Optional[Mapping[str, Mapping[str, Any]]] = None,
) -> Phantom:
    """Compose a named preset on a ``size``^3 grid from its shape list."""
    presets = presets if presets is not None else load_presets()
    if name not in presets:
        raise ValueError(f"unknown phantom preset {name!r}; choose from {sorted(presets)}")

    result = empty_phantom((size, size, size), pitch_mm, material)
    for shape_spec in presets[name].get("shapes", []):
        part = make_primitive(shape_spec["kind"], _scaled_params(shape_spec, size), result.shape, pitch_mm, material)
        op = shape_spec.get("op", "union")
        if op == "union":
            result = csg_union(result, part)
        elif op == "difference":
            result = csg_difference(result, part)
        else:
            raise ValueError(f"preset {name!r}: unknown op {op!r}")
    LOGGER.info("Built preset %s on %d^3 grid: %d voxels", name, size, int(result.voxel_count()))
    return result
