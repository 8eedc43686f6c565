"""
THZT tensor container, YAML sidecars and image/CSV export.

Every artifact the lab writes goes through this module:

- ``.thzt``  little-endian binary tensor (real32 or complex64, 1-4 dims)
- ``.thzt.yml``  key-value sidecar holding pitch, angles, band frequencies ...
- ``.pgm``  16-bit binary greyscale preview
- ``.csv``  metric tables and solver histories

Layout of a ``.thzt`` file (see docs/formats.md)::

    magic "THZT" | version u16 | dtype u16 | ndim u16 | dims u32 * ndim | payload

In-memory arrays are kept in float64/complex128; they are narrowed to
real32/complex64 only when written.
"""

from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

LOGGER = logging.getLogger(__name__)

MAGIC = b"THZT"
FORMAT_VERSION = 1
MAX_NDIM = 4
SIDECAR_SUFFIX = ".yml"

_HEADER = struct.Struct("<4sHHH")
_DIM = struct.Struct("<I")

PathLike = Union[str, Path]


class DType(IntEnum):
    REAL32 = 0
    COMPLEX64 = 1


_NUMPY_DTYPES = {
    DType.REAL32: np.dtype("<f4"),
    DType.COMPLEX64: np.dtype("<c8"),
}


class ThztFormatError(ValueError):
    """Raised when a file is not a valid THZT container."""


class BadMagicError(ThztFormatError):
    pass


class TruncatedPayloadError(ThztFormatError):
    pass


class UnknownDtypeError(ThztFormatError):
    pass


class UnsupportedVersionError(ThztFormatError):
    pass


@dataclass(frozen=True)
class Image2D:
    """A 2-D real image sampled every ``pitch_mm`` millimetres."""

    data: np.ndarray
    pitch_mm: float

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"Image2D needs a 2-D array, got shape {arr.shape}")
        if not self.pitch_mm > 0:
            raise ValueError(f"pitch_mm must be > 0, got {self.pitch_mm}")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class Volume3D:
    """A real volume in (z, y, x) order sampled every ``pitch_mm`` millimetres."""

    data: np.ndarray
    pitch_mm: float

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"Volume3D needs a 3-D array, got shape {arr.shape}")
        if not self.pitch_mm > 0:
            raise ValueError(f"pitch_mm must be > 0, got {self.pitch_mm}")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    def slice(self, z: int) -> Image2D:
        return Image2D(self.data[z], self.pitch_mm)


def header_size(ndim: int) -> int:
    return _HEADER.size + _DIM.size * ndim


def _as_storable(array: np.ndarray) -> Tuple[np.ndarray, DType]:
    arr = np.asarray(array)
    if np.iscomplexobj(arr):
        return np.ascontiguousarray(arr, dtype=_NUMPY_DTYPES[DType.COMPLEX64]), DType.COMPLEX64
    if arr.dtype.kind not in "biuf":
        raise TypeError(f"cannot store dtype {arr.dtype} in a THZT file")
    return np.ascontiguousarray(arr, dtype=_NUMPY_DTYPES[DType.REAL32]), DType.REAL32


def write_thzt(array: np.ndarray, path: PathLike) -> None:
    """Write ``array`` as a THZT container.

    Real inputs are stored as real32, complex inputs as complex64 with
    interleaved (re, im) pairs.
    """
    data, code = _as_storable(array)
    if not 1 <= data.ndim <= MAX_NDIM:
        raise ValueError(f"THZT tensors have 1-{MAX_NDIM} dims, got {data.ndim}")
    if any(dim <= 0 for dim in data.shape):
        raise ValueError(f"THZT dims must be positive, got {data.shape}")

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("wb") as handle:
        handle.write(_HEADER.pack(MAGIC, FORMAT_VERSION, int(code), data.ndim))
        for dim in data.shape:
            handle.write(_DIM.pack(dim))
        handle.write(data.tobytes(order="C"))
    LOGGER.debug("Wrote %s %s %s", target, code.name.lower(), data.shape)


def read_thzt(path: PathLike) -> np.ndarray:
    """Read a THZT container back into a numpy array (real32 or complex64)."""
    source = Path(path)
    raw = source.read_bytes()

    if raw[:4] != MAGIC:
        raise BadMagicError(f"{source}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{source}: header truncated at {len(raw)} bytes")

    _, version, code, ndim = _HEADER.unpack_from(raw, 0)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{source}: format version {version} is not supported")
    try:
        dtype = _NUMPY_DTYPES[DType(code)]
    except ValueError:
        raise UnknownDtypeError(f"{source}: unknown dtype code {code}") from None
    if not 1 <= ndim <= MAX_NDIM:
        raise ThztFormatError(f"{source}: ndim {ndim} outside 1-{MAX_NDIM}")

    offset = header_size(ndim)
    if len(raw) < offset:
        raise TruncatedPayloadError(f"{source}: dimension table truncated")
    shape = tuple(_DIM.unpack_from(raw, _HEADER.size + _DIM.size * i)[0] for i in range(ndim))
    if any(dim == 0 for dim in shape):
        raise ThztFormatError(f"{source}: zero-sized dimension in {shape}")

    expected = math.prod(shape) * dtype.itemsize
    payload = len(raw) - offset
    if payload < expected:
        raise TruncatedPayloadError(f"{source}: payload has {payload} bytes, shape {shape} needs {expected}")
    if payload > expected:
        raise ThztFormatError(f"{source}: {payload - expected} trailing bytes after payload")

    LOGGER.debug("Read %s %s", source, shape)
    return np.frombuffer(raw, dtype=dtype, count=math.prod(shape), offset=offset).reshape(shape).copy()


# ---------------------------------------------------------------------------
# Sidecars
# ---------------------------------------------------------------------------


def sidecar_path(path: PathLike) -> Path:
    p = Path(path)
    return p.with_name(p.name + SIDECAR_SUFFIX)


def write_sidecar(path: PathLike, meta: Mapping[str, Any]) -> Path:
    target = sidecar_path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8") as handle:
        yaml.safe_dump(_plain(dict(meta)), handle, sort_keys=True)
    return target


def read_sidecar(path: PathLike, required: bool = True) -> Dict[str, Any]:
    target = sidecar_path(path)
    if not target.exists():
        if required:
            raise FileNotFoundError(f"missing sidecar {target}")
        return {}
    with target.open("r", encoding="utf-8") as handle:
        loaded = yaml.safe_load(handle) or {}
    if not isinstance(loaded, dict):
        raise ThztFormatError(f"{target}: sidecar must be a mapping")
    return loaded


def _plain(value: Any) -> Any:
    """Convert numpy scalars/arrays nested in ``value`` into YAML-safe builtins."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return value


def save_tensor(path: PathLike, array: np.ndarray, **meta: Any) -> None:
    """Write a tensor plus its sidecar in one call."""
    write_thzt(array, path)
    write_sidecar(path, meta)
    LOGGER.info("Saved %s %s", path, tuple(np.shape(array)))


def load_tensor(path: PathLike, required_sidecar: bool = True) -> Tuple[np.ndarray, Dict[str, Any]]:
    return read_thzt(path), read_sidecar(path, required=required_sidecar)


def save_image(img: Image2D, path: PathLike, **meta: Any) -> None:
    save_tensor(path, img.data, kind="image2d", pitch_mm=img.pitch_mm, **meta)


def load_image(path: PathLike) -> Image2D:
    data, meta = load_tensor(path)
    if data.ndim != 2:
        raise ThztFormatError(f"{path}: expected a 2-D image, got shape {data.shape}")
    return Image2D(data.astype(np.float64), float(meta.get("pitch_mm", 1.0)))


def save_volume(vol: Volume3D, path: PathLike, **meta: Any) -> None:
    save_tensor(path, vol.data, kind="volume3d", pitch_mm=vol.pitch_mm, **meta)


def load_volume(path: PathLike) -> Volume3D:
    data, meta = load_tensor(path)
    if data.ndim != 3:
        raise ThztFormatError(f"{path}: expected a 3-D volume, got shape {data.shape}")
    return Volume3D(data.astype(np.float64), float(meta.get("pitch_mm", 1.0)))


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def pgm_levels(values: np.ndarray) -> np.ndarray:
    """Min-max map ``values`` onto 0..65535 with round-half-up."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot export non-finite values to PGM")
    lo, hi = float(arr.min()), float(arr.max())
    if hi == lo:
        return np.zeros(arr.shape, dtype=np.uint16)
    scaled = (arr - lo) / (hi - lo) * 65535.0
    return np.floor(scaled + 0.5).astype(np.uint16)


def export_pgm(img: Union[Image2D, np.ndarray], path: PathLike) -> None:
    """Write a 16-bit binary (P5) PGM preview of ``img``."""
    data = img.data if isinstance(img, Image2D) else np.asarray(img)
    if data.ndim != 2:
        raise ValueError(f"PGM export needs a 2-D image, got shape {data.shape}")
    levels = pgm_levels(data)
    height, width = levels.shape

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("wb") as handle:
        handle.write(f"P5\n{width} {height}\n65535\n".encode("ascii"))
        handle.write(levels.astype(">u2").tobytes())
    LOGGER.debug("Wrote PGM %s (%dx%d)", target, width, height)


def format_value(value: Any) -> str:
    if isinstance(value, str):
        return value
    return f"{float(value):.6g}"


Row = Tuple[Union[str, Sequence[str]], Iterable[Any]]


def export_csv(
    rows: Sequence[Row],
    path: PathLike,
    header: Optional[Sequence[str]] = ("label", "value"),
) -> None:
    """Write ``(label, values)`` rows as CSV; numbers keep 6 significant digits.

    ``label`` may be a single string or a sequence of strings spanning several
    leading columns (``("sarnet", "deer")``).
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        if header:
            writer.writerow(list(header))
        for label, values in rows:
            labels = [label] if isinstance(label, str) else list(label)
            writer.writerow(labels + [format_value(v) for v in values])
    LOGGER.info("Wrote %d CSV rows to %s", len(rows), target)
