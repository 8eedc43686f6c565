"""
Tests for lib/tensorio.py: THZT containers, sidecars, PGM and CSV exports.

Run: pytest lib/test_tensorio.py
"""

import struct

import numpy as np
import pytest

from lib import tensorio
from lib.tensorio import Image2D, Volume3D


def test_header_layout_is_little_endian(tmp_path):
    path = tmp_path / "t.thzt"
    tensorio.write_thzt(np.arange(6, dtype=np.float32).reshape(2, 3), path)
    raw = path.read_bytes()
    assert raw[:4] == b"THZT"
    assert struct.unpack_from("<HHH", raw, 4) == (1, 0, 2)
    assert struct.unpack_from("<II", raw, 10) == (2, 3)
    assert len(raw) == 18 + 6 * 4
    assert np.frombuffer(raw[18:], dtype="<f4").tolist() == [0, 1, 2, 3, 4, 5]


def test_float32_and_complex64_are_bit_identical(tmp_path):
    rng = np.random.default_rng(3)
    real = rng.normal(size=(3, 4, 5)).astype(np.float32)
    cplx = (rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))).astype(np.complex64)
    tensorio.write_thzt(real, tmp_path / "r.thzt")
    tensorio.write_thzt(cplx, tmp_path / "c.thzt")

    back_real = tensorio.read_thzt(tmp_path / "r.thzt")
    back_cplx = tensorio.read_thzt(tmp_path / "c.thzt")
    assert back_real.dtype == np.float32 and back_real.tobytes() == real.tobytes()
    assert back_cplx.dtype == np.complex64 and back_cplx.tobytes() == cplx.tobytes()


def test_float64_input_is_stored_as_real32(tmp_path):
    tensorio.write_thzt(np.array([0.1, 0.2]), tmp_path / "d.thzt")
    assert tensorio.read_thzt(tmp_path / "d.thzt").dtype == np.float32


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.thzt"
    tensorio.write_thzt(np.ones(4), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(tensorio.BadMagicError):
        tensorio.read_thzt(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "cut.thzt"
    tensorio.write_thzt(np.ones((4, 4)), path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(tensorio.TruncatedPayloadError):
        tensorio.read_thzt(path)


def test_unknown_dtype_code(tmp_path):
    path = tmp_path / "dtype.thzt"
    tensorio.write_thzt(np.ones(2), path)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<H", raw, 6, 7)
    path.write_bytes(bytes(raw))
    with pytest.raises(tensorio.UnknownDtypeError):
        tensorio.read_thzt(path)


def test_errors_are_distinct_format_errors():
    kinds = {tensorio.BadMagicError, tensorio.TruncatedPayloadError, tensorio.UnknownDtypeError}
    assert len(kinds) == 3
    assert all(issubclass(k, tensorio.ThztFormatError) for k in kinds)


def test_rejects_zero_sized_and_too_many_dims(tmp_path):
    with pytest.raises(ValueError):
        tensorio.write_thzt(np.ones((2, 0)), tmp_path / "z.thzt")
    with pytest.raises(ValueError):
        tensorio.write_thzt(np.ones((1, 1, 1, 1, 2)), tmp_path / "5d.thzt")


def test_save_tensor_writes_sidecar(tmp_path):
    path = tmp_path / "img.thzt"
    tensorio.save_image(Image2D(np.eye(3), 0.5), path, method="fbp", angles=np.array([0.0, 6.0]))
    assert tensorio.sidecar_path(path).name == "img.thzt.yml"
    data, meta = tensorio.load_tensor(path)
    assert meta["kind"] == "image2d"
    assert meta["angles"] == [0.0, 6.0]
    img = tensorio.load_image(path)
    assert img.pitch_mm == 0.5 and np.array_equal(img.data, np.eye(3))


def test_missing_sidecar(tmp_path):
    path = tmp_path / "bare.thzt"
    tensorio.write_thzt(np.ones(3), path)
    with pytest.raises(FileNotFoundError):
        tensorio.load_tensor(path)
    _, meta = tensorio.load_tensor(path, required_sidecar=False)
    assert meta == {}


def test_load_volume_checks_rank(tmp_path):
    path = tmp_path / "flat.thzt"
    tensorio.save_tensor(path, np.ones((2, 2)), pitch_mm=1.0)
    with pytest.raises(tensorio.ThztFormatError):
        tensorio.load_volume(path)
    vol = Volume3D(np.zeros((2, 3, 4)), 0.25)
    tensorio.save_volume(vol, tmp_path / "v.thzt")
    assert tensorio.load_volume(tmp_path / "v.thzt").slice(1).shape == (3, 4)


def test_containers_validate():
    with pytest.raises(ValueError):
        Image2D(np.ones(3), 1.0)
    with pytest.raises(ValueError):
        Volume3D(np.ones((2, 2, 2)), 0.0)


def test_pgm_levels_round_half_up():
    levels = tensorio.pgm_levels(np.array([[0.0, 0.5, 1.0]]))
    assert levels.tolist() == [[0, 32768, 65535]]
    assert tensorio.pgm_levels(np.full((2, 2), 3.0)).max() == 0


def test_export_pgm(tmp_path):
    path = tmp_path / "p.pgm"
    tensorio.export_pgm(np.array([[0.0, 1.0], [2.0, 3.0]]), path)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n2 2\n65535\n")
    body = np.frombuffer(raw[len(b"P5\n2 2\n65535\n"):], dtype=">u2")
    assert body.tolist() == [0, 21845, 43690, 65535]


def test_export_pgm_rejects_nan(tmp_path):
    with pytest.raises(ValueError):
        tensorio.export_pgm(np.array([[np.nan, 1.0]]), tmp_path / "nan.pgm")


def test_export_csv_six_significant_digits(tmp_path):
    path = tmp_path / "m.csv"
    tensorio.export_csv([(("sarnet", "deer"), [31.234567, 0.9]), ("fbp", [1e-7])], path, header=("method", "object", "psnr"))
    lines = path.read_text().splitlines()
    assert lines == ["method,object,psnr", "sarnet,deer,31.2346,0.9", "fbp,1e-07"]
