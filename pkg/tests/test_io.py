import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from pyspc import io
from fixtures import rng


def test_vector_round_trip(tmp_path, rng):
    values = rng.standard_normal(100)
    path = tmp_path / "v.spcv"
    io.write_vector(path, values, bin_size_ps=16.0)
    loaded, dt = io.read_vector(path)
    assert_array_equal(loaded, values)
    assert dt == 16.0


def test_vector_csv_round_trip(tmp_path, rng):
    values = rng.random(50) * 1e-3
    path = tmp_path / "v.csv"
    io.write_vector_csv(path, values, bin_size_ps=4.0)
    loaded, dt = io.read_vector_csv(path)
    assert_array_equal(loaded, values)
    assert dt == 4.0


def test_vector_csv_without_header(tmp_path):
    path = tmp_path / "v.csv"
    path.write_text("1\n2\n3\n")
    loaded, dt = io.read_vector_csv(path)
    assert_array_equal(loaded, [1, 2, 3])
    assert dt is None


def test_vector_csv_length_mismatch(tmp_path):
    path = tmp_path / "v.csv"
    path.write_text("# n=4 dt_ps=1.0\n1\n2\n3\n")
    with pytest.raises(io.FormatError):
        io.read_vector_csv(path)


def test_matrix_round_trip(tmp_path, rng):
    values = rng.standard_normal((4, 32))
    path = tmp_path / "d.spcm"
    io.write_matrix(path, values=values)
    payload = io.read_matrix(path)
    assert payload.tag == io.DTYPE_F64
    assert payload.bits == 64
    assert_array_equal(payload.values, values)


@pytest.mark.parametrize("bits, tag", [(4, 1), (8, 1), (12, 2), (32, 3), (63, 4)])
def test_quantised_matrix_dtype_tags(tmp_path, bits, tag):
    levels = np.array([[0, 1, 2**bits - 1], [3, 2, 1]], dtype=np.uint64)
    scales = np.array([[0.0, 1.0], [-1.0, 1.0]])
    path = tmp_path / "q.spcm"
    io.write_matrix(path, levels=levels, scales=scales, bits=bits)
    payload = io.read_matrix(path)
    assert payload.tag == tag
    assert payload.bits == bits
    assert payload.values is None
    assert_array_equal(payload.levels, levels)
    assert_array_equal(payload.scales, scales)


def test_cube_round_trip(tmp_path, rng):
    data = rng.random((3, 4, 16))
    path = tmp_path / "c.spcc"
    io.write_cube(path, data, bin_size_ps=2.5)
    loaded, dt = io.read_cube(path)
    assert_array_equal(loaded, data)
    assert dt == 2.5


def test_truncated_file_reports_offset(tmp_path):
    path = tmp_path / "v.spcv"
    io.write_vector(path, np.arange(10.0))
    data = path.read_bytes()
    path.write_bytes(data[:-12])
    with pytest.raises(io.FormatError) as excinfo:
        io.read_vector(path)
    assert excinfo.value.offset == len(data) - 12
    assert "byte offset" in str(excinfo.value)


def test_bad_magic(tmp_path):
    path = tmp_path / "v.spcv"
    io.write_cube(path, np.zeros((1, 1, 4)))
    with pytest.raises(io.FormatError) as excinfo:
        io.read_vector(path)
    assert excinfo.value.offset == 0


def test_unsupported_version(tmp_path):
    path = tmp_path / "v.spcv"
    path.write_bytes(b"SPCV" + struct.pack("<IId", 99, 1, 1.0) + struct.pack("<d", 0.0))
    with pytest.raises(io.UnsupportedVersionError):
        io.read_vector(path)


def test_oversized_header(tmp_path):
    path = tmp_path / "c.spcc"
    header = b"SPCC" + struct.pack("<IIIId", io.FORMAT_VERSION, 2**16, 2**16, 2**16, 1.0)
    path.write_bytes(header)
    with pytest.raises(io.FormatError):
        io.read_cube(path)


def test_format_error_is_ioerror():
    assert issubclass(io.FormatError, IOError)
    assert issubclass(io.UnsupportedVersionError, io.FormatError)
