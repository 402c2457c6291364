"""Readers and writers for pyspc's binary and text formats.

Binary layouts (all little-endian):

``SPCV`` (vector)
    magic, u32 version, u32 N, f64 Δ_ps, N × f64
``SPCM`` (coding matrix)
    magic, u32 version, u32 K, u32 N, u8 dtype tag, payload. Tag 0 is a row-major
    K × N f64 payload. Tags 1-4 are quantised payloads: u8 bits, K × (f64 min, f64 max)
    row scales, then K × N level indices stored as u8/u16/u32/u64 respectively.
``SPCC`` (transient cube)
    magic, u32 version, u32 H, u32 W, u32 N, f64 Δ_ps, H × W × N f64
"""

import logging
import os
import struct
from collections import namedtuple

import numpy as np
import pandas

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

VECTOR_MAGIC = b"SPCV"
MATRIX_MAGIC = b"SPCM"
CUBE_MAGIC = b"SPCC"

DTYPE_F64 = 0
LEVEL_DTYPES = {1: np.dtype("<u1"), 2: np.dtype("<u2"), 3: np.dtype("<u4"), 4: np.dtype("<u8")}

# Refuse headers describing more elements than this; guards against overflow.
MAX_ELEMENTS = 2**31 - 1

MatrixPayload = namedtuple("MatrixPayload", ["tag", "values", "levels", "scales", "bits"])


class FormatError(IOError):
    """A binary file could not be parsed.

    Attributes
    ----------
    path : str or None
    offset : int
        Byte offset at which parsing failed.
    """

    def __init__(self, message, path=None, offset=0):
        self.path = path
        self.offset = offset
        where = f' in "{path}"' if path is not None else ""
        super().__init__(f"{message}{where} at byte offset {offset}")


class UnsupportedVersionError(FormatError):
    pass


class _Reader:
    """Sequential little-endian reader that reports byte offsets on failure."""

    def __init__(self, data: bytes, path=None):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, size, what):
        if self.offset + size > len(self.data):
            raise FormatError(
                f"Truncated file: expected {size} bytes of {what} but only "
                f"{len(self.data) - self.offset} remain",
                path=self.path,
                offset=len(self.data),
            )
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self, dtype, count, what):
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count, what), dtype=dtype).copy()

    def header(self, magic):
        found = self.take(4, "magic")
        if found != magic:
            raise FormatError(
                f"Bad magic {found!r}, expected {magic!r}", path=self.path, offset=0
            )
        (version,) = self.unpack("<I", "version")
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(
                f"Unsupported format version {version} (expected {FORMAT_VERSION})",
                path=self.path,
                offset=4,
            )

    def finish(self):
        if self.offset != len(self.data):
            logger.warning(
                f'Ignoring {len(self.data) - self.offset} trailing bytes in "{self.path}".'
            )


def _read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def _write_bytes(path, data):
    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)


def _check_count(count, path, offset):
    if count > MAX_ELEMENTS:
        raise FormatError(
            f"Header describes {count} elements which exceeds the limit of {MAX_ELEMENTS}",
            path=path,
            offset=offset,
        )


def write_vector(path, values, bin_size_ps=1.0):
    values = np.asarray(values, dtype="<f8")
    header = VECTOR_MAGIC + struct.pack("<IId", FORMAT_VERSION, len(values), bin_size_ps)
    _write_bytes(path, header + values.tobytes())


def read_vector(path):
    """Read an ``SPCV`` file returning `(values, bin_size_ps)`."""
    reader = _Reader(_read_bytes(path), path=path)
    reader.header(VECTOR_MAGIC)
    (n,) = reader.unpack("<I", "length")
    _check_count(n, path, 8)
    (dt,) = reader.unpack("<d", "bin size")
    values = reader.array("<f8", n, "samples")
    reader.finish()
    return values, dt


def write_vector_csv(path, values, bin_size_ps=None):
    values = np.asarray(values, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if bin_size_ps is not None:
            fh.write(f"# n={len(values)} dt_ps={bin_size_ps!r}\n")
        pandas.Series(values).to_csv(fh, header=False, index=False, float_format="%.17g")


def read_vector_csv(path):
    """Read a one-value-per-line CSV returning `(values, bin_size_ps or None)`."""
    meta = {}
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
    if first.startswith("#"):
        for token in first.lstrip("#").split():
            key, _, value = token.partition("=")
            meta[key] = value
    df = pandas.read_csv(path, header=None, comment="#")
    values = df.iloc[:, 0].to_numpy(dtype=np.float64)
    if "n" in meta and int(meta["n"]) != len(values):
        raise FormatError(
            f"Header declares n={meta['n']} but {len(values)} values were read",
            path=path,
            offset=0,
        )
    dt = float(meta["dt_ps"]) if "dt_ps" in meta else None
    return values, dt


def write_matrix(path, values=None, levels=None, scales=None, bits=None):
    """Write an ``SPCM`` file from either full-precision `values` or quantised `levels`."""
    if values is not None:
        values = np.asarray(values, dtype="<f8")
        k, n = values.shape
        header = MATRIX_MAGIC + struct.pack("<IIIB", FORMAT_VERSION, k, n, DTYPE_F64)
        _write_bytes(path, header + values.tobytes())
        return

    levels = np.asarray(levels)
    k, n = levels.shape
    for tag, dtype in LEVEL_DTYPES.items():
        if bits <= dtype.itemsize * 8:
            break
    else:
        raise ValueError(f"Cannot store {bits}-bit levels.")
    header = MATRIX_MAGIC + struct.pack("<IIIB", FORMAT_VERSION, k, n, tag)
    payload = (
        struct.pack("<B", bits)
        + np.asarray(scales, dtype="<f8").reshape(k, 2).tobytes()
        + levels.astype(dtype).tobytes()
    )
    _write_bytes(path, header + payload)


def read_matrix(path) -> MatrixPayload:
    reader = _Reader(_read_bytes(path), path=path)
    reader.header(MATRIX_MAGIC)
    k, n = reader.unpack("<II", "dimensions")
    _check_count(k * n, path, 8)
    (tag,) = reader.unpack("<B", "dtype tag")
    if tag == DTYPE_F64:
        values = reader.array("<f8", k * n, "matrix payload").reshape(k, n)
        reader.finish()
        return MatrixPayload(tag, values, None, None, 64)
    if tag not in LEVEL_DTYPES:
        raise FormatError(f"Unknown dtype tag {tag}", path=path, offset=reader.offset - 1)
    (bits,) = reader.unpack("<B", "bit depth")
    scales = reader.array("<f8", 2 * k, "row scales").reshape(k, 2)
    levels = reader.array(LEVEL_DTYPES[tag], k * n, "level payload").reshape(k, n)
    reader.finish()
    return MatrixPayload(tag, None, levels, scales, bits)


def write_cube(path, data, bin_size_ps=1.0):
    data = np.asarray(data, dtype="<f8")
    h, w, n = data.shape
    header = CUBE_MAGIC + struct.pack("<IIIId", FORMAT_VERSION, h, w, n, bin_size_ps)
    _write_bytes(path, header + data.tobytes())


def read_cube(path):
    """Read an ``SPCC`` file returning `(data, bin_size_ps)`."""
    reader = _Reader(_read_bytes(path), path=path)
    reader.header(CUBE_MAGIC)
    h, w, n = reader.unpack("<III", "dimensions")
    _check_count(h * w * n, path, 8)
    (dt,) = reader.unpack("<d", "bin size")
    data = reader.array("<f8", h * w * n, "cube payload").reshape(h, w, n)
    reader.finish()
    return data, dt
