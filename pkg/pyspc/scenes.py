"""Depth-map evaluation on transient cubes.

A transient cube holds, per pixel, the mean number of photons arriving in each of the
N time bins. Cubes are either synthesised from depth and albedo maps (direct
reflections only) or ingested from externally rendered transients. Decoding a cube
samples Poisson counts per pixel, encodes them with a scheme's coding matrix and
decodes the depth map.
"""

import logging
import os
from dataclasses import dataclass, field
from functools import partial
from typing import Optional

import numpy as np
import pandas

from . import io
from .config import write_config
from .core import (
    Illumination,
    InvalidParameterError,
    SceneParams,
    circular_convolve,
    incident_waveform,
)
from .decode import circular_error
from .evaluation.metrics import error_stats
from .h5tools import H5Store
from .parallel import parallel_map
from .random import make_rng

logger = logging.getLogger(__name__)

PRESETS = ("staircase", "ramp", "plane")
NORMALISATIONS = ("pixel", "scene")
PGM_MAXVAL = 65535
STAIRCASE_STEPS = 8


@dataclass(frozen=True, eq=False)
class TransientCube:
    """H × W × N mean photon counts per pixel and bin.

    Pixels flagged in `valid` as False (all-zero pixels by default) are skipped when
    decoding.
    """

    data: np.ndarray
    bin_size_ps: float = 1.0
    valid: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise InvalidParameterError(f"Transient cube must be H x W x N, got {data.shape}.")
        if not np.all(np.isfinite(data)):
            raise InvalidParameterError("Transient cube contains non-finite values.")
        if np.any(data < 0):
            raise InvalidParameterError("Transient cube values must be non-negative.")
        valid = self.valid
        if valid is None:
            valid = np.any(data > 0, axis=-1)
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != data.shape[:2]:
            raise InvalidParameterError(
                f"Validity mask of shape {valid.shape} does not match cube {data.shape[:2]}."
            )
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "valid", valid)

    @property
    def dims(self) -> tuple:
        return self.data.shape

    @property
    def n(self) -> int:
        return self.data.shape[-1]

    @property
    def n_invalid(self) -> int:
        return int(np.count_nonzero(~self.valid))

    def __repr__(self):
        h, w, n = self.dims
        return f"<TransientCube {h}x{w}x{n} dt_ps={self.bin_size_ps:g}>"


@dataclass(frozen=True, eq=False)
class DepthMap:
    """H × W depths in bins; NaN marks invalid pixels."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InvalidParameterError(f"Depth map must be 2D, got shape {values.shape}.")
        object.__setattr__(self, "values", values)

    @property
    def dims(self) -> tuple:
        return self.values.shape

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)


@dataclass
class CubeDecodeResult:
    depth_map: DepthMap
    error_map: Optional[np.ndarray]
    mae: float
    rmse: float
    n_invalid: int
    n_ambiguous: int

    def summary(self) -> dict:
        return {
            "mae": self.mae,
            "rmse": self.rmse,
            "n_invalid": self.n_invalid,
            "n_ambiguous": self.n_ambiguous,
        }


def make_preset(name, size=64, n=1024):
    """Depth (bins) and albedo maps for a named test scene."""
    if size < 1:
        raise InvalidParameterError(f"Scene size must be positive, got {size}.")
    cols = np.arange(size)
    if name == "staircase":
        steps = np.floor(cols * STAIRCASE_STEPS / size) / STAIRCASE_STEPS
        row = n * (0.1 + 0.8 * steps)
    elif name == "ramp":
        row = n * (0.1 + 0.8 * cols / max(size - 1, 1))
    elif name == "plane":
        row = np.full(size, n / 2.0)
    else:
        raise InvalidParameterError(f'Unknown scene preset "{name}"; expected one of {PRESETS}.')
    depth = np.tile(row, (size, 1))
    return depth, np.ones((size, size))


def _shape_and_fraction(illum_shape):
    if isinstance(illum_shape, Illumination):
        return illum_shape.s, illum_shape.delivered_fraction
    shape = np.asarray(illum_shape, dtype=np.float64)
    if shape.ndim != 1:
        raise InvalidParameterError("Illumination shape must be a 1D vector.")
    return shape, 1.0


def synth_cube(
    depth_map, albedo_map, illum_shape, phi_sig_base, sbr, bin_size_ps=1.0
) -> TransientCube:
    """Direct-only synthesis: each pixel sees the shifted waveform scaled by its albedo.

    The background Φ^sig_base / SBR is the same for every pixel.
    """
    depth = np.asarray(getattr(depth_map, "values", depth_map), dtype=np.float64)
    albedo = np.asarray(albedo_map, dtype=np.float64)
    if depth.shape != albedo.shape or depth.ndim != 2:
        raise InvalidParameterError(
            f"Depth map {depth.shape} and albedo map {albedo.shape} must have the same 2D shape."
        )
    if not np.all(np.isfinite(depth)):
        raise InvalidParameterError("Depth map must be finite for synthesis.")
    if np.any(albedo < 0):
        raise InvalidParameterError("Albedo must be non-negative.")
    shape, fraction = _shape_and_fraction(illum_shape)
    h, w = depth.shape
    data = np.empty((h, w, len(shape)))
    phi_bkg = phi_sig_base / sbr
    for i, j in np.ndindex(h, w):
        scene = SceneParams(
            depth[i, j], albedo[i, j] * phi_sig_base * fraction, sbr=sbr, phi_bkg=phi_bkg
        )
        data[i, j] = incident_waveform(shape, scene)
    return TransientCube(data, bin_size_ps=bin_size_ps)


def ingest_cube(
    transients, illum_shape, phi_sig, sbr, normalisation="pixel", bin_size_ps=None
) -> TransientCube:
    """Turn rendered impulse-response transients into a cube of mean photon counts.

    Each pixel's transient is convolved with the illumination waveform, then scaled so
    that the pixel ("pixel") or the brightest pixel ("scene") receives Φ^sig signal
    photons, and offset by the uniform background Φ^sig / SBR. All-zero transients are
    flagged invalid.
    """
    if normalisation not in NORMALISATIONS:
        raise InvalidParameterError(
            f'Unknown normalisation "{normalisation}"; expected one of {NORMALISATIONS}.'
        )
    if isinstance(transients, TransientCube):
        if bin_size_ps is None:
            bin_size_ps = transients.bin_size_ps
        transients = transients.data
    transients = np.asarray(transients, dtype=np.float64)
    if bin_size_ps is None:
        bin_size_ps = 1.0
    if transients.ndim != 3:
        raise InvalidParameterError(f"Transients must be H x W x N, got {transients.shape}.")
    if not sbr > 0:
        raise InvalidParameterError(f"SBR must be positive, got {sbr}.")
    shape, fraction = _shape_and_fraction(illum_shape)
    if len(shape) != transients.shape[-1]:
        raise InvalidParameterError(
            f"Illumination length {len(shape)} does not match cube N={transients.shape[-1]}."
        )
    responses = circular_convolve(transients, shape / shape.sum())
    sums = responses.sum(axis=-1, keepdims=True)
    valid = sums[..., 0] > 0
    if normalisation == "pixel":
        scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
    else:
        peak = sums.max()
        scale = np.full_like(sums, 1.0 / peak if peak > 0 else 0.0)
    n = transients.shape[-1]
    signal = np.maximum(responses * scale, 0.0) * phi_sig * fraction
    data = signal + phi_sig / sbr / n
    logger.info(
        f"Ingested {transients.shape[0]}x{transients.shape[1]} transients with "
        f"{np.count_nonzero(~valid)} empty pixels ({normalisation} normalisation)."
    )
    return TransientCube(data, bin_size_ps=bin_size_ps, valid=valid)


def _decode_row(row, cube, scheme, seed, noise):
    w = cube.dims[1]
    means = cube.data[row]
    if noise == "poisson":
        counts = np.empty_like(means)
        for j in range(w):
            counts[j] = make_rng(seed, row * w + j).poisson(means[j])
    else:
        counts = np.array(means)
    return scheme.decode_counts(counts)


def decode_cube(
    cube: TransientCube, scheme, seed=0, truth=None, noise="poisson", threads=None
) -> CubeDecodeResult:
    """Sample, encode and decode every pixel of `cube` with `scheme`.

    Pixel (i, j) draws its counts from the stream keyed by (seed, i·W + j).
    Ambiguous decodes and invalid pixels are NaN in the depth map and are excluded
    from the error statistics.
    """
    if scheme.n != cube.n:
        raise InvalidParameterError(
            f"Scheme N={scheme.n} does not match cube N={cube.n}."
        )
    h, w, n = cube.dims
    results = parallel_map(
        partial(_decode_row, cube=cube, scheme=scheme, seed=seed, noise=noise),
        range(h),
        threads=threads,
    )
    depths = np.vstack([r[0] for r in results])
    ambiguous = np.vstack([r[1] for r in results]) & cube.valid
    depths[~cube.valid] = np.nan
    n_ambiguous = int(np.count_nonzero(ambiguous))

    error_map = None
    errors = np.array([])
    if truth is not None:
        truth = np.asarray(getattr(truth, "values", truth), dtype=np.float64)
        if truth.shape != (h, w):
            raise InvalidParameterError(
                f"Ground truth of shape {truth.shape} does not match cube ({h}, {w})."
            )
        with np.errstate(invalid="ignore"):
            error_map = circular_error(depths, truth, n)
        errors = error_map[np.isfinite(error_map)]
    stats = error_stats(errors, n)
    result = CubeDecodeResult(
        depth_map=DepthMap(depths),
        error_map=error_map,
        mae=stats["mae"],
        rmse=stats["rmse"],
        n_invalid=cube.n_invalid + n_ambiguous,
        n_ambiguous=n_ambiguous,
    )
    logger.info(
        f'Decoded {h}x{w} cube with "{scheme.name}": MAE {result.mae:.4g}, '
        f"RMSE {result.rmse:.4g}, {result.n_invalid} invalid pixels."
    )
    return result


def _pgm_levels(values):
    values = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(values)
    levels = np.zeros(values.shape, dtype=np.uint16)
    if not np.any(finite):
        return levels, np.nan, np.nan
    lo = float(values[finite].min())
    hi = float(values[finite].max())
    if hi > lo:
        scaled = np.rint((values[finite] - lo) / (hi - lo) * PGM_MAXVAL)
        levels[finite] = scaled.astype(np.uint16)
    return levels, lo, hi


def write_pgm(path, values):
    """Write a 16-bit binary (P5) graymap; returns the (min, max) mapped to 0 and 65535."""
    levels, lo, hi = _pgm_levels(values)
    h, w = levels.shape
    header = f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header + levels.astype(">u2").tobytes())
    except OSError as err:
        raise OSError(f'Failed to write graymap "{path}": {err.strerror}') from err
    return lo, hi


def read_pgm(path):
    """Read a binary 16-bit graymap written by `write_pgm`; returns `(levels, maxval)`."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    offset = 0
    while len(tokens) < 4:
        while data[offset : offset + 1].isspace():
            offset += 1
        start = offset
        while not data[offset : offset + 1].isspace():
            offset += 1
        tokens.append(data[start:offset].decode("ascii"))
    offset += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != "P5":
        raise io.FormatError(f"Bad graymap magic {magic!r}", path=path, offset=0)
    dtype = ">u2" if maxval > 255 else "u1"
    levels = np.frombuffer(data[offset:], dtype=dtype, count=h * w).reshape(h, w)
    return levels.astype(np.uint16), maxval


def write_map_csv(path, values):
    pandas.DataFrame(np.asarray(values, dtype=np.float64)).to_csv(
        path, header=False, index=False, float_format="%.17g", na_rep="nan"
    )


def read_map_csv(path) -> np.ndarray:
    return pandas.read_csv(path, header=None).to_numpy(dtype=np.float64)


def export_maps(depth_map, error_map, path_prefix) -> list:
    """Write depth (and error) maps as PGM, min/max sidecar text and CSV files."""
    path_prefix = os.fspath(path_prefix)
    directory = os.path.dirname(path_prefix)
    if directory:
        os.makedirs(directory, exist_ok=True)
    maps = [("depth", getattr(depth_map, "values", depth_map))]
    if error_map is not None:
        maps.append(("error", error_map))
    written = []
    for name, values in maps:
        base = f"{path_prefix}_{name}"
        lo, hi = write_pgm(base + ".pgm", values)
        write_config(
            base + ".txt",
            {"min": lo, "max": hi, "maxval": PGM_MAXVAL, "invalid_level": 0},
            header=f"{name} = min + level / maxval * (max - min); non-finite pixels are level 0",
        )
        write_map_csv(base + ".csv", values)
        written.extend([base + ".pgm", base + ".txt", base + ".csv"])
    logger.info(f'Exported maps to "{path_prefix}_*".')
    return written


def save_cube(cube: TransientCube, path):
    io.write_cube(path, cube.data, bin_size_ps=cube.bin_size_ps)


def load_cube(path) -> TransientCube:
    data, dt = io.read_cube(path)
    return TransientCube(data, bin_size_ps=dt)


def save_cube_h5(cube: TransientCube, path, filter_kwds=None):
    if filter_kwds is None:
        filter_kwds = {"complevel": 5, "complib": "zlib"}
    with H5Store(path, filter_kwds=filter_kwds, mode="w", title="pyspc transient cube") as store:
        store.write_array("cube", cube.data, bin_size_ps=float(cube.bin_size_ps))
        store.write_array("valid", cube.valid)


def load_cube_h5(path) -> TransientCube:
    with H5Store(path, mode="r") as store:
        data, attrs = store.read_array("cube")
        valid, _ = store.read_array("valid")
    return TransientCube(data, bin_size_ps=float(attrs["bin_size_ps"]), valid=valid)
