"""Coding matrices D, their decode templates D′, and matrix files.

A coding matrix projects an N-bin histogram onto K coded values. The decode
template correlates each row of D with the incident waveform so that column i of
D′ holds the coded values expected for a return at depth i.
"""

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import pandas

from .core import InvalidParameterError, Illumination, circular_correlate, _readonly
from . import io

logger = logging.getLogger(__name__)

SCHEMES = ("fourier", "gray", "coarse", "identity")
TEMPLATE_SOURCES = ("shape", "irf")

# Column norms below this are treated as zero variance.
DEGENERATE_TOL = 1e-12

# Identity matrices at least this wide log a size warning.
IDENTITY_WARN_BINS = 1024


@dataclass(frozen=True, eq=False)
class CodingMatrix:
    """A K × N real coding matrix.

    Parameters
    ----------
    rows : array_like
        The K × N matrix D.
    label : str
        Name of the scheme that produced it (e.g. "fourier", "optimized").
    """

    rows: np.ndarray
    label: str = "custom"

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise InvalidParameterError(
                f"Coding matrix must be 2D, got shape {rows.shape}."
            )
        k, n = rows.shape
        if k < 1:
            raise InvalidParameterError("Coding matrix needs at least one row.")
        if k > n:
            raise InvalidParameterError(
                f"Coding matrix has more rows than bins (K={k}, N={n})."
            )
        if not np.all(np.isfinite(rows)):
            raise InvalidParameterError("Coding matrix contains non-finite values.")
        object.__setattr__(self, "rows", _readonly(rows))

    @property
    def k(self) -> int:
        return self.rows.shape[0]

    @property
    def n(self) -> int:
        return self.rows.shape[1]

    def row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.rows, axis=1)

    def to_dataframe(self) -> pandas.DataFrame:
        """Return the matrix as a `pandas.DataFrame` with one column per row of D."""
        return pandas.DataFrame(
            self.rows.T,
            columns=[f"row{i}" for i in range(self.k)],
            index=pandas.RangeIndex(self.n, name="bin"),
        )

    def __repr__(self):
        return f'<CodingMatrix "{self.label}" K={self.k} N={self.n}>'


def _check_all_rows_nonzero(rows, label):
    if np.any(np.all(rows == 0, axis=1)):
        raise InvalidParameterError(f'Generated "{label}" coding matrix has a zero row.')


def truncated_fourier(k: int, n: int) -> CodingMatrix:
    """First K/2 harmonics of the DFT (excluding DC) as interleaved cos / -sin rows."""
    if k < 2 or k > n:
        raise InvalidParameterError(
            f"Truncated Fourier codes need 2 <= K <= N, got K={k}, N={n}."
        )
    if k % 2 != 0:
        raise InvalidParameterError(f"Truncated Fourier codes need an even K, got {k}.")
    i = np.arange(n)
    rows = np.empty((k, n))
    for m in range(1, k // 2 + 1):
        # Integer phase reduced modulo N keeps quarter-period samples exact.
        phase = 2.0 * np.pi * ((m * i) % n) / n
        rows[2 * m - 2] = np.cos(phase)
        rows[2 * m - 1] = -np.sin(phase)
    # Clean up values like cos(pi/2) = 6e-17.
    rows[np.abs(rows) < 1e-15] = 0.0
    return CodingMatrix(rows, label="fourier")


def gray_sequence(k: int) -> np.ndarray:
    """Reflected-binary Gray codewords as a K × 2^K bit table (row 0 is the MSB)."""
    if k < 1:
        raise InvalidParameterError(f"Gray codes need K >= 1, got {k}.")
    t = np.arange(2**k)
    codes = t ^ (t >> 1)
    shifts = np.arange(k - 1, -1, -1)
    return ((codes[np.newaxis, :] >> shifts[:, np.newaxis]) & 1).astype(np.float64)


def continuous_gray(k: int, n: int) -> CodingMatrix:
    """K-bit Gray codes linearly interpolated from segment centres to N samples."""
    if k < 1 or k > 30:
        raise InvalidParameterError(f"Gray codes need 1 <= K <= 30, got {k}.")
    segments = 2**k
    if n < segments:
        raise InvalidParameterError(
            f"Continuous Gray codes with K={k} need N >= {segments}, got {n}."
        )
    bits = gray_sequence(k)
    centres = np.arange(segments, dtype=np.float64)
    x = (np.arange(n) + 0.5) * segments / n - 0.5
    rows = np.empty((k, n))
    for j in range(k):
        row = np.interp(x, centres, bits[j])
        lo, hi = row.min(), row.max()
        rows[j] = (row - lo) / (hi - lo)
    _check_all_rows_nonzero(rows, "gray")
    return CodingMatrix(rows, label="gray")


def identity_frh(n: int) -> CodingMatrix:
    """The N × N identity, i.e. full-resolution histogramming."""
    if n < 1:
        raise InvalidParameterError(f"Identity coding needs N >= 1, got {n}.")
    if n >= IDENTITY_WARN_BINS:
        logger.warning(
            f"Building a {n} x {n} identity coding matrix; every pixel reads out {n} values."
        )
    return CodingMatrix(np.eye(n), label="identity")


def coarse(k: int, n: int) -> CodingMatrix:
    """Coarse histogram: K contiguous blocks of N // K bins, the last absorbing the remainder."""
    if k < 1 or k > n:
        raise InvalidParameterError(f"Coarse codes need 1 <= K <= N, got K={k}, N={n}.")
    width = n // k
    rows = np.zeros((k, n))
    for j in range(k):
        stop = n if j == k - 1 else (j + 1) * width
        rows[j, j * width : stop] = 1.0
    return CodingMatrix(rows, label="coarse")


def make_coding_matrix(scheme: str, k: int, n: int) -> CodingMatrix:
    """Build one of the baseline coding matrices by name."""
    if scheme == "fourier":
        return truncated_fourier(k, n)
    elif scheme == "gray":
        return continuous_gray(k, n)
    elif scheme == "coarse":
        return coarse(k, n)
    elif scheme == "identity":
        return identity_frh(n)
    raise InvalidParameterError(
        f'Unknown coding scheme "{scheme}"; expected one of {SCHEMES}.'
    )


def _zero_mean_unit_norm_columns(dprime):
    centred = dprime - dprime.mean(axis=0, keepdims=True)
    norms = np.linalg.norm(centred, axis=0)
    degenerate = norms <= DEGENERATE_TOL
    normalised = np.divide(
        centred, norms, out=np.zeros_like(centred), where=~degenerate
    )
    return normalised, degenerate


@dataclass(frozen=True, eq=False)
class DecodeTemplate:
    """IRF-correlated decode template D′ plus its zero-mean unit-norm column cache."""

    dprime: np.ndarray
    label: str = "custom"
    normalised: np.ndarray = field(init=False, repr=False)
    degenerate: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        dprime = np.asarray(self.dprime, dtype=np.float64)
        if dprime.ndim != 2:
            raise InvalidParameterError("Decode template must be 2D.")
        normalised, degenerate = _zero_mean_unit_norm_columns(dprime)
        if np.any(degenerate):
            logger.debug(
                f'Decode template "{self.label}" has {np.count_nonzero(degenerate)} '
                f"zero-variance columns."
            )
        object.__setattr__(self, "dprime", _readonly(dprime))
        object.__setattr__(self, "normalised", _readonly(normalised))
        object.__setattr__(self, "degenerate", _readonly(degenerate, dtype=bool))

    @property
    def k(self) -> int:
        return self.dprime.shape[0]

    @property
    def n(self) -> int:
        return self.dprime.shape[1]


def correlate_with_waveform(d: CodingMatrix, s_shape) -> DecodeTemplate:
    """D′_{k,i} = Σ_j D_{k,j} s_{(j-i) mod N}.

    The waveform is normalised to unit sum before correlating.
    """
    s_shape = np.asarray(s_shape, dtype=np.float64)
    if s_shape.shape != (d.n,):
        raise InvalidParameterError(
            f"Waveform length {s_shape.shape} does not match coding matrix N={d.n}."
        )
    total = s_shape.sum()
    if total == 0:
        raise InvalidParameterError("Cannot build a template from an all-zero waveform.")
    return DecodeTemplate(circular_correlate(d.rows, s_shape / total), label=d.label)


def build_template(
    d: CodingMatrix, illumination: Illumination, source: str = "shape"
) -> DecodeTemplate:
    """Decode template using either the output waveform s ("shape") or the IRF h ("irf")."""
    if source == "shape":
        return correlate_with_waveform(d, illumination.s)
    elif source == "irf":
        return correlate_with_waveform(d, illumination.h)
    raise InvalidParameterError(
        f'Unknown template source "{source}"; expected one of {TEMPLATE_SOURCES}.'
    )


def save_matrix(d: CodingMatrix, path):
    io.write_matrix(path, values=d.rows)
    logger.info(f'Saved {d!r} to "{path}".')


def load_matrix(path, label=None) -> CodingMatrix:
    """Load a coding matrix file; quantised payloads are returned dequantised."""
    payload = io.read_matrix(path)
    if label is None:
        label = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    if payload.values is not None:
        return CodingMatrix(payload.values, label=label)
    from .quantisation import QuantizedMatrix

    qm = QuantizedMatrix(payload.levels, payload.scales, payload.bits, label=label)
    return qm.dequantize()


def save_matrix_csv(d: CodingMatrix, path):
    d.to_dataframe().to_csv(path, float_format="%.17g")
