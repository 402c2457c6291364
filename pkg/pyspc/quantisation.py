"""Compact representations of coding matrices.

Two ways of shrinking the memory needed to store D are supported: per-row uniform
quantisation to a fixed number of bits, and keeping only the largest Fourier
coefficients of each row. `budget_sweep` evaluates the depth error of both as a
function of the storage budget.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas
from scipy import fft

from . import io
from .codes import CodingMatrix
from .core import InvalidParameterError

logger = logging.getLogger(__name__)

FULL_PRECISION_BITS = 64

BITS_SELECTION = "per-row uniform"
FOURIER_SELECTION = "largest-magnitude"

BUDGET_COLUMNS = ["compression", "budget", "mae", "rmse", "outlier_rate", "selection"]


def _check_bits(bits):
    if not 1 <= bits <= FULL_PRECISION_BITS:
        raise InvalidParameterError(f"Bit depth must be between 1 and 64, got {bits}.")


@dataclass(frozen=True, eq=False)
class QuantizedMatrix:
    """Level indices of a quantised coding matrix plus per-row (min, max) scales.

    At 64 bits the levels hold the raw IEEE-754 bit patterns of the values and no
    scales are needed.
    """

    levels: np.ndarray
    scales: Optional[np.ndarray]
    bits: int
    label: str = "custom"

    def __post_init__(self):
        _check_bits(self.bits)
        levels = np.asarray(self.levels, dtype=np.uint64)
        if levels.ndim != 2:
            raise InvalidParameterError("Quantised levels must be 2D.")
        object.__setattr__(self, "levels", levels)
        if self.bits < FULL_PRECISION_BITS:
            scales = np.asarray(self.scales, dtype=np.float64)
            if scales.shape != (levels.shape[0], 2):
                raise InvalidParameterError(
                    f"Expected ({levels.shape[0]}, 2) row scales, got {scales.shape}."
                )
            object.__setattr__(self, "scales", scales)

    @property
    def n_levels(self) -> int:
        return 2**self.bits

    def dequantize(self) -> CodingMatrix:
        if self.bits == FULL_PRECISION_BITS:
            return CodingMatrix(self.levels.view(np.float64), label=self.label)
        lo = self.scales[:, 0:1]
        hi = self.scales[:, 1:2]
        step = (hi - lo) / float(self.n_levels - 1)
        return CodingMatrix(lo + self.levels.astype(np.float64) * step, label=self.label)


def quantize(d: CodingMatrix, bits: int) -> QuantizedMatrix:
    """Map each row's [min, max] range uniformly onto 2^bits levels."""
    _check_bits(bits)
    rows = np.asarray(d.rows, dtype=np.float64)
    if bits == FULL_PRECISION_BITS:
        return QuantizedMatrix(rows.copy().view(np.uint64), None, bits, label=d.label)
    lo = rows.min(axis=1, keepdims=True)
    hi = rows.max(axis=1, keepdims=True)
    top = float(2**bits - 1)
    span = hi - lo
    # Constant rows map to the single level 0.
    unit = np.divide(rows - lo, span, out=np.zeros_like(rows), where=span > 0)
    levels = np.clip(np.rint(unit * top), 0.0, top).astype(np.uint64)
    return QuantizedMatrix(levels, np.hstack([lo, hi]), bits, label=d.label)


def quantize_matrix(d: CodingMatrix, bits: int) -> CodingMatrix:
    """Quantise to `bits` and return the dequantised matrix used for evaluation."""
    if bits == FULL_PRECISION_BITS:
        _check_bits(bits)
        return d
    return quantize(d, bits).dequantize()


def save_quantized(qm: QuantizedMatrix, path):
    if qm.bits == FULL_PRECISION_BITS:
        io.write_matrix(path, values=qm.dequantize().rows)
    else:
        io.write_matrix(path, levels=qm.levels, scales=qm.scales, bits=qm.bits)
    logger.info(f'Saved {qm.bits}-bit quantised matrix to "{path}".')


def fourier_compress(d: CodingMatrix, n_coeffs: int) -> CodingMatrix:
    """Keep DC and the `n_coeffs` largest-magnitude harmonics of every row.

    Ties in magnitude keep the lower harmonic.
    """
    n = d.n
    if not 1 <= n_coeffs <= n // 2:
        raise InvalidParameterError(
            f"Number of Fourier coefficients must be between 1 and N/2 = {n // 2}, "
            f"got {n_coeffs}."
        )
    spectrum = fft.rfft(d.rows, axis=-1)
    harmonics = np.abs(spectrum[:, 1:])
    kept = np.zeros(spectrum.shape, dtype=bool)
    kept[:, 0] = True
    order = np.argsort(-harmonics, axis=-1, kind="stable")[:, :n_coeffs]
    np.put_along_axis(kept[:, 1:], order, True, axis=-1)
    rows = fft.irfft(np.where(kept, spectrum, 0.0), n=n, axis=-1)
    return CodingMatrix(rows, label=f"{d.label}-fourier{n_coeffs}")


def parse_budget_range(text) -> list:
    """Parse "1:64", "1:64:2" (inclusive) or a comma separated list of integers."""
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    text = str(text).strip()
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        if len(parts) not in (2, 3):
            raise InvalidParameterError(f'Cannot parse budget range "{text}".')
        step = parts[2] if len(parts) == 3 else 1
        return list(range(parts[0], parts[1] + 1, step))
    return [int(p) for p in text.split(",") if p.strip()]


def budget_sweep(
    scheme,
    bits=(),
    coeffs=(),
    phi_sig=1000.0,
    sbr=0.1,
    trials=2000,
    seed=0,
    noise="poisson",
    threads=None,
) -> pandas.DataFrame:
    """Depth error of `scheme` with its coding matrix compressed to each budget.

    Every budget is evaluated on the same single (Φ^sig, SBR) cell with the same seed,
    so the rows differ only through the compression.
    """
    from .evaluation import SweepConfig, run_sweep

    def evaluate(coding):
        config = SweepConfig(
            [scheme.with_coding(coding)],
            [phi_sig],
            [sbr],
            trials=trials,
            seed=seed,
            noise=noise,
            threads=threads,
        )
        return run_sweep(config).rows[0]

    rows = []
    for b in bits:
        cell = evaluate(quantize_matrix(scheme.coding, b))
        logger.info(f"{b:2d} bits: RMSE {cell['rmse']:.4g}")
        rows.append(("bits", b, cell["mae"], cell["rmse"], cell["outlier_rate"], BITS_SELECTION))
    for n_coeffs in coeffs:
        cell = evaluate(fourier_compress(scheme.coding, n_coeffs))
        logger.info(f"{n_coeffs} Fourier coefficients: RMSE {cell['rmse']:.4g}")
        rows.append(
            (
                "fourier",
                n_coeffs,
                cell["mae"],
                cell["rmse"],
                cell["outlier_rate"],
                FOURIER_SELECTION,
            )
        )
    return pandas.DataFrame(rows, columns=BUDGET_COLUMNS)
