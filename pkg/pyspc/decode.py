"""Encoding histograms into coded values and decoding depths.

Depth errors everywhere use the circular metric min(|a-b|, N-|a-b|), since the
illumination is periodic.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .codes import CodingMatrix, DecodeTemplate
from .core import Histogram, InvalidParameterError, circular_correlate

logger = logging.getLogger(__name__)


class AmbiguousDecodeError(ValueError):
    """Raised when every candidate depth scores equally.

    Attributes
    ----------
    scores : numpy.ndarray
        The full score vector that could not be resolved.
    """

    def __init__(self, message, scores):
        self.scores = scores
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class CodedValues:
    """The K coded values B = D·M read out for one pixel."""

    b: np.ndarray
    source_label: str = "custom"

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64)
        if b.ndim != 1:
            raise InvalidParameterError("Coded values must be a 1D vector.")
        if not np.all(np.isfinite(b)):
            raise InvalidParameterError("Coded values must be finite.")
        object.__setattr__(self, "b", b)

    @property
    def k(self) -> int:
        return len(self.b)


def circular_error(a, b, n: int):
    """Circular distance between depths `a` and `b` on a period of `n` bins."""
    diff = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) % n
    return np.minimum(diff, n - diff)


def encode(d: CodingMatrix, m) -> CodedValues:
    """B_k = Σ_i D_{k,i} M_i."""
    counts = m.counts if isinstance(m, Histogram) else m
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape != (d.n,):
        raise InvalidParameterError(
            f"Histogram of shape {counts.shape} does not match coding matrix N={d.n}."
        )
    return CodedValues(d.rows @ counts, source_label=d.label)


def encode_batch(d: CodingMatrix, counts) -> np.ndarray:
    """Encode a (T, N) stack of histograms into (T, K) coded values."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape[-1] != d.n:
        raise InvalidParameterError(
            f"Histograms with {counts.shape[-1]} bins do not match coding matrix N={d.n}."
        )
    return counts @ d.rows.T


def _normalise_rows(b):
    centred = b - b.mean(axis=-1, keepdims=True)
    norms = np.linalg.norm(centred, axis=-1, keepdims=True)
    flat = norms[..., 0] == 0
    normalised = np.divide(centred, norms, out=np.zeros_like(centred), where=norms > 0)
    return normalised, flat


def zncc_scores_batch(template: DecodeTemplate, b) -> tuple:
    """ZNCC scores for a (T, K) stack of coded values.

    Returns `(scores, flat)` where `scores` is (T, N) with degenerate template columns
    at -inf and `flat` flags rows of `b` with zero variance.
    """
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if b.shape[-1] != template.k:
        raise InvalidParameterError(
            f"{b.shape[-1]} coded values do not match template K={template.k}."
        )
    bn, flat = _normalise_rows(b)
    scores = bn @ template.normalised
    scores[:, template.degenerate] = -np.inf
    return scores, flat


def zncc_scores(template: DecodeTemplate, b: CodedValues) -> np.ndarray:
    scores, _ = zncc_scores_batch(template, b.b[np.newaxis, :])
    return scores[0]


def zncc_decode(template: DecodeTemplate, b: CodedValues) -> float:
    """Depth bin whose template column best matches B under ZNCC (ties go to the lowest bin)."""
    if template.k < 2:
        raise InvalidParameterError("ZNCC decoding needs at least two coded values.")
    scores, flat = zncc_scores_batch(template, b.b[np.newaxis, :])
    if flat[0]:
        raise AmbiguousDecodeError(
            "Coded values have zero variance; every depth scores equally.", scores[0]
        )
    return float(np.argmax(scores[0]))


def zncc_decode_batch(template: DecodeTemplate, b) -> tuple:
    """Decode a (T, K) stack; returns `(depths, ambiguous)` with NaN for ambiguous rows."""
    scores, flat = zncc_scores_batch(template, b)
    depths = np.argmax(scores, axis=1).astype(np.float64)
    ambiguous = flat | np.all(np.isneginf(scores), axis=1)
    depths[ambiguous] = np.nan
    return depths, ambiguous


def matched_filter_scores(shape, counts) -> np.ndarray:
    """Circular correlation between histogram(s) and the waveform shape, per shift."""
    shape = np.asarray(shape, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape[-1] != shape.shape[-1]:
        raise InvalidParameterError(
            f"Histogram with {counts.shape[-1]} bins does not match waveform length "
            f"{shape.shape[-1]}."
        )
    return circular_correlate(counts, shape)


def matched_filter_decode(shape, m) -> float:
    """Shift maximising the circular correlation between the histogram and the shape."""
    counts = m.counts if isinstance(m, Histogram) else m
    counts = np.asarray(counts, dtype=np.float64)
    scores = matched_filter_scores(shape, counts)
    if np.ptp(counts) == 0:
        raise AmbiguousDecodeError(
            "Histogram is constant; every shift scores equally.", scores
        )
    return float(np.argmax(scores))


def matched_filter_decode_batch(shape, counts) -> tuple:
    counts = np.asarray(counts, dtype=np.float64)
    scores = matched_filter_scores(shape, counts)
    depths = np.argmax(scores, axis=-1).astype(np.float64)
    ambiguous = np.ptp(counts, axis=-1) == 0
    depths[ambiguous] = np.nan
    return depths, ambiguous


def softargmax_scores(scores, beta: float) -> float:
    """Differentiable argmax: Σ_i i·softmax(β·scores)_i."""
    if not beta > 0:
        raise InvalidParameterError(f"Softargmax temperature must be positive, got {beta}.")
    scores = np.asarray(scores, dtype=np.float64)
    weights = softmax(beta * scores, axis=-1)
    return weights @ np.arange(scores.shape[-1], dtype=np.float64)


def softargmax_centred(scores, beta: float):
    """Softargmax evaluated after rolling the hard argmax to the middle of the period.

    The plain index expectation splits mass straddling the wrap point between bins 0 and
    N-1 and lands near N/2; rolling first keeps the estimate next to the peak. Works
    on the last axis and returns values that may fall slightly outside [0, N).
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[-1]
    peak = np.argmax(scores, axis=-1)
    offset = n // 2 - peak
    idx = (np.arange(n) - offset[..., np.newaxis]) % n
    rolled = np.take_along_axis(scores, idx, axis=-1)
    return softargmax_scores(rolled, beta) - offset


def default_beta(k: int) -> float:
    """Default softargmax temperature for normalised ZNCC scores."""
    return float(10.0 * np.sqrt(k))


def parabolic_refine(scores, index: int) -> float:
    """Sub-bin peak position from a parabola through the peak and its circular neighbours."""
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    left, centre, right = scores[(index - 1) % n], scores[index], scores[(index + 1) % n]
    if not np.all(np.isfinite([left, centre, right])):
        return float(index)
    denom = left - 2.0 * centre + right
    if denom >= 0:
        return float(index)
    return float(index + 0.5 * (left - right) / denom)
