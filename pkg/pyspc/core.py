"""Discrete signal types and the single-photon forward model.

Waveforms live on a circular grid of N time bins of width Δ (the laser period is
N·Δ), so every shift and convolution in this module wraps around.
"""

import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import fft

from . import io
from .random import make_rng

logger = logging.getLogger(__name__)

inf = float("inf")

SAMPLING_MODES = ("binomial", "poisson")


class InvalidParameterError(ValueError):
    pass


def _readonly(values, dtype=np.float64):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _as_vector(values, name):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidParameterError(f'"{name}" must be a 1D vector, got shape {arr.shape}.')
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError(f'"{name}" contains non-finite values.')
    return arr


@dataclass(frozen=True, eq=False)
class Irf:
    """Impulse response h of the illumination and detection chain.

    The values are normalised to unit sum on construction.

    Parameters
    ----------
    values : array_like
        N non-negative samples.
    bin_size_ps : float
        The bin width Δ in picoseconds.
    kind : str
        Either "gaussian" or "tabulated".
    sigma_bins : float or None
        Standard deviation in bins for Gaussian responses.
    source_label : str or None
        Where a tabulated response came from (e.g. a file name).
    """

    values: np.ndarray
    bin_size_ps: float = 1.0
    kind: str = "tabulated"
    sigma_bins: Optional[float] = None
    source_label: Optional[str] = None

    def __post_init__(self):
        values = _as_vector(self.values, "values")
        if np.any(values < 0):
            raise InvalidParameterError("IRF values must be non-negative.")
        total = values.sum()
        if total <= 0:
            raise InvalidParameterError("IRF values must not all be zero.")
        if self.bin_size_ps <= 0:
            raise InvalidParameterError(
                f"Bin size must be positive, got {self.bin_size_ps} ps."
            )
        if self.kind not in ("gaussian", "tabulated"):
            raise InvalidParameterError(f'Unknown IRF kind "{self.kind}".')
        object.__setattr__(self, "values", _readonly(values / total))

    @property
    def n(self) -> int:
        return len(self.values)

    def __repr__(self):
        if self.kind == "gaussian":
            detail = f"sigma={self.sigma_bins:g}"
        else:
            detail = f'source="{self.source_label}"'
        return f"<Irf n={self.n} dt_ps={self.bin_size_ps:g} {self.kind} {detail}>"


def make_gaussian_irf(sigma_bins: float, n: int, bin_size_ps: float = 1.0) -> Irf:
    """Gaussian impulse response centred on bin 0 with circularly wrapped tails.

    `sigma_bins` is the standard deviation in units of Δ, i.e. the response is
    proportional to exp(-t² / (2σ²)).
    """
    if not sigma_bins > 0:
        raise InvalidParameterError(f"IRF sigma must be positive, got {sigma_bins}.")
    if n < 8:
        raise InvalidParameterError(f"IRF length must be at least 8 bins, got {n}.")

    i = np.arange(n, dtype=np.float64)
    # Number of periods needed before the tails are negligible.
    wraps = int(np.ceil(8.0 * sigma_bins / n)) + 1
    values = np.zeros(n)
    for k in range(-wraps, wraps + 1):
        values += np.exp(-((i - k * n) ** 2) / (2.0 * sigma_bins**2))
    return Irf(
        values, bin_size_ps=bin_size_ps, kind="gaussian", sigma_bins=float(sigma_bins)
    )


def make_tabulated_irf(values, bin_size_ps: float = 1.0, label: str = "tabulated") -> Irf:
    """Impulse response from measured samples.

    Small negative samples (e.g. left after background subtraction) are set to zero.
    """
    values = _as_vector(values, "values")
    if np.any(values < 0):
        logger.warning(
            f'Clipping {np.count_nonzero(values < 0)} negative samples in IRF "{label}".'
        )
        values = np.maximum(values, 0.0)
    return Irf(values, bin_size_ps=bin_size_ps, kind="tabulated", source_label=label)


def load_irf(path, bin_size_ps=None) -> Irf:
    """Load a tabulated IRF from an ``SPCV`` file or a one-value-per-line CSV.

    The file extension decides the format (``.csv`` or ``.txt`` for text). An explicit
    `bin_size_ps` overrides the bin width stored in the file.
    """
    path = os.fspath(path)
    if os.path.splitext(path)[1].lower() in (".csv", ".txt"):
        values, dt = io.read_vector_csv(path)
    else:
        values, dt = io.read_vector(path)
    if bin_size_ps is None:
        bin_size_ps = dt if dt is not None else 1.0
    logger.info(f'Loaded {len(values)}-bin IRF from "{path}".')
    return make_tabulated_irf(values, bin_size_ps=bin_size_ps, label=os.path.basename(path))


def circular_convolve(a, b) -> np.ndarray:
    """Circular convolution along the last axis: out_i = Σ_j a_j b_{(i-j) mod N}."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise InvalidParameterError(
            f"Cannot convolve vectors of different lengths ({a.shape[-1]} and {b.shape[-1]})."
        )
    n = a.shape[-1]
    return fft.irfft(fft.rfft(a, axis=-1) * fft.rfft(b, axis=-1), n=n, axis=-1)


def circular_correlate(a, b) -> np.ndarray:
    """Circular cross-correlation along the last axis: out_i = Σ_j a_j b_{(j-i) mod N}."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise InvalidParameterError(
            f"Cannot correlate vectors of different lengths ({a.shape[-1]} and {b.shape[-1]})."
        )
    n = a.shape[-1]
    return fft.irfft(
        fft.rfft(a, axis=-1) * np.conj(fft.rfft(b, axis=-1)), n=n, axis=-1
    )


def shift_waveform(x, shift: float) -> np.ndarray:
    """Circularly delay `x` by a (possibly fractional) number of bins.

    Fractional shifts linearly interpolate between the two neighbouring integer shifts.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    shift = float(shift) % n
    k = int(np.floor(shift))
    w = shift - k
    if w == 0.0:
        return np.roll(x, k, axis=-1)
    return (1.0 - w) * np.roll(x, k, axis=-1) + w * np.roll(x, k + 1, axis=-1)


def clamp_peak(f, phi_max: float) -> np.ndarray:
    """Clip the drive at the peak photon count and floor it at zero."""
    if not phi_max > 0:
        raise InvalidParameterError(f"Peak photon count must be positive, got {phi_max}.")
    return np.maximum(np.minimum(np.asarray(f, dtype=np.float64), phi_max), 0.0)


@dataclass(frozen=True, eq=False)
class Illumination:
    """Illumination drive f and the output waveform s it produces.

    Parameters
    ----------
    f : array_like
        Drive signal in photons per bin.
    irf : Irf
        The system impulse response h.
    phi_sig : float
        Reference mean signal photon count Φ^sig.
    p_factor : float
        Peak power factor; Φ^max = p_factor·Φ^sig. Infinite for no peak limit.
    prefiltered : bool
        If true, `f` is already the output pulse (pulsed baselines whose pulse is the
        IRF itself) and s = f. Otherwise s = f ⊛ h.
    """

    f: np.ndarray
    irf: Irf
    phi_sig: float
    p_factor: float = inf
    prefiltered: bool = False

    def __post_init__(self):
        f = _as_vector(self.f, "f")
        if len(f) != self.irf.n:
            raise InvalidParameterError(
                f"Drive length {len(f)} does not match IRF length {self.irf.n}."
            )
        if self.phi_sig < 0:
            raise InvalidParameterError(
                f"Signal photon count must be non-negative, got {self.phi_sig}."
            )
        if not self.p_factor > 0:
            raise InvalidParameterError(
                f"Peak factor must be positive or infinite, got {self.p_factor}."
            )
        if np.any(f < 0):
            raise InvalidParameterError("Illumination drive must be non-negative.")
        if np.isfinite(self.p_factor) and f.max() > self.phi_max * (1 + 1e-12):
            raise InvalidParameterError(
                f"Illumination drive peak {f.max():g} exceeds the peak photon count "
                f"{self.phi_max:g}."
            )
        object.__setattr__(self, "f", _readonly(f))

    @property
    def n(self) -> int:
        return len(self.f)

    @property
    def h(self) -> np.ndarray:
        return self.irf.values

    @property
    def phi_max(self) -> float:
        return self.p_factor * self.phi_sig

    @cached_property
    def s(self) -> np.ndarray:
        if self.prefiltered:
            return self.f
        return _readonly(circular_convolve(self.f, self.irf.values))

    @property
    def shape(self) -> np.ndarray:
        """The output waveform normalised to unit sum."""
        total = self.s.sum()
        if total <= 0:
            raise InvalidParameterError("Illumination waveform is all zero.")
        return self.s / total

    @property
    def delivered_fraction(self) -> float:
        """Fraction of Φ^sig the illumination can actually deliver.

        Without a peak limit the waveform is always scaled to Φ^sig. With a peak limit
        the drive cannot be scaled up, so only Σs photons (at most Φ^sig) are emitted.
        """
        if not np.isfinite(self.p_factor) or self.phi_sig == 0:
            return 1.0
        return float(min(1.0, self.s.sum() / self.phi_sig))

    def delivered_photons(self, phi_sig: Optional[float] = None) -> float:
        if phi_sig is None:
            phi_sig = self.phi_sig
        return self.delivered_fraction * phi_sig


@dataclass(frozen=True, eq=False)
class Histogram:
    """Photon count histogram M accumulated over L laser cycles."""

    counts: np.ndarray
    cycles: int = 1
    bin_size_ps: float = 1.0

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1:
            raise InvalidParameterError("Histogram counts must be a 1D vector.")
        if np.any(counts < 0):
            raise InvalidParameterError("Histogram counts must be non-negative.")
        if self.cycles < 1:
            raise InvalidParameterError(
                f"Number of laser cycles must be at least 1, got {self.cycles}."
            )
        object.__setattr__(self, "counts", _readonly(counts, dtype=np.int64))

    @property
    def n(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class SceneParams:
    """Single-pixel scene: true depth (in bins), signal photons and SBR.

    `phi_bkg` overrides the background photon count otherwise derived as Φ^sig / SBR.
    """

    depth_bin: float
    phi_sig: float
    sbr: float = 1.0
    phi_bkg: Optional[float] = field(default=None)

    def __post_init__(self):
        if not self.sbr > 0:
            raise InvalidParameterError(f"SBR must be positive, got {self.sbr}.")
        if self.phi_sig < 0:
            raise InvalidParameterError(
                f"Signal photon count must be non-negative, got {self.phi_sig}."
            )
        if self.phi_bkg is not None and self.phi_bkg < 0:
            raise InvalidParameterError(
                f"Background photon count must be non-negative, got {self.phi_bkg}."
            )

    @property
    def background(self) -> float:
        if self.phi_bkg is not None:
            return float(self.phi_bkg)
        return self.phi_sig / self.sbr


def incident_waveform(illumination, scene: SceneParams) -> np.ndarray:
    """Mean photons per bin arriving at the detector, r.

    r_i = Φ^sig·shift(s/Σs, depth)_i + Φ^bkg/N

    Parameters
    ----------
    illumination : Illumination or array_like
        The illumination or directly its output waveform s.
    scene : SceneParams
    """
    if isinstance(illumination, Illumination):
        s = illumination.s
    else:
        s = _as_vector(illumination, "s")
    total = s.sum()
    if total <= 0:
        raise InvalidParameterError("Cannot scale an all-zero waveform.")
    n = len(s)
    signal = scene.phi_sig * shift_waveform(s / total, scene.depth_bin)
    return signal + scene.background / n


def detection_prob(r) -> np.ndarray:
    """Probability that at least one photon is detected in each bin, 1 - exp(-r)."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < 0):
        raise InvalidParameterError("Mean photon counts must be non-negative.")
    return -np.expm1(-r)


def sample_counts(r, cycles: int = 1, mode: str = "poisson", seed=None) -> np.ndarray:
    """Draw photon counts for mean waveform(s) `r` (any shape, bins on the last axis).

    In "poisson" mode r is the total-exposure mean per bin and `cycles` is ignored. In
    "binomial" mode r is the total over L cycles, so each cycle sees r/L and
    M_i ~ Binomial(L, 1 - exp(-r_i/L)).
    """
    if cycles < 1:
        raise InvalidParameterError(
            f"Number of laser cycles must be at least 1, got {cycles}."
        )
    if mode not in SAMPLING_MODES:
        raise InvalidParameterError(
            f'Unknown sampling mode "{mode}"; expected one of {SAMPLING_MODES}.'
        )
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < 0):
        raise InvalidParameterError("Mean photon counts must be non-negative.")
    rng = make_rng(seed)
    if mode == "poisson":
        return rng.poisson(r)
    return rng.binomial(cycles, detection_prob(r / cycles))


def sample_histogram(
    r, cycles: int = 1, mode: str = "poisson", seed=None, bin_size_ps: float = 1.0
) -> Histogram:
    """Sample a single histogram M from the incident waveform r."""
    r = _as_vector(r, "r")
    counts = sample_counts(r, cycles=cycles, mode=mode, seed=seed)
    return Histogram(counts, cycles=cycles, bin_size_ps=bin_size_ps)
