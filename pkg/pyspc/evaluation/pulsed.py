"""Pulsed baseline illuminations under a peak photon limit.

Three ways of handling Φ^max for a pulse shaped like the IRF:

``unconstrained``
    Ignore the limit; s = Φ^sig·h.
``clip``
    Clamp the scaled pulse at Φ^max, losing the photons above it.
``constant``
    Widen the pulse until its peak equals Φ^max so that all Φ^sig photons are still
    delivered.
"""

import logging

import numpy as np

from ..core import (
    Illumination,
    InvalidParameterError,
    Irf,
    circular_convolve,
    clamp_peak,
    inf,
    make_gaussian_irf,
)
from ..utils.bisect import BisectionError, bisect_smallest_feasible

logger = logging.getLogger(__name__)

PULSED_MODES = ("unconstrained", "clip", "constant")

# Relative tolerance on the widened pulse peak.
PEAK_TOLERANCE = 1e-3


def widened_pulse(irf: Irf, width: float) -> np.ndarray:
    """The IRF widened by a Gaussian of standard deviation `width` bins.

    Gaussian IRFs are rebuilt directly with σ′ = √(σ² + width²).
    """
    if width <= 0:
        return np.array(irf.values)
    if irf.kind == "gaussian":
        return make_gaussian_irf(np.hypot(irf.sigma_bins, width), irf.n).values
    return circular_convolve(irf.values, make_gaussian_irf(width, irf.n).values)


def equivalent_sigma(irf: Irf, width: float):
    """σ′ of the widened pulse for Gaussian IRFs, else None."""
    if irf.kind != "gaussian":
        return None
    return float(np.hypot(irf.sigma_bins, width))


def pulsed_illumination(irf: Irf, phi_sig: float, p_factor=inf, mode="clip") -> Illumination:
    """Illumination for a pulsed baseline whose output pulse is (a widened) h."""
    if mode not in PULSED_MODES:
        raise InvalidParameterError(
            f'Unknown pulsed mode "{mode}"; expected one of {PULSED_MODES}.'
        )
    if not p_factor > 0:
        raise InvalidParameterError(f"Peak factor must be positive or infinite, got {p_factor}.")
    if not phi_sig > 0:
        raise InvalidParameterError(f"Signal photon count must be positive, got {phi_sig}.")

    pulse = phi_sig * np.asarray(irf.values)
    if mode == "unconstrained" or np.isinf(p_factor):
        return Illumination(pulse, irf, phi_sig, p_factor=inf, prefiltered=True)

    phi_max = p_factor * phi_sig
    if mode == "clip":
        clipped = clamp_peak(pulse, phi_max)
        delivered = clipped.sum() / phi_sig
        if delivered < 1.0:
            logger.warning(
                f"Clipping the pulse at {phi_max:g} photons delivers only "
                f"{100 * delivered:.1f}% of the signal photons."
            )
        return Illumination(clipped, irf, phi_sig, p_factor=p_factor, prefiltered=True)

    if pulse.max() <= phi_max:
        return Illumination(pulse, irf, phi_sig, p_factor=p_factor, prefiltered=True)

    n = irf.n
    max_sigma = n / 6.0
    if irf.kind == "gaussian":
        if irf.sigma_bins >= max_sigma:
            raise InvalidParameterError(
                f"Cannot widen a pulse of width {irf.sigma_bins:g} bins; it already "
                f"exceeds N/6 = {max_sigma:g}."
            )
        max_width = np.sqrt(max_sigma**2 - irf.sigma_bins**2)
    else:
        max_width = max_sigma

    def peak_ok(width):
        return phi_sig * widened_pulse(irf, width).max() <= phi_max * (1 + PEAK_TOLERANCE)

    try:
        width = bisect_smallest_feasible(
            peak_ok, 0.0, max_width, epsilon=1e-6 * n, name="pulse width"
        )
    except BisectionError:
        raise InvalidParameterError(
            f"Constant-energy pulse cannot meet the peak limit {phi_max:g} even when "
            f"widened to N/6 = {max_sigma:g} bins."
        )
    shape = widened_pulse(irf, width)
    # The bisection leaves the peak at most PEAK_TOLERANCE above Φ^max.
    f = clamp_peak(phi_sig * shape, phi_max)
    sigma = equivalent_sigma(irf, width)
    detail = f"sigma' = {sigma:.3f}" if sigma is not None else f"extra width {width:.3f}"
    logger.info(
        f"Constant-energy pulse widened to {detail} bins for peak {phi_max:g} photons."
    )
    return Illumination(f, irf, phi_sig, p_factor=p_factor, prefiltered=True)
