"""Monte Carlo evaluation of coding schemes over photon count and SBR grids.

Every (scheme, Φ^sig, SBR) cell runs T trials. Trial t of cell c draws its depth from
the stream keyed by (seed, c, t, 0) and its photon counts from (seed, c, t, 1), so
all schemes see the same depths and results do not depend on the worker count.
"""

import logging
from dataclasses import dataclass, field
from functools import partial
from itertools import product
from typing import Optional

import numpy as np
import pandas

from ..codes import (
    TEMPLATE_SOURCES,
    CodingMatrix,
    DecodeTemplate,
    build_template,
    coarse,
    continuous_gray,
    identity_frh,
    truncated_fourier,
)
from ..core import (
    Illumination,
    InvalidParameterError,
    Irf,
    SceneParams,
    inf,
    incident_waveform,
)
from ..decode import (
    circular_error,
    encode_batch,
    matched_filter_decode_batch,
    zncc_decode_batch,
)
from ..parallel import parallel_map
from ..random import make_rng
from .figures import plot_sweep
from .metrics import bins_to_metres, error_stats
from .pulsed import PULSED_MODES, pulsed_illumination

logger = logging.getLogger(__name__)

DECODERS = ("zncc", "matched")
BASELINES = ("fourier", "gray", "coarse", "frh")
NOISE_MODES = ("poisson", "none")

COLUMNS = ["scheme", "phi", "sbr", "mae", "rmse", "outlier_rate", "trials"]
METRE_COLUMNS = ["mae_m", "rmse_m"]

DEPTH_STREAM = 0
COUNT_STREAM = 1


@dataclass(frozen=True, eq=False)
class Scheme:
    """A coding matrix, the illumination it is used with and how it is decoded.

    Parameters
    ----------
    name : str
    coding : CodingMatrix
    illumination : Illumination
        Only the waveform shape and the delivered fraction are used; both are
        independent of the photon count the illumination was built for.
    template_source : str
        "shape" correlates D with the output waveform s, "irf" with h.
    decoder : str
        "zncc", or "matched" for matched filtering of full histograms (needs K = N).
    """

    name: str
    coding: CodingMatrix
    illumination: Illumination
    template_source: str = "shape"
    decoder: str = "zncc"
    template: Optional[DecodeTemplate] = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.coding.n != self.illumination.n:
            raise InvalidParameterError(
                f'Scheme "{self.name}": coding matrix N={self.coding.n} does not match '
                f"illumination N={self.illumination.n}."
            )
        if self.template_source not in TEMPLATE_SOURCES:
            raise InvalidParameterError(
                f'Unknown template source "{self.template_source}"; expected one of '
                f"{TEMPLATE_SOURCES}."
            )
        if self.decoder not in DECODERS:
            raise InvalidParameterError(
                f'Unknown decoder "{self.decoder}"; expected one of {DECODERS}.'
            )
        if self.decoder == "matched":
            if self.coding.k != self.coding.n:
                raise InvalidParameterError(
                    f'Scheme "{self.name}": matched filtering needs a full histogram '
                    f"(K = N), got K={self.coding.k}."
                )
        else:
            template = build_template(self.coding, self.illumination, self.template_source)
            object.__setattr__(self, "template", template)

    @property
    def n(self) -> int:
        return self.coding.n

    @property
    def matched_shape(self) -> np.ndarray:
        if self.template_source == "irf":
            return self.illumination.h
        return self.illumination.shape

    def decode_counts(self, counts):
        """Encode and decode a (T, N) stack of histograms; returns `(depths, ambiguous)`."""
        b = encode_batch(self.coding, counts)
        if self.decoder == "matched":
            return matched_filter_decode_batch(self.matched_shape, b)
        return zncc_decode_batch(self.template, b)

    def with_coding(self, coding: CodingMatrix, name=None) -> "Scheme":
        return Scheme(
            name or self.name,
            coding,
            self.illumination,
            template_source=self.template_source,
            decoder=self.decoder,
        )

    def __repr__(self):
        return f'<Scheme "{self.name}" K={self.coding.k} N={self.n} decoder={self.decoder}>'


def make_baseline_schemes(
    names,
    k: int,
    n: int,
    irf: Irf,
    phi_sig: float = 1000.0,
    p_factor=inf,
    pulsed_mode="clip",
    template_source="shape",
) -> list:
    """Pulsed baseline schemes by name: "fourier", "gray", "coarse" or "frh"."""
    if irf.n != n:
        raise InvalidParameterError(f"IRF length {irf.n} does not match N={n}.")
    illumination = pulsed_illumination(irf, phi_sig, p_factor, pulsed_mode)
    schemes = []
    for name in names:
        if name == "fourier":
            scheme = Scheme(name, truncated_fourier(k, n), illumination, template_source)
        elif name == "gray":
            scheme = Scheme(name, continuous_gray(k, n), illumination, template_source)
        elif name == "coarse":
            scheme = Scheme(name, coarse(k, n), illumination, template_source)
        elif name in ("frh", "identity"):
            scheme = Scheme(
                "frh", identity_frh(n), illumination, template_source, decoder="matched"
            )
        else:
            raise InvalidParameterError(
                f'Unknown baseline scheme "{name}"; expected one of {BASELINES}.'
            )
        schemes.append(scheme)
    return schemes


@dataclass
class SweepConfig:
    schemes: list
    phi_grid: list
    sbr_grid: list
    trials: int = 2000
    seed: int = 0
    irf: Optional[Irf] = None
    pulsed_mode: str = "clip"
    noise: str = "poisson"
    threads: Optional[int] = None
    dt_ps: Optional[float] = None

    def __post_init__(self):
        self.phi_grid = [float(v) for v in np.atleast_1d(self.phi_grid)]
        self.sbr_grid = [float(v) for v in np.atleast_1d(self.sbr_grid)]
        if self.trials < 1:
            raise InvalidParameterError(f"Need at least one trial per cell, got {self.trials}.")
        if not self.schemes or not self.phi_grid or not self.sbr_grid:
            raise InvalidParameterError("Scheme list and grids must not be empty.")
        if min(self.phi_grid) < 0:
            raise InvalidParameterError("Signal photon counts must be non-negative.")
        if min(self.sbr_grid) <= 0:
            raise InvalidParameterError("SBR values must be positive.")
        if self.pulsed_mode not in PULSED_MODES:
            raise InvalidParameterError(
                f'Unknown pulsed mode "{self.pulsed_mode}"; expected one of {PULSED_MODES}.'
            )
        if self.noise not in NOISE_MODES:
            raise InvalidParameterError(
                f'Unknown noise mode "{self.noise}"; expected one of {NOISE_MODES}.'
            )
        names = [scheme.name for scheme in self.schemes]
        if len(set(names)) != len(names):
            raise InvalidParameterError(f"Scheme names must be unique, got {names}.")

    def cells(self) -> list:
        """(cell index, Φ^sig, SBR) for every grid cell."""
        return [
            (i, phi, sbr) for i, (phi, sbr) in enumerate(product(self.phi_grid, self.sbr_grid))
        ]


@dataclass
class SweepResult:
    """MAE/RMSE (in bins) per (scheme, Φ^sig, SBR) cell."""

    rows: list = field(default_factory=list)
    dt_ps: Optional[float] = None

    def to_dataframe(self) -> pandas.DataFrame:
        df = pandas.DataFrame(self.rows, columns=COLUMNS)
        if self.dt_ps is not None:
            df["mae_m"] = bins_to_metres(df["mae"].to_numpy(dtype=float), self.dt_ps)
            df["rmse_m"] = bins_to_metres(df["rmse"].to_numpy(dtype=float), self.dt_ps)
        return df

    @classmethod
    def from_dataframe(cls, df, dt_ps=None):
        rows = [dict(zip(COLUMNS, values)) for values in df[COLUMNS].itertuples(index=False)]
        return cls(rows=rows, dt_ps=dt_ps)

    def cell(self, scheme, phi, sbr) -> dict:
        for row in self.rows:
            if row["scheme"] == scheme and row["phi"] == phi and row["sbr"] == sbr:
                return row
        raise KeyError((scheme, phi, sbr))

    def __len__(self):
        return len(self.rows)


def trial_depths(seed, cell_index, trials, n) -> np.ndarray:
    return np.array(
        [make_rng(seed, cell_index, t, DEPTH_STREAM).uniform(0.0, n) for t in range(trials)]
    )


def simulate_counts(scheme: Scheme, depths, phi, sbr, seed, cell_index, noise="poisson"):
    """Photon count histograms, one per trial depth, for `scheme` at (Φ^sig, SBR)."""
    illumination = scheme.illumination
    signal = phi * illumination.delivered_fraction
    counts = np.empty((len(depths), scheme.n))
    for t, depth in enumerate(depths):
        scene = SceneParams(depth, signal, sbr=sbr, phi_bkg=phi / sbr)
        r = incident_waveform(illumination, scene)
        if noise == "poisson":
            counts[t] = make_rng(seed, cell_index, t, COUNT_STREAM).poisson(r)
        else:
            counts[t] = r
    return counts


def _run_cell(item, config: SweepConfig) -> dict:
    scheme, cell_index, phi, sbr = item
    n = scheme.n
    depths = trial_depths(config.seed, cell_index, config.trials, n)
    counts = simulate_counts(scheme, depths, phi, sbr, config.seed, cell_index, config.noise)
    estimates, ambiguous = scheme.decode_counts(counts)
    errors = circular_error(estimates, depths, n)
    # An ambiguous decode is an outlier at the largest possible circular error.
    errors[ambiguous] = n / 2.0
    if np.any(ambiguous):
        logger.debug(
            f'{np.count_nonzero(ambiguous)} ambiguous decodes for "{scheme.name}" at '
            f"phi={phi:g}, sbr={sbr:g}."
        )
    stats = error_stats(errors, n)
    logger.debug(
        f'"{scheme.name}" phi={phi:g} sbr={sbr:g}: MAE {stats["mae"]:.4g}, '
        f'RMSE {stats["rmse"]:.4g}'
    )
    return {"scheme": scheme.name, "phi": phi, "sbr": sbr, **stats, "trials": config.trials}


def run_sweep(config: SweepConfig) -> SweepResult:
    """Run every (scheme, Φ^sig, SBR) cell of the sweep."""
    items = [
        (scheme, cell_index, phi, sbr)
        for scheme in config.schemes
        for cell_index, phi, sbr in config.cells()
    ]
    logger.info(
        f"Running {len(items)} sweep cells of {config.trials} trials "
        f"({len(config.schemes)} schemes)."
    )
    rows = parallel_map(partial(_run_cell, config=config), items, threads=config.threads)
    logger.info("Sweep complete.")
    return SweepResult(rows=rows, dt_ps=config.dt_ps)


def summarize(result: SweepResult, path=None, fmt="csv") -> str:
    """Render a sweep result as CSV (written to `path` if given) or a text table."""
    df = result.to_dataframe()
    if fmt == "csv":
        text = df.to_csv(index=False, float_format="%.17g", lineterminator="\n")
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            logger.info(f'Wrote sweep results to "{path}".')
        return text
    elif fmt == "table":
        return df.to_string(index=False)
    raise ValueError(f'Unknown summary format "{fmt}".')


def read_sweep_csv(path) -> SweepResult:
    df = pandas.read_csv(path)
    missing = [col for col in COLUMNS if col not in df.columns]
    if missing:
        raise ValueError(f'Sweep CSV "{path}" is missing columns {missing}.')
    df["scheme"] = df["scheme"].astype(str)
    return SweepResult.from_dataframe(df)


__all__ = [
    "Scheme",
    "SweepConfig",
    "SweepResult",
    "make_baseline_schemes",
    "plot_sweep",
    "pulsed_illumination",
    "read_sweep_csv",
    "run_sweep",
    "summarize",
]
