"""Joint optimisation of the illumination drive f and the coding matrix D.

The training objective is the mean circular L1 depth error of a differentiable
decoding pipeline plus a total variation penalty on D::

    f -> clamp(Φ^max) -> ⊛h -> normalise -> shift to depth, scale to (Φ^sig, SBR)
      -> noise r + √r·ε -> encode with D -> ZNCC scores against D′ = corr(D, h)
      -> softargmax -> circular L1

The drive is stored as θ = log f, so f stays positive and an Adam step changes it
by a relative amount. Gradients come from the hand-written tape in
`pyspc.optimisation.tape` and the parameters are updated with ADAM followed by a
projection back onto the feasible set (θ ≤ log Φ^max) after every step.

After every epoch the objective is evaluated on a fixed validation batch and the
parameters of the best epoch are returned.
"""

import logging
import os
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np
import pandas
from packaging.version import Version

from .. import io
from ..codes import CodingMatrix, continuous_gray, load_matrix, save_matrix, truncated_fourier
from ..config import read_config, write_config
from ..core import (
    Illumination,
    InvalidParameterError,
    Irf,
    circular_convolve,
    clamp_peak,
    inf,
    make_gaussian_irf,
    make_tabulated_irf,
)
from ..decode import default_beta
from ..hashes import manifest_entries, verify_manifest
from ..progress import ProgressReporter
from ..random import make_rng
from .adam import AdamState, NaNGradientError, adam_step
from .tape import (
    CircularConvolve,
    CircularL1,
    Clamp,
    DeliveredFraction,
    Divide,
    Encode,
    Exp,
    GaussianNoise,
    Incident,
    Scores,
    ShiftBatch,
    Softargmax,
    Tape,
    Template,
    Total,
    TotalVariation,
    WeightedSum,
    ZeroMeanUnitNorm,
)

logger = logging.getLogger(__name__)

NOISE_MODES = ("gaussian", "none")
ENERGY_MODES = ("clip", "constant")
INIT_CODES = ("fourier", "gray", "random")

BANDWIDTH_LR = 0.013
PEAK_POWER_LR = 0.0018
# Step size of the log drive θ = log f.
DRIVE_LR = 0.1

BUNDLE_FORMAT_VERSION = "1.0"
BUNDLE_FILES = {
    "coding_matrix": "coding_matrix.spcm",
    "drive": "drive.spcv",
    "waveform": "waveform.spcv",
    "irf": "irf.spcv",
    "loss_trace": "loss_trace.csv",
}
BUNDLE_CONFIG = "config.txt"

# Spawn keys separating the random streams used during training.
LABEL_STREAM = 0
SHUFFLE_STREAM = 1
NOISE_STREAM = 2
INIT_STREAM = 3
VALIDATION_STREAM = 4


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss or gradients stop being finite.

    Attributes
    ----------
    checkpoint : Checkpoint
        The last parameters for which the loss was finite.
    path : str or None
        Where the checkpoint bundle was written, if a checkpoint directory was configured.
    """

    def __init__(self, message, checkpoint, path=None):
        self.checkpoint = checkpoint
        self.path = path
        if path is not None:
            message = f'{message} Last good checkpoint written to "{path}".'
        super().__init__(message)


@dataclass
class OptConfig:
    """Training hyperparameters.

    Either give `irf` directly or a Gaussian width `sigma_bins` from which one is
    built. `lr` (the step size of D) and `beta_softargmax` default to values depending
    on `p_factor` and `k`; `drive_lr` is the step size of the log drive. Set
    `validation_labels` to 0 to return the last epoch instead of the best one.
    """

    n: int = 1024
    k: int = 8
    irf: Optional[Irf] = field(default=None, repr=False)
    sigma_bins: float = 1.0
    p_factor: float = inf
    phi_sig_train: float = 1000.0
    sbr_train_set: tuple = (0.5, 1.0, 5.0)
    phi_sig_range: tuple = (100.0, 1000.0)
    depth_samples_per_batch: int = 64
    n_labels: int = 4096
    lr: Optional[float] = None
    drive_lr: Optional[float] = None
    lr_decay: float = 0.35
    epochs: int = 10
    tv_weight: float = 1e-3
    beta_softargmax: Optional[float] = None
    noise_mode: str = "gaussian"
    seed: int = 0
    energy_mode: str = "clip"
    init_codes: str = "fourier"
    init_value: float = 1.0
    optimise_illumination: bool = True
    validation_labels: int = 256
    checkpoint_dir: Optional[str] = None

    def __post_init__(self):
        if self.irf is None:
            self.irf = make_gaussian_irf(self.sigma_bins, self.n)
        elif self.irf.n != self.n:
            raise InvalidParameterError(
                f"IRF length {self.irf.n} does not match N={self.n}."
            )
        elif self.irf.kind == "gaussian":
            self.sigma_bins = self.irf.sigma_bins
        if self.lr is None:
            self.lr = BANDWIDTH_LR if np.isinf(self.p_factor) else PEAK_POWER_LR
        if self.drive_lr is None:
            self.drive_lr = DRIVE_LR
        if self.beta_softargmax is None:
            self.beta_softargmax = default_beta(self.k)
        self.sbr_train_set = tuple(float(v) for v in np.atleast_1d(self.sbr_train_set))
        self.phi_sig_range = tuple(float(v) for v in np.atleast_1d(self.phi_sig_range))

        if not 1 <= self.k <= self.n:
            raise InvalidParameterError(f"Need 1 <= K <= N, got K={self.k}, N={self.n}.")
        if not self.lr > 0:
            raise InvalidParameterError(f"Learning rate must be positive, got {self.lr}.")
        if not self.drive_lr > 0:
            raise InvalidParameterError(
                f"Drive learning rate must be positive, got {self.drive_lr}."
            )
        if self.validation_labels < 0:
            raise InvalidParameterError(
                f"Validation label count must be non-negative, got {self.validation_labels}."
            )
        if not 0 < self.lr_decay <= 1:
            raise InvalidParameterError(
                f"Learning rate decay must be in (0, 1], got {self.lr_decay}."
            )
        if self.epochs < 1:
            raise InvalidParameterError(f"Need at least one epoch, got {self.epochs}.")
        if self.tv_weight < 0:
            raise InvalidParameterError(
                f"TV weight must be non-negative, got {self.tv_weight}."
            )
        if not self.beta_softargmax > 0:
            raise InvalidParameterError(
                f"Softargmax temperature must be positive, got {self.beta_softargmax}."
            )
        if not self.p_factor > 0:
            raise InvalidParameterError(
                f"Peak factor must be positive or infinite, got {self.p_factor}."
            )
        if not self.phi_sig_train > 0:
            raise InvalidParameterError(
                f"Training photon count must be positive, got {self.phi_sig_train}."
            )
        if len(self.phi_sig_range) != 2 or not 0 < self.phi_sig_range[0] <= self.phi_sig_range[1]:
            raise InvalidParameterError(
                f"Photon count range must be (low, high) with 0 < low <= high, got "
                f"{self.phi_sig_range}."
            )
        if not self.sbr_train_set or min(self.sbr_train_set) <= 0:
            raise InvalidParameterError("Training SBR values must be positive.")
        if self.depth_samples_per_batch < 1 or self.n_labels < 1:
            raise InvalidParameterError("Batch size and label count must be positive.")
        if self.noise_mode not in NOISE_MODES:
            raise InvalidParameterError(
                f'Unknown noise mode "{self.noise_mode}"; expected one of {NOISE_MODES}.'
            )
        if self.energy_mode not in ENERGY_MODES:
            raise InvalidParameterError(
                f'Unknown energy mode "{self.energy_mode}"; expected one of {ENERGY_MODES}.'
            )
        if self.init_codes not in INIT_CODES:
            raise InvalidParameterError(
                f'Unknown initial codes "{self.init_codes}"; expected one of {INIT_CODES}.'
            )
        if not self.init_value > 0:
            raise InvalidParameterError(
                f"Initial drive value must be positive, got {self.init_value}."
            )

    @property
    def phi_max(self) -> float:
        return self.p_factor * self.phi_sig_train

    @property
    def peak_limited(self) -> bool:
        return bool(np.isfinite(self.p_factor))

    @property
    def log_phi_max(self) -> float:
        """Upper bound on θ = log f; exp of it never exceeds Φ^max."""
        if not self.peak_limited:
            return inf
        bound = np.log(self.phi_max)
        while np.exp(bound) > self.phi_max:
            bound = np.nextafter(bound, -inf)
        return float(bound)

    def _decay(self, epoch: int) -> float:
        every = max(1, self.epochs // 3)
        return self.lr_decay ** (epoch // every)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for `epoch`, decayed multiplicatively every third of the run."""
        return self.lr * self._decay(epoch)

    def learning_rates(self, epoch: int) -> dict:
        """Per-block learning rates for `epoch`, keyed like the training parameters."""
        decay = self._decay(epoch)
        return {"log_f": self.drive_lr * decay, "d": self.lr * decay}

    def to_dict(self) -> dict:
        data = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "irf"}
        data["sbr_train_set"] = list(self.sbr_train_set)
        data["phi_sig_range"] = list(self.phi_sig_range)
        data["irf_kind"] = self.irf.kind
        return data

    @classmethod
    def from_dict(cls, data, irf=None):
        """Build a config from a dictionary, ignoring keys that are not config fields."""
        data = dict(data)
        names = {f.name for f in fields(cls)}
        kwargs = {key: data.pop(key) for key in list(data) if key in names}
        kwargs.pop("irf", None)
        if data:
            logger.debug(f"Ignoring non-config keys: {sorted(data)}.")
        for key in ("sbr_train_set", "phi_sig_range"):
            if key in kwargs:
                kwargs[key] = tuple(np.atleast_1d(kwargs[key]))
        return cls(irf=irf, **kwargs)


@dataclass
class TrainingBatch:
    """J training samples: depths, signal photons, SBRs and pre-drawn noise."""

    depth: np.ndarray
    phi_sig: np.ndarray
    sbr: np.ndarray
    eps: Optional[np.ndarray] = None

    def __post_init__(self):
        self.depth = np.atleast_1d(np.asarray(self.depth, dtype=np.float64))
        self.phi_sig = np.broadcast_to(
            np.asarray(self.phi_sig, dtype=np.float64), self.depth.shape
        )
        self.sbr = np.broadcast_to(np.asarray(self.sbr, dtype=np.float64), self.depth.shape)
        if np.any(self.sbr <= 0):
            raise InvalidParameterError("SBR must be positive.")
        if self.eps is not None:
            self.eps = np.atleast_2d(np.asarray(self.eps, dtype=np.float64))

    def __len__(self):
        return len(self.depth)


@dataclass
class Checkpoint:
    epoch: int
    batch: int
    f: np.ndarray
    d: np.ndarray


def make_labels(config: OptConfig) -> pandas.DataFrame:
    """The training label set: uniform depths, log-uniform Φ^sig and SBRs from the set."""
    rng = make_rng(config.seed, LABEL_STREAM)
    depth = rng.uniform(0.0, config.n, size=config.n_labels)
    lo, hi = np.log(config.phi_sig_range)
    phi = np.exp(rng.uniform(lo, hi, size=config.n_labels))
    sbr = rng.choice(np.asarray(config.sbr_train_set), size=config.n_labels)
    return pandas.DataFrame({"depth": depth, "phi_sig": phi, "sbr": sbr})


def make_validation_batch(config: OptConfig) -> Optional[TrainingBatch]:
    """Fixed held-out batch used to pick the best epoch; None when disabled."""
    if config.validation_labels == 0:
        return None
    rng = make_rng(config.seed, VALIDATION_STREAM)
    size = config.validation_labels
    lo, hi = np.log(config.phi_sig_range)
    depth = rng.uniform(0.0, config.n, size=size)
    phi = np.exp(rng.uniform(lo, hi, size=size))
    sbr = rng.choice(np.asarray(config.sbr_train_set), size=size)
    eps = rng.standard_normal((size, config.n)) if config.noise_mode == "gaussian" else None
    return TrainingBatch(depth, phi, sbr, eps=eps)


def drive_from_params(params: dict, config: OptConfig) -> np.ndarray:
    """The feasible drive f of a parameter dictionary holding "log_f" or "f".

    Bins whose log drive sits on the bound are reported exactly at Φ^max.
    """
    if "log_f" in params:
        theta = np.asarray(params["log_f"], dtype=np.float64)
        f = np.exp(theta)
        if config.peak_limited:
            f[theta >= config.log_phi_max] = config.phi_max
    else:
        f = np.asarray(params["f"], dtype=np.float64)
    return clamp_peak(f, config.phi_max)


def initial_parameters(config: OptConfig) -> dict:
    theta = np.full(config.n, min(np.log(config.init_value), config.log_phi_max))
    if config.init_codes == "fourier":
        d = truncated_fourier(config.k, config.n).rows
    elif config.init_codes == "gray":
        d = continuous_gray(config.k, config.n).rows
    else:
        d = make_rng(config.seed, INIT_STREAM).uniform(-1.0, 1.0, size=(config.k, config.n))
    return {"log_f": theta, "d": np.array(d)}


def build_pipeline(tape, f, d, batch: TrainingBatch, config: OptConfig):
    """Record the forward pipeline on `tape`.

    Returns the `(loss, data_loss, depth)` variables: the full objective, its mean
    circular L1 part and the J softargmax depth estimates.
    """
    n = config.n
    fc = tape.apply(Clamp(config.phi_max), f, name="f_clamped")
    s = tape.apply(CircularConvolve(config.irf.values), fc, name="s")
    total = tape.apply(Total(), s, name="s_total")
    q = tape.apply(Divide(), s, total, name="q")
    rho = tape.apply(
        DeliveredFraction(config.phi_sig_train if config.peak_limited else None),
        total,
        name="rho",
    )
    x = tape.apply(ShiftBatch(batch.depth, n), q, name="shifted")
    r = tape.apply(Incident(batch.phi_sig, batch.phi_sig / batch.sbr), x, rho, name="r")
    if config.noise_mode == "gaussian":
        if batch.eps is None:
            raise InvalidParameterError("Gaussian noise mode needs pre-drawn noise.")
        if batch.eps.shape != (len(batch), n):
            raise InvalidParameterError(
                f"Noise of shape {batch.eps.shape} does not match ({len(batch)}, {n})."
            )
        y = tape.apply(GaussianNoise(batch.eps), r, name="y")
    else:
        y = r
    b = tape.apply(Encode(), y, d, name="b")
    # D′ follows D but uses the fixed IRF h; a constant drive gives a flat q.
    h = tape.variable("irf", config.irf.values)
    dprime = tape.apply(Template(), d, h, name="dprime")
    bn = tape.apply(ZeroMeanUnitNorm(axis=1), b, name="b_normalised")
    dn = tape.apply(ZeroMeanUnitNorm(axis=0), dprime, name="dprime_normalised")
    scores = tape.apply(Scores(), bn, dn, name="scores")
    depth = tape.apply(Softargmax(config.beta_softargmax), scores, name="depth")
    data_loss = tape.apply(CircularL1(batch.depth, n), depth, name="data_loss")
    tv = tape.apply(TotalVariation(), d, name="tv")
    loss = tape.apply(WeightedSum(1.0, config.tv_weight), data_loss, tv, name="loss")
    return loss, data_loss, depth


def objective(params: dict, batch: TrainingBatch, config: OptConfig, gradients=True):
    """Evaluate the training objective on a batch.

    `params` holds "d" and either the log drive "log_f" or the drive "f" itself.
    Returns `(loss, grads)` where `grads` maps the same keys to gradient arrays (or
    is None when `gradients` is false).
    """
    tape = Tape()
    if "log_f" in params:
        drive_key = "log_f"
        theta = tape.variable("log_f", np.asarray(params["log_f"], dtype=np.float64))
        f = tape.apply(Exp(), theta, name="f")
    else:
        drive_key = "f"
        f = tape.variable("f", np.asarray(params["f"], dtype=np.float64))
    d = tape.variable("d", np.asarray(params["d"], dtype=np.float64))
    loss, _, _ = build_pipeline(tape, f, d, batch, config)
    if not gradients:
        return loss.value, None
    grads = tape.backward(loss)
    return loss.value, {drive_key: grads[drive_key], "d": grads["d"]}


def forward_pipeline(f, d, depth_bin, phi_sig, sbr, noise_eps, config: OptConfig):
    """Run the training pipeline forward for one or more depths.

    Returns `(loss_contrib, predicted_depth)`: the mean circular L1 error and the
    softargmax depth estimate(s), scalar when `depth_bin` is scalar.
    """
    scalar = np.ndim(depth_bin) == 0
    batch = TrainingBatch(depth_bin, phi_sig, sbr, eps=noise_eps)
    tape = Tape()
    f = tape.variable("f", np.asarray(f, dtype=np.float64))
    d = tape.variable("d", np.asarray(getattr(d, "rows", d), dtype=np.float64))
    _, data_loss, depth = build_pipeline(tape, f, d, batch, config)
    predicted = depth.value[0] if scalar else depth.value
    return data_loss.value, predicted


def _is_kink(block, index, params, config, step):
    margin = 10.0 * step
    if block == "f":
        value = params["f"][index]
        return abs(value) < margin or abs(value - config.phi_max) < margin
    if block == "log_f":
        return abs(params["log_f"][index] - config.log_phi_max) < margin
    k, i = index
    row = params["d"][k]
    diffs = []
    if i > 0:
        diffs.append(row[i] - row[i - 1])
    if i < len(row) - 1:
        diffs.append(row[i + 1] - row[i])
    return any(abs(diff) < margin for diff in diffs)


def gradient_check(params, batch, config, step=1e-4, floor=1e-4, blocks=None):
    """Compare tape gradients with central finite differences.

    `blocks` defaults to every block of `params`. Coordinates within `10·step` of a
    clamp bound or a TV kink are skipped.

    Returns
    -------
    pandas.DataFrame
        One row per coordinate with columns block, index, analytic, numeric,
        rel_error and skipped. The relative error is |a - n| / max(|a|, |n|, floor).
    """
    params = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
    _, grads = objective(params, batch, config)
    rows = []
    for block in blocks or tuple(grads):
        for index in np.ndindex(params[block].shape):
            index = index[0] if len(index) == 1 else index
            analytic = float(grads[block][index])
            if _is_kink(block, index, params, config, step):
                rows.append((block, index, analytic, np.nan, np.nan, True))
                continue
            original = params[block][index]
            params[block][index] = original + step
            plus, _ = objective(params, batch, config, gradients=False)
            params[block][index] = original - step
            minus, _ = objective(params, batch, config, gradients=False)
            params[block][index] = original
            numeric = (plus - minus) / (2.0 * step)
            scale = max(abs(analytic), abs(numeric), floor)
            rows.append((block, index, analytic, numeric, abs(analytic - numeric) / scale, False))
    return pandas.DataFrame(
        rows, columns=["block", "index", "analytic", "numeric", "rel_error", "skipped"]
    )


@dataclass
class OptimizedBundle:
    """Result of `train`: drive f, waveform s, coding matrix D, config and loss trace.

    `validation_trace` holds the per-epoch validation loss and `best_epoch` the epoch
    whose parameters the bundle carries (None without validation).
    """

    f: np.ndarray
    s: np.ndarray
    d: CodingMatrix
    config: OptConfig
    loss_trace: list = field(default_factory=list)
    converged: bool = True
    validation_trace: list = field(default_factory=list)
    best_epoch: Optional[int] = None

    @property
    def clamp_fraction(self) -> float:
        """Fraction of drive bins sitting at Φ^max; 0 without a peak limit."""
        if not self.config.peak_limited:
            return 0.0
        return float(np.mean(np.isclose(self.f, self.config.phi_max, rtol=1e-9, atol=0.0)))

    @property
    def smoothed_loss_trace(self) -> np.ndarray:
        """Running minimum of the per-epoch loss."""
        if not self.loss_trace:
            return np.array([])
        return np.minimum.accumulate(np.asarray(self.loss_trace, dtype=np.float64))

    def loss_dataframe(self) -> pandas.DataFrame:
        df = pandas.DataFrame(
            {
                "loss": np.asarray(self.loss_trace, dtype=np.float64),
                "smoothed": self.smoothed_loss_trace,
            },
            index=pandas.RangeIndex(len(self.loss_trace), name="epoch"),
        )
        if self.validation_trace and len(self.validation_trace) == len(self.loss_trace):
            df["validation"] = np.asarray(self.validation_trace, dtype=np.float64)
        return df

    def to_illumination(self, phi_sig=None) -> Illumination:
        """Illumination at `phi_sig`, scaling the drive so Φ^max = p^factor·Φ^sig still holds."""
        if phi_sig is None:
            phi_sig = self.config.phi_sig_train
        f = np.asarray(self.f) * (phi_sig / self.config.phi_sig_train)
        return Illumination(f, self.config.irf, phi_sig, p_factor=self.config.p_factor)

    def to_scheme(self, name="optimized", phi_sig=None, template_source=None):
        """Evaluation scheme for the bundle; decodes against the IRF template used in training
        unless `template_source` says otherwise."""
        from ..evaluation import Scheme

        if template_source is None:
            template_source = "irf"

        return Scheme(
            name,
            self.d,
            self.to_illumination(phi_sig),
            template_source=template_source,
        )


def _bundle_from_params(params, config, loss_trace, converged=True, **kwargs):
    f = drive_from_params(params, config)
    s = circular_convolve(f, config.irf.values)
    return OptimizedBundle(
        f=f,
        s=s,
        d=CodingMatrix(params["d"], label="optimized"),
        config=config,
        loss_trace=list(loss_trace),
        converged=converged,
        **kwargs,
    )


def _diverged(message, checkpoint, config, loss_trace):
    path = None
    if config.checkpoint_dir is not None and checkpoint is not None:
        bundle = _bundle_from_params(
            {"f": checkpoint.f, "d": checkpoint.d}, config, loss_trace, converged=False
        )
        path = save_bundle(bundle, config.checkpoint_dir)
    return TrainingDivergedError(message, checkpoint, path=path)


def train(config: OptConfig, callback=None, print_func=None) -> OptimizedBundle:
    """Jointly optimise f and D with projected ADAM.

    Parameters
    ----------
    config : OptConfig
    callback : callable or None
        Called as `callback(epoch, batch, params)` after every projected update,
        where `params` maps "f" to the feasible drive and "d" to the coding matrix.
    print_func : callable or None
        Progress messages are passed to this function; defaults to `logger.info`.
    """
    labels = make_labels(config)
    validation = make_validation_batch(config)
    params = initial_parameters(config)
    state = AdamState()
    batch_size = config.depth_samples_per_batch
    n_batches = int(np.ceil(config.n_labels / batch_size))
    progress = ProgressReporter(config.epochs, unit="epochs", print_func=print_func, every=1)

    logger.info(
        f"Training K={config.k} N={config.n} p_factor={config.p_factor:g} for "
        f"{config.epochs} epochs of {n_batches} batches."
    )

    loss_trace = []
    validation_trace = []
    best = None
    checkpoint = Checkpoint(-1, -1, drive_from_params(params, config), params["d"].copy())
    for epoch in range(config.epochs):
        rates = config.learning_rates(epoch)
        order = make_rng(config.seed, SHUFFLE_STREAM, epoch).permutation(config.n_labels)
        batch_losses = []
        for b in range(n_batches):
            selected = labels.iloc[order[b * batch_size : (b + 1) * batch_size]]
            eps = None
            if config.noise_mode == "gaussian":
                eps = make_rng(config.seed, NOISE_STREAM, epoch, b).standard_normal(
                    (len(selected), config.n)
                )
            batch = TrainingBatch(
                selected["depth"].to_numpy(),
                selected["phi_sig"].to_numpy(),
                selected["sbr"].to_numpy(),
                eps=eps,
            )
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                loss, grads = objective(params, batch, config)
            if not np.isfinite(loss):
                raise _diverged(
                    f"Training loss became {loss} at epoch {epoch}, batch {b}.",
                    checkpoint,
                    config,
                    loss_trace,
                )
            if not config.optimise_illumination:
                grads.pop("log_f")
            try:
                params = adam_step(params, grads, state, rates)
            except NaNGradientError as err:
                raise _diverged(
                    f"{err} (epoch {epoch}, batch {b}).", checkpoint, config, loss_trace
                ) from err
            # Projection onto f <= Φ^max.
            params["log_f"] = np.minimum(params["log_f"], config.log_phi_max)
            f = drive_from_params(params, config)
            checkpoint = Checkpoint(epoch, b, f, params["d"].copy())
            batch_losses.append(loss)
            logger.debug(f"Epoch {epoch} batch {b}: loss {loss:.6g}")
            if callback is not None:
                callback(epoch, b, {"f": f, "d": params["d"]})
        loss_trace.append(float(np.mean(batch_losses)))
        message = f"Epoch {epoch}: mean loss {loss_trace[-1]:.6g} (lr {rates['d']:.4g})"
        if validation is not None:
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                val_loss, _ = objective(params, validation, config, gradients=False)
            validation_trace.append(float(val_loss))
            message += f", validation loss {val_loss:.6g}"
            if best is None or val_loss < validation_trace[best[0]]:
                best = (epoch, {name: value.copy() for name, value in params.items()})
        if config.peak_limited:
            at_bound = np.mean(params["log_f"] >= config.log_phi_max)
            message += f", clamp active on {at_bound:.1%} of bins"
        logger.info(message)
        progress.update(epoch)

    converged = loss_trace[-1] <= loss_trace[0]
    if not converged:
        logger.warning(
            f"Final epoch loss {loss_trace[-1]:.6g} is higher than the first epoch loss "
            f"{loss_trace[0]:.6g}; training did not converge."
        )
    best_epoch = None
    if best is not None:
        best_epoch, params = best
        if best_epoch != config.epochs - 1:
            logger.info(
                f"Returning epoch {best_epoch} with validation loss "
                f"{validation_trace[best_epoch]:.6g}."
            )
    return _bundle_from_params(
        params,
        config,
        loss_trace,
        converged=converged,
        validation_trace=validation_trace,
        best_epoch=best_epoch,
    )


@dataclass
class ConstraintReport:
    peak_violation: float
    negative_violation: float
    reconstruction_error: float
    tolerance: float = 1e-9

    @property
    def max_violation(self) -> float:
        return max(self.peak_violation, self.negative_violation)

    @property
    def reconstruction_mismatch(self) -> bool:
        return self.reconstruction_error > self.tolerance

    @property
    def ok(self) -> bool:
        return self.max_violation == 0 and not self.reconstruction_mismatch

    def __str__(self):
        status = "OK" if self.ok else "VIOLATED"
        return (
            f"Constraints {status}: peak violation {self.peak_violation:.3g}, "
            f"negative violation {self.negative_violation:.3g}, "
            f"max |s - f*h| {self.reconstruction_error:.3g}"
        )


def check_constraints(bundle: OptimizedBundle, tolerance=1e-9) -> ConstraintReport:
    """Check f ≤ Φ^max, f ≥ 0 and s = f ⊛ h on a bundle without modifying it."""
    f = np.asarray(bundle.f, dtype=np.float64)
    config = bundle.config
    peak = 0.0
    if config.peak_limited:
        peak = max(0.0, float(f.max() - config.phi_max))
    negative = max(0.0, float(-f.min()))
    expected = circular_convolve(f, config.irf.values)
    recon = float(np.max(np.abs(np.asarray(bundle.s) - expected)))
    return ConstraintReport(peak, negative, recon, tolerance=tolerance)


def save_bundle(bundle: OptimizedBundle, path) -> str:
    """Write a bundle directory; returns its path."""
    path = os.fspath(path)
    os.makedirs(path, exist_ok=True)
    config = bundle.config
    dt = config.irf.bin_size_ps

    files = {key: os.path.join(path, name) for key, name in BUNDLE_FILES.items()}
    save_matrix(bundle.d, files["coding_matrix"])
    io.write_vector(files["drive"], bundle.f, bin_size_ps=dt)
    io.write_vector(files["waveform"], bundle.s, bin_size_ps=dt)
    io.write_vector(files["irf"], config.irf.values, bin_size_ps=dt)
    bundle.loss_dataframe().to_csv(files["loss_trace"], float_format="%.17g")

    data = {"format_version": BUNDLE_FORMAT_VERSION}
    data.update(config.to_dict())
    data["converged"] = bundle.converged
    data["loss_trace"] = list(bundle.loss_trace)
    data["validation_trace"] = list(bundle.validation_trace)
    data["best_epoch"] = bundle.best_epoch
    data.update(manifest_entries(files.values()))
    write_config(os.path.join(path, BUNDLE_CONFIG), data, header="pyspc optimised bundle")
    logger.info(f'Saved optimised bundle to "{path}".')
    return path


def load_bundle(path) -> OptimizedBundle:
    """Read a bundle directory written by `save_bundle`, verifying its file hashes."""
    path = os.fspath(path)
    config_path = os.path.join(path, BUNDLE_CONFIG)
    if not os.path.exists(config_path):
        raise FileNotFoundError(f'No bundle configuration found at "{config_path}".')
    data = read_config(config_path)

    version = Version(str(data.pop("format_version", "0")))
    if version.major != Version(BUNDLE_FORMAT_VERSION).major:
        raise io.UnsupportedVersionError(
            f"Unsupported bundle format version {version}", path=config_path
        )

    files = {key: os.path.join(path, name) for key, name in BUNDLE_FILES.items()}
    verify_manifest(files.values(), data)

    irf_values, dt = io.read_vector(files["irf"])
    if data.get("irf_kind") == "gaussian":
        irf = Irf(irf_values, bin_size_ps=dt, kind="gaussian", sigma_bins=data["sigma_bins"])
    else:
        irf = make_tabulated_irf(irf_values, bin_size_ps=dt, label=os.path.basename(path))
    converged = data.pop("converged", True)
    loss_trace = data.pop("loss_trace", None)
    if loss_trace is None:
        loss_trace = []
    validation_trace = data.pop("validation_trace", None)
    if validation_trace is None:
        validation_trace = []
    best_epoch = data.pop("best_epoch", None)
    config = OptConfig.from_dict(data, irf=irf)

    f, _ = io.read_vector(files["drive"])
    s, _ = io.read_vector(files["waveform"])
    d = load_matrix(files["coding_matrix"], label="optimized")
    return OptimizedBundle(
        f=f,
        s=s,
        d=d,
        config=config,
        loss_trace=list(np.atleast_1d(loss_trace)),
        converged=converged,
        validation_trace=list(np.atleast_1d(validation_trace)),
        best_epoch=best_epoch,
    )
