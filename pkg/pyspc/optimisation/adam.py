import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class NaNGradientError(FloatingPointError):
    """Raised when a gradient block contains NaN or infinite values.

    Attributes
    ----------
    block : str
        Name of the offending parameter block.
    """

    def __init__(self, block):
        self.block = block
        super().__init__(f'Non-finite gradient in parameter block "{block}".')


@dataclass
class AdamState:
    """First and second moment estimates per parameter block plus the step count."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One ADAM update with bias correction.

    Parameters
    ----------
    params, grads : dict of numpy.ndarray
        Parameter and gradient blocks keyed by name. Blocks missing from `grads`
        are left untouched.
    state : AdamState
        Updated in place.
    lr : float or dict
        Step size, or a mapping from block name to step size. Every block in
        `grads` needs an entry when a mapping is given.

    Returns
    -------
    dict
        New parameter arrays; the inputs are not modified.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f'Gradient given for unknown parameter block "{name}".')
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(
                f'Gradient shape {np.shape(g)} does not match parameter block "{name}" '
                f"shape {np.shape(params[name])}."
            )
        if not np.all(np.isfinite(g)):
            raise NaNGradientError(name)

    if isinstance(lr, dict):
        missing = sorted(set(grads) - set(lr))
        if missing:
            raise KeyError(f"No learning rate given for parameter blocks {missing}.")

    state.t += 1
    updated = dict(params)
    for name, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - beta1**state.t)
        v_hat = v / (1.0 - beta2**state.t)
        step = lr[name] if isinstance(lr, dict) else lr
        updated[name] = params[name] - step * m_hat / (np.sqrt(v_hat) + eps)
    return updated
