"""Training losses: circular L1 depth error and total variation of the coding matrix."""

import numpy as np


def wrap_difference(estimate, target, n: int):
    """Signed circular difference in [-N/2, N/2)."""
    return np.mod(np.asarray(estimate) - np.asarray(target) + n / 2.0, n) - n / 2.0


def circular_l1(estimate, target, n: int) -> float:
    """Mean circular absolute depth error."""
    return float(np.mean(np.abs(wrap_difference(estimate, target, n))))


def circular_l1_grad(estimate, target, n: int) -> np.ndarray:
    """Gradient of `circular_l1` with respect to the estimates; sign(0) = 0."""
    diff = wrap_difference(estimate, target, n)
    return np.sign(diff) / diff.size


def tv_penalty(rows) -> float:
    """Σ_k Σ_i |D_{k,i+1} - D_{k,i}| along each row (not wrapped)."""
    rows = getattr(rows, "rows", rows)
    return float(np.abs(np.diff(rows, axis=-1)).sum())


def tv_penalty_grad(rows) -> np.ndarray:
    """Subgradient of `tv_penalty`, taking sign(0) = 0 at kinks."""
    rows = getattr(rows, "rows", rows)
    sign = np.sign(np.diff(rows, axis=-1))
    grad = np.zeros_like(rows, dtype=np.float64)
    grad[..., 1:] += sign
    grad[..., :-1] -= sign
    return grad
