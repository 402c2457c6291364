import numpy as np
from numpy.testing import assert_allclose

from pyspc.decode import circular_error


def assert_depths_close(estimated, expected, n, atol=1.0):
    """Assert circular depth errors are all within `atol` bins."""
    __tracebackhide__ = True
    errors = circular_error(estimated, expected, n)
    assert np.all(errors <= atol), f"max circular error {np.max(errors)} > {atol}"


def numeric_derivative(func, x, step=1e-6):
    """Central finite difference gradient of a scalar function of a vector."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += step
        xm.flat[i] -= step
        grad.flat[i] = (func(xp) - func(xm)) / (2 * step)
    return grad


def assert_gradient(func, grad, x, rtol=1e-5, atol=1e-8, step=1e-6):
    __tracebackhide__ = True
    assert_allclose(grad, numeric_derivative(func, x, step=step), rtol=rtol, atol=atol)
