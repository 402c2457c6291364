import numpy as np
import pytest
from numpy.testing import assert_allclose

from pyspc.core import make_gaussian_irf
from pyspc.optimisation.tape import (
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
from helpers import numeric_derivative
from fixtures import rng


def _check_op_gradient(op, values, rng, rtol=1e-5, atol=1e-7):
    """Compare `op.backward` with finite differences of Σ upstream·forward."""
    values = [np.array(v, dtype=np.float64) for v in values]
    out = op.forward(*values)
    upstream = rng.standard_normal(np.shape(out)) if np.ndim(out) else 1.0
    analytic = op.backward(upstream, out, *values)
    assert len(analytic) == len(values)
    for i, value in enumerate(values):
        if analytic[i] is None:
            continue

        def func(x):
            args = list(values)
            args[i] = x
            return float(np.sum(upstream * op.forward(*args)))

        numeric = numeric_derivative(func, value)
        assert_allclose(np.asarray(analytic[i], dtype=np.float64), numeric, rtol=rtol, atol=atol)


def test_tape_records_graph():
    tape = Tape()
    x = tape.variable("x", np.array([1.0, 2.0, 3.0]))
    total = tape.apply(Total(), x, name="total")
    y = tape.apply(Divide(), x, total, name="y")
    assert len(tape) == 3
    assert tape.forward_order() == ["x", "total", "y"]
    assert tape.leaves() == ["x"]
    assert_allclose(y.value, [1 / 6, 2 / 6, 3 / 6])


def test_tape_duplicate_name():
    tape = Tape()
    tape.variable("x", 1.0)
    with pytest.raises(ValueError):
        tape.variable("x", 2.0)


def test_tape_rejects_foreign_variables():
    a, b = Tape(), Tape()
    x = a.variable("x", np.ones(3))
    with pytest.raises(ValueError):
        b.apply(Total(), x)


def test_backward_needs_scalar():
    tape = Tape()
    x = tape.variable("x", np.ones(3))
    with pytest.raises(ValueError):
        tape.backward(tape.apply(Clamp(2.0), x))


def test_backward_accumulates_and_skips_unused():
    tape = Tape()
    x = tape.variable("x", np.array([0.5, 1.5]))
    tape.variable("unused", np.ones(2))
    t1 = tape.apply(Total(), x)
    t2 = tape.apply(Total(), x)
    out = tape.apply(WeightedSum(2.0, 3.0), t1, t2, name="out")
    grads = tape.backward(out)
    assert_allclose(grads["x"], [5.0, 5.0])
    assert grads["unused"] is None
    assert tape.backward_order[0] == "out"
    assert tape.backward_order[-1] == "x"


def test_clamp_gradient(rng):
    f = rng.uniform(-1.0, 2.0, 20)
    _check_op_gradient(Clamp(1.0), [f], rng)
    out = Clamp(1.0).forward(f)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_clamp_releases_bound_inwards():
    f = np.array([0.0, 0.5, 1.0, 1.0, 0.0])
    grad = np.array([-2.0, 3.0, 4.0, -5.0, 6.0])
    (g,) = Clamp(1.0).backward(grad, Clamp(1.0).forward(f), f)
    # bound bins keep only gradients whose descent step points into (0, 1)
    assert_allclose(g, [-2.0, 3.0, 4.0, 0.0, 0.0])


def test_exp_gradient(rng):
    _check_op_gradient(Exp(), [rng.uniform(-2.0, 1.0, 12)], rng)
    assert_allclose(Exp().forward(np.log([0.5, 2.0])), [0.5, 2.0])


def test_convolve_gradient(rng):
    kernel = make_gaussian_irf(1.5, 16).values
    _check_op_gradient(CircularConvolve(kernel), [rng.random(16)], rng)


def test_divide_gradient(rng):
    _check_op_gradient(Divide(), [rng.random(8), 3.7], rng)


@pytest.mark.parametrize("phi_sig, total", [(10.0, 4.0), (10.0, 12.0), (None, 4.0)])
def test_delivered_fraction_gradient(rng, phi_sig, total):
    op = DeliveredFraction(phi_sig)
    _check_op_gradient(op, [total], rng)
    if phi_sig is None:
        assert op.forward(total) == 1.0


def test_shift_gradient(rng):
    op = ShiftBatch([0.0, 3.25, 15.9, -2.5], 16)
    q = rng.random(16)
    _check_op_gradient(op, [q], rng)
    out = op.forward(q)
    assert_allclose(out[0], q)
    assert_allclose(out.sum(axis=1), q.sum())


def test_incident_gradient(rng):
    op = Incident([100.0, 500.0], [50.0, 10.0])
    _check_op_gradient(op, [rng.random((2, 8)), 0.8], rng)


def test_noise_gradient(rng):
    eps = rng.standard_normal((3, 8))
    _check_op_gradient(GaussianNoise(eps), [rng.random((3, 8)) + 0.5], rng)


def test_noise_moments(rng):
    draws = 10000
    r = np.array([0.5, 5.0, 50.0, 500.0])
    y = GaussianNoise(rng.standard_normal((draws, r.size))).forward(np.tile(r, (draws, 1)))
    assert np.all(np.abs(y.mean(axis=0) - r) < 5 * np.sqrt(r / draws))
    assert np.all(np.abs(y.var(axis=0, ddof=1) - r) < 5 * r * np.sqrt(2.0 / (draws - 1)))


def test_encode_gradient(rng):
    _check_op_gradient(Encode(), [rng.random((3, 8)), rng.standard_normal((2, 8))], rng)


def test_template_gradient(rng):
    q = rng.random(8)
    _check_op_gradient(Template(), [rng.standard_normal((3, 8)), q / q.sum()], rng)


@pytest.mark.parametrize("axis, shape", [(0, (4, 8)), (-1, (5, 4))])
def test_normalise_gradient(rng, axis, shape):
    x = rng.standard_normal(shape)
    _check_op_gradient(ZeroMeanUnitNorm(axis), [x], rng)
    out = ZeroMeanUnitNorm(axis).forward(x)
    assert_allclose(out.mean(axis=axis), 0.0, atol=1e-12)
    assert_allclose(np.linalg.norm(out, axis=axis), 1.0)


def test_normalise_zero_variance():
    out = ZeroMeanUnitNorm(-1).forward(np.ones((2, 4)))
    assert_allclose(out, 0.0)


def test_scores_gradient(rng):
    _check_op_gradient(Scores(), [rng.standard_normal((3, 4)), rng.standard_normal((4, 8))], rng)


def test_scores_degenerate_columns():
    dn = np.ones((2, 3))
    dn[:, 1] = 0.0
    scores = Scores().forward(np.ones((1, 2)), dn)
    assert np.isneginf(scores[0, 1])
    grads = Scores().backward(np.ones((1, 3)), scores, np.ones((1, 2)), dn)
    assert np.all(np.isfinite(grads[0])) and np.all(np.isfinite(grads[1]))


def test_softargmax_gradient(rng):
    _check_op_gradient(Softargmax(2.0), [rng.standard_normal((4, 16))], rng)


def test_circular_l1_gradient(rng):
    target = np.array([1.0, 30.0, 60.0])
    estimate = np.array([5.3, 2.2, 40.1])
    _check_op_gradient(CircularL1(target, 64), [estimate], rng)


def test_tv_gradient(rng):
    _check_op_gradient(TotalVariation(), [rng.standard_normal((3, 10))], rng)
