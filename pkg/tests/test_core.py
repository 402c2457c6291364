import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_equal

from pyspc import io
from pyspc.core import (
    Illumination,
    InvalidParameterError,
    Irf,
    SceneParams,
    circular_convolve,
    circular_correlate,
    clamp_peak,
    detection_prob,
    incident_waveform,
    inf,
    load_irf,
    make_gaussian_irf,
    make_tabulated_irf,
    sample_counts,
    sample_histogram,
    shift_waveform,
)
from pyspc.random import make_rng
from fixtures import rng


def test_gaussian_irf_delta_limit():
    irf = make_gaussian_irf(1e-6, 8)
    assert_allclose(irf.values, [1, 0, 0, 0, 0, 0, 0, 0], atol=1e-12)


def test_gaussian_irf_symmetry():
    irf = make_gaussian_irf(1.0, 1024)
    assert np.argmax(irf.values) == 0
    assert irf.values[1] == pytest.approx(irf.values[-1], rel=1e-12)


def test_gaussian_irf_wide():
    sigma = 30.0
    irf = make_gaussian_irf(sigma, 1024)
    assert irf.values.sum() == pytest.approx(1.0, abs=1e-9)
    # FWHM from the centred profile
    centred = np.roll(irf.values, 512)
    above = np.flatnonzero(centred >= centred.max() / 2)
    fwhm = above[-1] - above[0] + 1
    assert abs(fwhm - 2.355 * sigma) <= 1.5


@pytest.mark.parametrize("sigma, n", [(0.0, 64), (-1.0, 64), (1.0, 4)])
def test_gaussian_irf_invalid(sigma, n):
    with pytest.raises(InvalidParameterError):
        make_gaussian_irf(sigma, n)


def test_irf_values_are_readonly():
    irf = make_gaussian_irf(2.0, 64)
    with pytest.raises(ValueError):
        irf.values[0] = 1.0


def test_tabulated_irf_clips_negatives():
    irf = make_tabulated_irf([0.0, 2.0, -0.1, 2.0], label="measured")
    assert_allclose(irf.values, [0, 0.5, 0, 0.5])
    assert irf.kind == "tabulated"
    assert "measured" in repr(irf)


def test_irf_rejects_zero():
    with pytest.raises(InvalidParameterError):
        Irf(np.zeros(8))


@pytest.mark.parametrize("suffix", [".csv", ".spcv"])
def test_load_irf(tmp_path, suffix):
    values = np.array([0.0, 1.0, 3.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    path = tmp_path / f"irf{suffix}"
    if suffix == ".csv":
        io.write_vector_csv(path, values, bin_size_ps=8.0)
    else:
        io.write_vector(path, values, bin_size_ps=8.0)
    irf = load_irf(path)
    assert_allclose(irf.values, values / 5.0)
    assert irf.bin_size_ps == 8.0
    assert irf.source_label == f"irf{suffix}"


def test_circular_convolve_example():
    assert_allclose(circular_convolve([1, 2, 0, 0], [1, 1, 0, 0]), [1, 3, 2, 0], atol=1e-12)


def test_circular_convolve_delta():
    h = make_gaussian_irf(3.0, 64).values
    delta = np.zeros(64)
    delta[0] = 1.0
    assert_allclose(circular_convolve(delta, h), h, atol=1e-12)
    delta = np.roll(delta, 5)
    assert_allclose(circular_convolve(delta, h), np.roll(h, 5), atol=1e-12)


def test_circular_convolve_properties(rng):
    a, b, h = rng.random((3, 32))
    assert_allclose(circular_convolve(a, h), circular_convolve(h, a), atol=1e-12)
    assert_allclose(
        circular_convolve(2.0 * a - 3.0 * b, h),
        2.0 * circular_convolve(a, h) - 3.0 * circular_convolve(b, h),
        rtol=1e-9,
        atol=1e-12,
    )
    # Energy conservation for unit-sum kernels.
    assert circular_convolve(a, h / h.sum()).sum() == pytest.approx(a.sum(), rel=1e-12)


def test_circular_convolve_length_mismatch():
    with pytest.raises(InvalidParameterError):
        circular_convolve(np.ones(4), np.ones(5))


def test_circular_correlate_brute_force(rng):
    a, b = rng.random((2, 16))
    expected = [sum(a[j] * b[(j - i) % 16] for j in range(16)) for i in range(16)]
    assert_allclose(circular_correlate(a, b), expected, atol=1e-12)


def test_shift_waveform():
    x = np.array([1.0, 0.0, 0.0, 0.0])
    assert_equal(shift_waveform(x, 1), [0, 1, 0, 0])
    assert_equal(shift_waveform(x, -1), [0, 0, 0, 1])
    assert_allclose(shift_waveform(x, 0.25), [0.75, 0.25, 0, 0])


def test_incident_waveform_delta():
    irf = Irf([1.0, 0.0, 0.0, 0.0])
    illumination = Illumination([1.0, 0.0, 0.0, 0.0], irf, 10.0)
    scene = SceneParams(depth_bin=1, phi_sig=10.0, sbr=2.5)
    assert_allclose(incident_waveform(illumination, scene), [1, 11, 1, 1])


def test_incident_waveform_background_only():
    scene = SceneParams(depth_bin=0, phi_sig=0.0, sbr=1.0, phi_bkg=8.0)
    assert_allclose(incident_waveform(np.array([1.0, 0, 0, 0]), scene), [2, 2, 2, 2])


def test_incident_waveform_gaussian():
    irf = make_gaussian_irf(5.0, 1024)
    scene = SceneParams(depth_bin=300.5, phi_sig=1000.0, sbr=2.0)
    r = incident_waveform(irf.values, scene)
    assert np.argmax(r) in (300, 301)
    assert r.sum() == pytest.approx(1000.0 + 500.0, rel=1e-12)


def test_incident_waveform_zero_shape():
    with pytest.raises(InvalidParameterError):
        incident_waveform(np.zeros(4), SceneParams(0, 1.0))


def test_scene_params_invalid():
    with pytest.raises(InvalidParameterError):
        SceneParams(0, 10.0, sbr=0.0)
    with pytest.raises(InvalidParameterError):
        SceneParams(0, -1.0)


def test_detection_prob():
    assert_allclose(detection_prob([0.0, np.log(2.0)]), [0.0, 0.5])
    assert_allclose(detection_prob([0.1, 1.0, 3.0]), [0.09516, 0.63212, 0.95021], atol=1e-5)
    with pytest.raises(InvalidParameterError):
        detection_prob([-1.0])


@pytest.mark.parametrize("mode", ["poisson", "binomial"])
def test_sample_zero_rate(mode):
    hist = sample_histogram(np.zeros(16), cycles=10, mode=mode, seed=0)
    assert hist.total == 0


def test_sample_poisson_mean():
    counts = sample_counts(np.full(10000, 1000.0), seed=42)
    # Mean of 10000 draws within three standard errors.
    assert abs(counts.mean() - 1000.0) < 3 * np.sqrt(1000.0 / 10000)


def test_sample_binomial_mean():
    cycles, draws = 20, 10000
    r = np.array([0.5, 2.0, 10.0, 40.0])
    counts = sample_counts(np.tile(r, (draws, 1)), cycles=cycles, mode="binomial", seed=5)
    q = detection_prob(r / cycles)
    standard_error = np.sqrt(cycles * q * (1.0 - q) / draws)
    assert np.all(np.abs(counts.mean(axis=0) - cycles * q) < 4 * standard_error)


def test_sample_binomial_saturates():
    hist = sample_histogram(np.full(8, 50.0), cycles=1, mode="binomial", seed=1)
    assert_equal(hist.counts, np.ones(8))


def test_sample_reproducible():
    r = np.linspace(0, 5, 32)
    assert_equal(sample_counts(r, seed=7), sample_counts(r, seed=7))
    assert_equal(sample_counts(r, seed=make_rng(3, 1)), sample_counts(r, seed=make_rng(3, 1)))


def test_sample_invalid_mode():
    with pytest.raises(InvalidParameterError):
        sample_counts(np.ones(4), mode="gaussian")
    with pytest.raises(InvalidParameterError):
        sample_counts(np.ones(4), cycles=0)


def test_clamp_peak():
    assert_allclose(clamp_peak([2.0, 0.5], 1.0), [1.0, 0.5])
    assert_allclose(clamp_peak([2.0, 0.5], inf), [2.0, 0.5])
    assert_allclose(clamp_peak([-1.0, 3.0, 0.2], 0.5), [0.0, 0.5, 0.2])
    with pytest.raises(InvalidParameterError):
        clamp_peak([1.0], 0.0)


def test_illumination_waveform_and_delivery():
    irf = make_gaussian_irf(2.0, 64)
    f = np.full(64, 10.0)
    illumination = Illumination(f, irf, 1000.0, p_factor=0.5)
    assert_allclose(illumination.s, circular_convolve(f, irf.values), atol=1e-12)
    assert illumination.phi_max == 500.0
    assert illumination.delivered_fraction == pytest.approx(0.64)
    assert illumination.delivered_photons(500.0) == pytest.approx(320.0)
    assert illumination.shape.sum() == pytest.approx(1.0)


def test_illumination_peak_violation():
    irf = make_gaussian_irf(2.0, 8)
    with pytest.raises(InvalidParameterError):
        Illumination(np.full(8, 10.0), irf, 100.0, p_factor=0.01)


def test_illumination_prefiltered():
    irf = make_gaussian_irf(2.0, 16)
    pulse = 100.0 * irf.values
    illumination = Illumination(pulse, irf, 100.0, prefiltered=True)
    assert_equal(illumination.s, pulse)
    assert illumination.delivered_fraction == 1.0
