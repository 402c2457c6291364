# -*- coding: utf-8 -*-
import numpy as np
import pytest

from pyspc.core import make_gaussian_irf
from pyspc.codes import truncated_fourier
from pyspc.evaluation import Scheme, make_baseline_schemes
from pyspc.evaluation.pulsed import pulsed_illumination
from pyspc.optimisation import OptConfig


@pytest.fixture()
def small_irf():
    """Narrow Gaussian IRF on a 64 bin grid."""
    return make_gaussian_irf(1.0, 64)


@pytest.fixture()
def irf_1024():
    return make_gaussian_irf(5.0, 1024)


@pytest.fixture()
def fourier_scheme(small_irf):
    """Truncated Fourier K=8 with an unconstrained pulse, N=64."""
    illumination = pulsed_illumination(small_irf, 1000.0)
    return Scheme("fourier", truncated_fourier(8, 64), illumination)


@pytest.fixture()
def baseline_schemes(small_irf):
    return make_baseline_schemes(["fourier", "gray", "coarse", "frh"], 4, 64, small_irf)


@pytest.fixture()
def tiny_config():
    """Small training problem used by the tape and gradient tests."""
    return OptConfig(
        n=64,
        k=4,
        sigma_bins=2.0,
        depth_samples_per_batch=8,
        n_labels=32,
        epochs=2,
        beta_softargmax=5.0,
        seed=3,
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
