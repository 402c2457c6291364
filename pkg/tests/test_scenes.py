import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from pyspc import io
from pyspc.config import read_config
from pyspc.core import InvalidParameterError
from pyspc.evaluation import SweepConfig, run_sweep, trial_depths
from pyspc.scenes import (
    PGM_MAXVAL,
    DepthMap,
    TransientCube,
    decode_cube,
    export_maps,
    ingest_cube,
    load_cube,
    load_cube_h5,
    make_preset,
    read_map_csv,
    read_pgm,
    save_cube,
    save_cube_h5,
    synth_cube,
    write_pgm,
)
from helpers import assert_depths_close
from fixtures import fourier_scheme, rng, small_irf


def test_presets():
    depth, albedo = make_preset("staircase", size=64, n=1024)
    assert depth.shape == (64, 64)
    assert_array_equal(albedo, 1.0)
    assert depth[0, 0] == pytest.approx(102.4)
    assert depth[0, -1] == pytest.approx(1024 * (0.1 + 0.8 * 7 / 8))
    assert len(np.unique(depth)) == 8
    ramp, _ = make_preset("ramp", size=16, n=64)
    assert ramp[0, 0] == pytest.approx(6.4)
    assert ramp[3, -1] == pytest.approx(57.6)
    plane, _ = make_preset("plane", size=4, n=64)
    assert_array_equal(plane, 32.0)
    with pytest.raises(InvalidParameterError):
        make_preset("sphere")


def test_transient_cube_validation():
    with pytest.raises(InvalidParameterError):
        TransientCube(np.ones((4, 8)))
    with pytest.raises(InvalidParameterError):
        TransientCube(-np.ones((1, 1, 8)))
    with pytest.raises(InvalidParameterError):
        TransientCube(np.full((1, 1, 8), np.nan))
    data = np.ones((2, 2, 8))
    data[1, 1] = 0.0
    cube = TransientCube(data)
    assert cube.n_invalid == 1
    assert cube.dims == (2, 2, 8)
    assert data.flags.writeable


def test_synth_cube_photon_budget(fourier_scheme):
    depth, albedo = make_preset("staircase", size=4, n=64)
    albedo[0, 0] = 0.0
    albedo[1, 1] = 0.5
    cube = synth_cube(depth, albedo, fourier_scheme.illumination, 1000.0, 2.0)
    totals = cube.data.sum(axis=-1)
    assert_allclose(totals, albedo * 1000.0 + 500.0, rtol=1e-9)
    # Zero albedo leaves only the uniform background.
    assert_allclose(cube.data[0, 0], 500.0 / 64)
    assert cube.n_invalid == 0


def test_synth_cube_invalid(fourier_scheme):
    with pytest.raises(InvalidParameterError):
        synth_cube(np.zeros((2, 2)), np.ones((3, 3)), fourier_scheme.illumination, 100.0, 1.0)
    with pytest.raises(InvalidParameterError):
        synth_cube(
            np.full((2, 2), np.nan), np.ones((2, 2)), fourier_scheme.illumination, 100.0, 1.0
        )


@pytest.mark.parametrize("normalisation", ["pixel", "scene"])
def test_ingest_cube(small_irf, normalisation):
    transients = np.zeros((1, 3, 64))
    transients[0, 0, 10] = 2.0
    transients[0, 1, 30] = 1.0
    cube = ingest_cube(transients, small_irf.values, 1000.0, 4.0, normalisation=normalisation)
    assert_array_equal(cube.valid, [[True, True, False]])
    signal = cube.data.sum(axis=-1) - 250.0
    if normalisation == "pixel":
        assert_allclose(signal, [[1000.0, 1000.0, 0.0]], atol=1e-9)
    else:
        assert_allclose(signal, [[1000.0, 500.0, 0.0]], atol=1e-9)
    assert np.argmax(cube.data[0, 0]) == 10


def test_ingest_cube_invalid(small_irf):
    with pytest.raises(InvalidParameterError):
        ingest_cube(np.ones((2, 2, 64)), small_irf.values, 1000.0, 1.0, normalisation="max")
    with pytest.raises(InvalidParameterError):
        ingest_cube(np.ones((2, 2, 32)), small_irf.values, 1000.0, 1.0)


def test_decode_noiseless_cube(fourier_scheme):
    depth, albedo = make_preset("staircase", size=8, n=64)
    cube = synth_cube(depth, albedo, fourier_scheme.illumination, 1000.0, 5.0)
    result = decode_cube(cube, fourier_scheme, truth=depth, noise="none")
    assert_depths_close(result.depth_map.values, depth, 64, atol=1.0)
    assert result.n_invalid == 0
    assert result.mae <= 1.0
    assert result.rmse >= result.mae
    assert set(result.summary()) == {"mae", "rmse", "n_invalid", "n_ambiguous"}


def test_decode_cube_matches_sweep_cell(fourier_scheme):
    phi, sbr, seed = 300.0, 2.0, 4
    config = SweepConfig([fourier_scheme], [phi], [sbr], trials=36, seed=seed, noise="none")
    cell = run_sweep(config).rows[0]
    depth = trial_depths(seed, 0, 36, fourier_scheme.n).reshape(6, 6)
    cube = synth_cube(depth, np.ones((6, 6)), fourier_scheme.illumination, phi, sbr)
    result = decode_cube(cube, fourier_scheme, truth=depth, noise="none")
    assert result.n_ambiguous == 0
    assert result.mae == pytest.approx(cell["mae"], rel=1e-12)
    assert result.rmse == pytest.approx(cell["rmse"], rel=1e-12)


def test_decode_cube_thread_invariant(fourier_scheme):
    depth, albedo = make_preset("ramp", size=6, n=64)
    cube = synth_cube(depth, albedo, fourier_scheme.illumination, 200.0, 1.0)
    one = decode_cube(cube, fourier_scheme, seed=9, truth=depth, threads=1)
    four = decode_cube(cube, fourier_scheme, seed=9, truth=depth, threads=4)
    assert_array_equal(one.depth_map.values, four.depth_map.values)
    assert one.mae == four.mae


def test_decode_cube_invalid_pixels(fourier_scheme, small_irf):
    transients = np.zeros((2, 2, 64))
    transients[0, 0, 20] = transients[0, 1, 40] = transients[1, 0, 5] = 1.0
    cube = ingest_cube(transients, small_irf.values, 1000.0, 5.0)
    truth = np.array([[20.0, 40.0], [5.0, 0.0]])
    result = decode_cube(cube, fourier_scheme, truth=truth, noise="none")
    assert np.isnan(result.depth_map.values[1, 1])
    assert np.isnan(result.error_map[1, 1])
    assert result.n_invalid == 1
    assert_depths_close(result.depth_map.values[0], [20.0, 40.0], 64)
    assert np.isfinite(result.mae)


def test_decode_cube_mismatch(fourier_scheme):
    with pytest.raises(InvalidParameterError):
        decode_cube(TransientCube(np.ones((1, 1, 32))), fourier_scheme)
    cube = TransientCube(np.ones((2, 2, 64)))
    with pytest.raises(InvalidParameterError):
        decode_cube(cube, fourier_scheme, truth=np.zeros((3, 3)))


def test_pgm_round_trip(tmp_path):
    values = np.array([[0.0, 1.0], [np.nan, 4.0]])
    path = tmp_path / "map.pgm"
    lo, hi = write_pgm(path, values)
    assert (lo, hi) == (0.0, 4.0)
    assert path.read_bytes().startswith(b"P5\n2 2\n65535\n")
    levels, maxval = read_pgm(path)
    assert maxval == PGM_MAXVAL
    assert_array_equal(levels, [[0, 16384], [0, 65535]])


def test_read_pgm_bad_magic(tmp_path):
    path = tmp_path / "map.pgm"
    path.write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(io.FormatError):
        read_pgm(path)


def test_export_maps(tmp_path):
    depth = DepthMap(np.array([[1.0, 2.0], [np.nan, 3.0]]))
    error = np.array([[0.5, 0.0], [np.nan, 1.0]])
    written = export_maps(depth, error, tmp_path / "out" / "scene")
    assert len(written) == 6
    assert all(p.startswith(str(tmp_path / "out" / "scene_")) for p in written)
    sidecar = read_config(tmp_path / "out" / "scene_depth.txt")
    assert sidecar["min"] == 1.0 and sidecar["max"] == 3.0
    assert sidecar["maxval"] == PGM_MAXVAL
    loaded = read_map_csv(tmp_path / "out" / "scene_depth.csv")
    assert_array_equal(loaded, depth.values)
    depth_only = export_maps(depth, None, tmp_path / "plain")
    assert len(depth_only) == 3


def test_cube_storage(tmp_path, rng):
    data = rng.random((3, 4, 16))
    data[2, 3] = 0.0
    valid = np.ones((3, 4), dtype=bool)
    valid[0, 0] = False
    cube = TransientCube(data, bin_size_ps=8.0, valid=valid)

    save_cube(cube, tmp_path / "c.spcc")
    loaded = load_cube(tmp_path / "c.spcc")
    assert_array_equal(loaded.data, data)
    assert loaded.bin_size_ps == 8.0
    # The binary format carries no mask; all-zero pixels are invalid again.
    assert loaded.n_invalid == 1

    save_cube_h5(cube, tmp_path / "c.h5")
    loaded = load_cube_h5(tmp_path / "c.h5")
    assert_array_equal(loaded.data, data)
    assert_array_equal(loaded.valid, valid)
    assert loaded.bin_size_ps == 8.0
