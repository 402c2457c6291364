import argparse

import numpy as np
import pandas
import pytest
from numpy.testing import assert_array_equal

from pyspc.cli import EXIT_OK, EXIT_USAGE, _resolve_schemes, main
from pyspc.codes import load_matrix, truncated_fourier
from pyspc.core import circular_convolve, make_gaussian_irf
from pyspc.optimisation import OptConfig, OptimizedBundle, save_bundle
from pyspc.scenes import read_map_csv

SMALL_SWEEP = ["--n", "64", "--k", "4", "--sigma", "1", "--trials", "10"]


@pytest.mark.parametrize(
    "command",
    [
        ["gen-codes"],
        ["optimize"],
        ["eval"],
        ["scene", "synth"],
        ["scene", "decode"],
        ["quantize"],
    ],
)
def test_help(command, capsys):
    assert main(command + ["--help"]) == EXIT_OK
    assert "usage: pyspc" in capsys.readouterr().out


def test_version(capsys):
    assert main(["--version"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("pyspc ")


def test_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["gen-codes", "--scheme", "hadamard", "--out", "x"]) == EXIT_USAGE
    assert main(["-v", "-q", "gen-codes", "--scheme", "fourier", "--out", "x"]) == EXIT_USAGE


def test_gen_codes(tmp_path, capsys):
    out = tmp_path / "fourier.spcm"
    csv = tmp_path / "fourier.csv"
    args = ["gen-codes", "--scheme", "fourier", "--k", "8", "--n", "64"]
    assert main(args + ["--out", str(out), "--csv", str(csv)]) == EXIT_OK
    assert_array_equal(load_matrix(out).rows, truncated_fourier(8, 64).rows)
    assert pandas.read_csv(csv, index_col=0).shape == (64, 8)
    assert "K=8 N=64" in capsys.readouterr().out


def test_gen_codes_odd_k(tmp_path):
    out = tmp_path / "fourier.spcm"
    args = ["gen-codes", "--scheme", "fourier", "--k", "7", "--n", "64", "--out", str(out)]
    assert main(args) == EXIT_USAGE
    assert not out.exists()


def test_eval_missing_scheme(tmp_path):
    args = ["eval", "--schemes", str(tmp_path / "nope")] + SMALL_SWEEP
    assert main(args + ["--out", str(tmp_path / "out")]) == EXIT_USAGE


def test_eval_is_reproducible(tmp_path, capsys):
    outputs = []
    for name, threads in [("a", "1"), ("b", "3")]:
        out = tmp_path / name
        args = ["--threads", threads, "eval", "--schemes", "fourier", "frh"] + SMALL_SWEEP
        assert main(args + ["--phi-grid", "100", "1000", "--out", str(out)]) == EXIT_OK
        outputs.append(out)
    a, b = outputs
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    assert (a / "sweep.svg").read_bytes() == (b / "sweep.svg").read_bytes()
    df = pandas.read_csv(a / "sweep.csv")
    assert list(df["scheme"]) == ["fourier", "fourier", "frh", "frh"]
    assert "mae" in capsys.readouterr().out


def test_config_defaults(tmp_path):
    config = tmp_path / "pyspc.cfg"
    config.write_text("# sweep defaults\ntrials = 3\nphi_grid = 500,\nunknown = 1\n")
    base = ["--config", str(config), "eval", "--schemes", "coarse", "--n", "64", "--k", "4"]
    assert main(base + ["--out", str(tmp_path / "cfg")]) == EXIT_OK
    df = pandas.read_csv(tmp_path / "cfg" / "sweep.csv")
    assert list(df["trials"]) == [3]
    assert list(df["phi"]) == [500.0]
    # Explicit flags win over the configuration file.
    assert main(base + ["--trials", "4", "--out", str(tmp_path / "flag")]) == EXIT_OK
    assert list(pandas.read_csv(tmp_path / "flag" / "sweep.csv")["trials"]) == [4]


def test_bad_config(tmp_path):
    config = tmp_path / "bad.cfg"
    config.write_text("trials 3\n")
    args = ["--config", str(config), "eval", "--out", str(tmp_path)]
    assert main(args) == EXIT_USAGE
    assert main(["--config", str(tmp_path / "missing.cfg"), "eval", "--out", "x"]) == EXIT_USAGE


def test_scene_round_trip(tmp_path, capsys):
    cube = tmp_path / "scene.h5"
    synth = ["scene", "synth", "--preset", "ramp", "--size", "4", "--n", "64", "--k", "4"]
    assert main(synth + ["--phi-sig", "1000", "--sbr", "5", "--out", str(cube)]) == EXIT_OK
    truth = tmp_path / "scene_truth.csv"
    assert read_map_csv(truth).shape == (4, 4)

    decode = ["scene", "decode", "--cube", str(cube), "--truth", str(truth), "--k", "4"]
    for prefix in ("first", "second"):
        assert main(decode + ["--out", str(tmp_path / "maps" / prefix)]) == EXIT_OK
    for suffix in ("depth.pgm", "depth.csv", "depth.txt", "error.pgm", "error.csv"):
        first = (tmp_path / "maps" / f"first_{suffix}").read_bytes()
        assert first == (tmp_path / "maps" / f"second_{suffix}").read_bytes()
    assert "mae:" in capsys.readouterr().out


def test_scene_decode_missing_cube(tmp_path):
    args = ["scene", "decode", "--cube", str(tmp_path / "none.spcc"), "--out", str(tmp_path)]
    assert main(args) == EXIT_USAGE


def test_quantize(tmp_path):
    matrix = tmp_path / "fourier.spcm"
    args = ["gen-codes", "--scheme", "fourier", "--k", "4", "--n", "64", "--out", str(matrix)]
    assert main(args) == EXIT_OK
    out = tmp_path / "budget.csv"
    quantize = ["quantize", "--matrix", str(matrix), "--trials", "10", "--out", str(out)]
    assert main(quantize + ["--bits", "2,64", "--coeffs", "1"]) == EXIT_OK
    df = pandas.read_csv(out)
    assert list(df["compression"]) == ["bits", "bits", "fourier"]
    assert (tmp_path / "budget.svg").exists()
    assert main(quantize) == EXIT_USAGE


def test_optimize_and_evaluate_bundle(tmp_path, capsys):
    bundle = tmp_path / "learned"
    args = "optimize --n 64 --k 4 --sigma 2 --epochs 1 --labels 16 --batch-size 8".split()
    args += ["--out", str(bundle)]
    assert main(args) == EXIT_OK
    assert "Constraints OK" in capsys.readouterr().out
    assert (bundle / "config.txt").exists()
    args = ["eval", "--schemes", str(bundle), "fourier"] + SMALL_SWEEP
    assert main(args + ["--out", str(tmp_path / "eval")]) == EXIT_OK
    df = pandas.read_csv(tmp_path / "eval" / "sweep.csv")
    assert set(df["scheme"]) == {"learned", "fourier"}
    assert np.all(np.isfinite(df["mae"]))


def test_profile(tmp_path):
    profile = tmp_path / "profile.csv"
    out = tmp_path / "d.spcm"
    args = ["--profile", str(profile), "gen-codes", "--scheme", "gray", "--k", "4", "--n", "64"]
    assert main(args + ["--out", str(out)]) == EXIT_OK
    df = pandas.read_csv(profile)
    assert list(df["phase"]) == ["generate"]
    assert list(df["command"]) == ["gen-codes"]


def test_gen_codes_identity_warns_about_size(tmp_path, capsys):
    out = tmp_path / "identity.spcm"
    args = ["gen-codes", "--scheme", "identity", "--n", "1024", "--out", str(out)]
    assert main(args) == EXIT_OK
    assert load_matrix(out).k == 1024
    captured = capsys.readouterr()
    assert "WARNING" in captured.err
    assert "1024 x 1024 identity coding matrix" in captured.err


def test_pulsed_mode_follows_bundle_energy_mode(tmp_path):
    irf = make_gaussian_irf(2.0, 64)
    config = OptConfig(
        n=64, k=4, irf=irf, p_factor=0.05, phi_sig_train=1000.0, energy_mode="constant"
    )
    f = np.full(64, 10.0)
    bundle = OptimizedBundle(
        f=f, s=circular_convolve(f, irf.values), d=truncated_fourier(4, 64), config=config
    )
    path = save_bundle(bundle, tmp_path / "learned")
    args = argparse.Namespace(k=4, p_factor=0.05, pulsed_mode=None, template_source=None)

    schemes, mode = _resolve_schemes([path, "fourier"], args, irf, 1000.0)
    assert mode == "constant"
    assert [scheme.name for scheme in schemes] == ["learned", "fourier"]
    assert schemes[1].illumination.s.sum() == pytest.approx(1000.0, rel=1e-2)

    args.pulsed_mode = "clip"
    schemes, mode = _resolve_schemes([path, "fourier"], args, irf, 1000.0)
    assert mode == "clip"
    assert schemes[1].illumination.s.sum() < 0.5 * 1000.0

    args.pulsed_mode = None
    _, mode = _resolve_schemes(["fourier"], args, irf, 1000.0)
    assert mode == "clip"
