import json
import subprocess
import sys

import numpy as np
import pytest

from ctkit.cli import COMMANDS, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, build_parser, main
from ctkit.io import read_ctr, read_header


def run(*argv):
    return main([str(a) for a in argv])


def test_phantom_writes_ctr(tmp_path):
    assert run("phantom", "--kind", "shepp", "--size", 128, "--out", tmp_path / "p.ctr") == EXIT_OK
    arr = read_ctr(tmp_path / "p.ctr")
    assert arr.shape == (1, 128, 128) and arr.max() == pytest.approx(1.0)
    cfg = json.loads((tmp_path / "run.json").read_text())
    assert cfg["command"] == "phantom" and cfg["seed"] == 0 and cfg["n_ellipses"] == [3, 8]


def test_analytic_pipeline_with_angles_file(tmp_path):
    angles = np.arange(90) * np.pi / 90
    (tmp_path / "a.txt").write_text("\n".join(repr(float(a)) for a in angles) + "\n")
    assert run("phantom", "--size", 64, "--out", tmp_path / "p.ctr") == EXIT_OK
    assert run("project", "--image", tmp_path / "p.ctr", "--angles-file", tmp_path / "a.txt",
               "--out", tmp_path / "s.ctr") == EXIT_OK
    hdr = read_header(tmp_path / "s.ctr")
    assert hdr["image_width"] == "64"
    # drop the sidecar so the angles can only come from the file
    (tmp_path / "s.ctr.hdr").unlink()
    assert run("fbp", "--sino", tmp_path / "s.ctr", "--angles-file", tmp_path / "a.txt", "--size", 64,
               "--out", tmp_path / "r.ctr", "--filter", "ramlak") == EXIT_OK
    recon = read_ctr(tmp_path / "r.ctr")[0]
    phantom = read_ctr(tmp_path / "p.ctr")[0]
    assert np.sqrt(np.mean((recon - phantom) ** 2)) < 0.1


def test_noise_chain_and_sirt(tmp_path):
    run("phantom", "--size", 32, "--out", tmp_path / "p.ctr")
    run("project", "--image", tmp_path / "p.ctr", "--n-angles", 30, "--out", tmp_path / "s.ctr")
    assert run("acquire", "--sino", tmp_path / "s.ctr", "--i0", 1e5, "--seed", 2,
               "--out", tmp_path / "i.ctr") == EXIT_OK
    assert read_header(tmp_path / "i.ctr")["noisy"] == "1"
    assert run("lognorm", "--counts", tmp_path / "i.ctr", "--out", tmp_path / "n.ctr") == EXIT_OK
    assert run("sirt", "--sino", tmp_path / "n.ctr", "--n-iter", 20, "--nonneg",
               "--residual-csv", tmp_path / "res.csv", "--out", tmp_path / "x.ctr") == EXIT_OK
    assert read_ctr(tmp_path / "x.ctr").min() >= 0
    assert len((tmp_path / "res.csv").read_text().splitlines()) == 22
    assert run("export-pgm", "--in", tmp_path / "x.ctr", "--out", tmp_path / "x.pgm") == EXIT_OK
    assert (tmp_path / "x.pgm").read_bytes().startswith(b"P5\n32 32\n65535\n")


def test_estimate_params_output(capsys):
    assert run("estimate-params", "--automap", "--det", 512, "--angles", 128, "--img", 512) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "85899345920"
    assert "343597383680" in lines[1]


def test_training_workflow(tmp_path, capsys):
    ds = tmp_path / "ds"
    assert run("dataset", "--out", ds, "--n-train", 4, "--n-test", 2, "--size", 16, "--n-angles", 6) == EXIT_OK
    assert run("train-denoiser", "--dataset", ds, "--depth", 2, "--epochs", 1, "--batch", 2,
               "--out", tmp_path / "den.ctn", "--log", tmp_path / "den.csv") == EXIT_OK
    assert run("train-e2e", "--dataset", ds, "--img", 8, "--angles", 4, "--det", 12, "--channels", 2,
               "--epochs", 1, "--batch", 2, "--out", tmp_path / "e2e.ctn") == EXIT_OK
    assert run("eval", "--dataset", ds, "--denoiser", tmp_path / "den.ctn", "--e2e", tmp_path / "e2e.ctn",
               "--img", 8, "--angles", 4, "--det", 12, "--channels", 2, "--out", tmp_path / "ev") == EXIT_OK
    assert "end-to-end" in capsys.readouterr().out
    assert (tmp_path / "ev" / "metrics.csv").exists() and (tmp_path / "ev" / "run.json").exists()


def test_e2e_memory_guard_is_runtime_error(tmp_path, capsys):
    run("dataset", "--out", tmp_path, "--n-train", 1, "--n-test", 1, "--size", 16, "--n-angles", 4)
    code = run("train-e2e", "--dataset", tmp_path, "--img", 512, "--angles", 128, "--det", 512,
               "--out", tmp_path / "x.ctn")
    assert code == EXIT_RUNTIME
    assert "guard" in capsys.readouterr().err


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        assert run("phantom", "--bogus", "--out", "x.ctr") == EXIT_USAGE
        assert "usage" in capsys.readouterr().err

    def test_unknown_subcommand(self):
        assert run("reconstruct") == EXIT_USAGE

    def test_missing_input(self, tmp_path, capsys):
        assert run("fbp", "--sino", tmp_path / "none.ctr", "--out", tmp_path / "r.ctr") == EXIT_RUNTIME
        assert "ctkit:" in capsys.readouterr().err

    def test_angle_count_mismatch(self, tmp_path):
        run("phantom", "--size", 16, "--out", tmp_path / "p.ctr")
        run("project", "--image", tmp_path / "p.ctr", "--n-angles", 10, "--out", tmp_path / "s.ctr")
        assert run("fbp", "--sino", tmp_path / "s.ctr", "--n-angles", 12, "--out", tmp_path / "r.ctr") == EXIT_USAGE

    def test_bad_threads(self, tmp_path):
        assert run("--threads", 0, "phantom", "--out", tmp_path / "p.ctr") == EXIT_USAGE


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_help_documents_defaults(command, capsys):
    assert run(command, "--help") == EXIT_OK
    text = capsys.readouterr().out
    sub = build_parser()._subparsers._group_actions[0].choices[command]
    for action in sub._actions:
        if action.option_strings and action.dest != "help":
            assert action.help, f"{command} {action.option_strings} has no help"
            assert action.option_strings[-1] in text


def test_reruns_byte_identical(tmp_path):
    outs = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        d.mkdir()
        run("phantom", "--kind", "ellipses", "--size", 32, "--seed", 7, "--out", d / "p.ctr")
        run("project", "--image", d / "p.ctr", "--n-angles", 20, "--out", d / "s.ctr")
        run("acquire", "--sino", d / "s.ctr", "--i0", 1e3, "--seed", 3, "--out", d / "i.ctr")
        run("lognorm", "--counts", d / "i.ctr", "--out", d / "n.ctr")
        run("fbp", "--sino", d / "n.ctr", "--out", d / "r.ctr")
        run("export-pgm", "--in", d / "r.ctr", "--out", d / "r.pgm")
        outs.append([(d / f).read_bytes() for f in ("p.ctr", "s.ctr", "i.ctr", "n.ctr", "r.ctr", "r.pgm")])
    assert outs[0] == outs[1]


def test_thread_count_does_not_change_output(tmp_path, monkeypatch):
    run("phantom", "--size", 32, "--out", tmp_path / "p.ctr")
    run("project", "--image", tmp_path / "p.ctr", "--n-angles", 20, "--out", tmp_path / "s.ctr")
    run("--threads", 1, "fbp", "--sino", tmp_path / "s.ctr", "--out", tmp_path / "r1.ctr")
    monkeypatch.setenv("CTKIT_THREADS", "2")
    run("fbp", "--sino", tmp_path / "s.ctr", "--out", tmp_path / "r2.ctr")
    assert (tmp_path / "r1.ctr").read_bytes() == (tmp_path / "r2.ctr").read_bytes()


def test_console_module_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ctkit.cli", "estimate-params", "--denoiser"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.splitlines()[0] == "4818"
