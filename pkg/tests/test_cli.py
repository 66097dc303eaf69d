import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from nbvb import snapshot
from nbvb.cli import main

FAST = ["--knots", "8", "--grid-lo", "0.5", "--grid-hi", "50", "--grid-size", "10",
        "--points", "41"]


def table(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def data(workdir):
    path = workdir / "sim.csv"
    assert main(["simulate", "--scenario", "nonpar_1term", "--n", "400", "--seed", "3",
                 "-o", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def fitted(workdir, data):
    out = workdir / "fit"
    assert main(["fit", "-i", str(data), "-o", str(out), "--spline", "x:8:0:1", *FAST]) == 0
    return out


def test_simulate_writes_header_rows_and_truth(workdir):
    path = workdir / "add.csv"
    assert main(["simulate", "--seed", "5", "-o", str(path)]) == 0
    head, rows = table(path)
    assert head == ["x1", "x2", "y"] and rows.shape == (500, 3)
    assert np.all(rows[:, 2] == np.round(rows[:, 2]))
    first = path.read_bytes()
    assert main(["simulate", "--seed", "5", "-o", str(path)]) == 0
    assert path.read_bytes() == first
    head, truth = table(workdir / "add.truth.csv")
    assert head == ["x", "eta_x1", "eta_x2"]
    assert truth.shape == (201, 3) and truth[0, 0] == 0.0 and truth[-1, 0] == 1.0


def test_fit_outputs(fitted):
    names = {p.name for p in fitted.iterdir()}
    assert {"snapshot.json", "kappa_pmf.csv", "curve_x.csv", "sigma2_x.csv",
            "report.json"} <= names
    report = json.loads((fitted / "report.json").read_text())
    assert report["atoms"] == 10 and len(report["per_atom"]) == 10 and report["n"] == 400
    assert all(e["converged"] for e in report["per_atom"])
    _, pmf = table(fitted / "kappa_pmf.csv")
    assert abs(pmf[:, 1].sum() - 1) < 1e-12
    head, curve = table(fitted / "curve_x.csv")
    assert head[:4] == ["x", "eta_mean", "eta_lower", "eta_upper"]
    assert curve.shape == (41, 8)
    assert np.all(curve[:, 2] <= curve[:, 1]) and np.all(curve[:, 1] <= curve[:, 3])
    assert np.all(curve[:, 5] <= curve[:, 6])
    _, dens = table(fitted / "sigma2_x.csv")
    assert np.all(dens[:, 1] >= 0) and np.all(np.diff(dens[:, 0]) > 0)


def test_summarize_reproduces_fit_tables(workdir, fitted):
    out = workdir / "summ"
    assert main(["summarize", "-s", str(fitted / "snapshot.json"), "-o", str(out),
                 "--points", "41"]) == 0
    for name in ("kappa_pmf.csv", "curve_x.csv", "sigma2_x.csv"):
        assert (out / name).read_bytes() == (fitted / name).read_bytes(), name


def test_lower_level_narrows_intervals(workdir, fitted):
    out = workdir / "narrow"
    assert main(["summarize", "-s", str(fitted / "snapshot.json"), "-o", str(out),
                 "--points", "41", "--level", "0.5"]) == 0
    _, wide = table(fitted / "curve_x.csv")
    _, narrow = table(out / "curve_x.csv")
    assert np.all(narrow[:, 3] - narrow[:, 2] < wide[:, 3] - wide[:, 2])
    assert np.all(narrow[:, 6] - narrow[:, 5] <= wide[:, 6] - wide[:, 5])


def test_unknown_snapshot_version_fails_cleanly(workdir, fitted, capsys):
    d = json.loads((fitted / "snapshot.json").read_text())
    d["version"] = "7"
    bad = workdir / "bad.json"
    bad.write_text(json.dumps(d))
    assert main(["summarize", "-s", str(bad), "-o", str(workdir / "x")]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "SnapshotError" and "version" in err["message"]


def test_fit_rejects_bad_response_with_line_number(workdir, capsys):
    path = workdir / "badresp.csv"
    path.write_text("x1,y\n0.1,2\n0.2,1.5\n")
    assert main(["fit", "-i", str(path), "-o", str(workdir / "o")]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "line 3" in err["message"]


def test_missing_column_is_reported(workdir, data, capsys):
    assert main(["fit", "-i", str(data), "-o", str(workdir / "o"), "--spline", "z"]) == 1
    assert "'z'" in capsys.readouterr().err


def stream_args(data, out, *extra):
    return ["stream", "-i", str(data), "-o", str(out), "--n-warm", "100", "--every", "100",
            "--spline", "x:8:0:1", *FAST, *extra]


@pytest.fixture(scope="module")
def streamed(workdir, data):
    out = workdir / "stream"
    assert main(stream_args(data, out)) == 0
    return out


def test_stream_checkpoints(streamed):
    for n in (100, 200, 300, 400):
        assert (streamed / f"snapshot_{n:07d}.json").exists()
        assert (streamed / f"kappa_pmf_{n:07d}.csv").exists()
        assert (streamed / f"curve_x_{n:07d}.csv").exists()
    state, _ = snapshot.load(streamed / "snapshot_0000400.json")
    assert state.stats.n == 400


def test_stream_warmup_checkpoint_equals_batch_fit_on_prefix(workdir, data, streamed):
    prefix = workdir / "prefix.csv"
    prefix.write_text("".join(data.read_text().splitlines(keepends=True)[:101]))
    out = workdir / "prefix_fit"
    assert main(["fit", "-i", str(prefix), "-o", str(out), "--spline", "x:8:0:1", *FAST]) == 0
    _, a = table(out / "kappa_pmf.csv")
    _, b = table(streamed / "kappa_pmf_0000100.csv")
    np.testing.assert_allclose(a, b, atol=1e-8, rtol=0)
    _, a = table(out / "curve_x.csv")
    _, b = table(streamed / "curve_x_0000100.csv")
    np.testing.assert_allclose(a, b, atol=1e-7, rtol=1e-7)


def test_stream_skips_malformed_lines(workdir, data, streamed, caplog):
    lines = data.read_text().splitlines(keepends=True)
    noisy = workdir / "noisy.csv"
    noisy.write_text("".join(lines[:150] + ["0.5,abc\n", "0.2,-1\n", "\n"] + lines[150:]))
    out = workdir / "noisy_out"
    assert main(stream_args(noisy, out)) == 0
    assert "skipping line 151" in caplog.text and "skipping line 152" in caplog.text
    a = (out / "kappa_pmf_0000400.csv").read_bytes()
    assert a == (streamed / "kappa_pmf_0000400.csv").read_bytes()


def test_stream_strict_aborts(workdir, data, capsys):
    lines = data.read_text().splitlines(keepends=True)
    noisy = workdir / "strict.csv"
    noisy.write_text("".join(lines[:150] + ["0.5,2.5\n"] + lines[150:]))
    assert main(stream_args(noisy, workdir / "strict_out", "--strict")) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "line 151" in err["message"] and "nonnegative integer" in err["message"]


def test_stream_resume_is_bit_identical(workdir, data, streamed):
    lines = data.read_text().splitlines(keepends=True)
    rest = workdir / "rest.csv"
    rest.write_text("".join(lines[:1] + lines[201:]))
    out = workdir / "resumed"
    assert main(["stream", "-i", str(rest), "-o", str(out), "--every", "100", "--points", "41",
                 "--resume", str(streamed / "snapshot_0000200.json")]) == 0
    for name in ("snapshot_0000400.json", "kappa_pmf_0000400.csv", "curve_x_0000400.csv"):
        assert (out / name).read_bytes() == (streamed / name).read_bytes(), name


def test_stream_too_short_for_warmup(workdir, capsys):
    path = workdir / "short.csv"
    path.write_text("x1,y\n0.1,2\n0.2,1\n")
    assert main(["stream", "-i", str(path), "-o", str(workdir / "s")]) == 1
    assert "warm-up" in capsys.readouterr().err


def test_console_entry_reads_stdin(workdir, data, streamed):
    out = workdir / "stdin_out"
    exe = shutil.which("nbvb")
    cmd = [exe] if exe else [sys.executable, "-m", "nbvb"]
    args = stream_args("-", out)[1:]
    res = subprocess.run(cmd + ["stream", *args], input=data.read_text(), text=True,
                         capture_output=True, timeout=300)
    assert res.returncode == 0, res.stderr
    name = "snapshot_0000400.json"
    assert (out / name).read_bytes() == (streamed / name).read_bytes()
