import json
import os

import numpy as np
import pytest

from ringlab import cli

BASE_CONFIG = """\
[grid]
nr = 64
nz = 96
r_max = 4.0
z_min = -3.0
z_max = 3.0

[rings]
ring1 = kappa=1.0 r0=1.0 z0=0.0 eps=0.25

[time]
t_end = 0.02
snapshot_times = 0.01 0.02

[solver]
velocity_refresh = 4
record_every = 10
"""


def write_config(tmp_path, text=BASE_CONFIG, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def latest_manifest(out_dir):
    runs = sorted(os.listdir(out_dir))
    return os.path.join(out_dir, runs[-1], "manifest.json")


class TestSimulate:
    def test_minimal_run(self, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "runs")
        assert cli.main(["simulate", "--config", cfg, "--out", out]) == 0
        mani = json.load(open(latest_manifest(out)))
        assert mani["status"] == "ok"
        assert len(mani["snapshots"]) == 3  # t = 0, 0.01, 0.02
        assert mani["audits"]["min_eta"] >= 0.0
        run_dir = os.path.dirname(latest_manifest(out))
        assert os.path.exists(os.path.join(run_dir, "diagnostics.csv"))
        for entry in mani["snapshots"]:
            assert os.path.exists(os.path.join(run_dir, entry["path"]))

    def test_t_end_zero_single_snapshot(self, tmp_path):
        text = BASE_CONFIG.replace("t_end = 0.02", "t_end = 0.0")
        text = text.replace("snapshot_times = 0.01 0.02",
                            "snapshot_times =")
        cfg = write_config(tmp_path, text)
        out = str(tmp_path / "runs")
        assert cli.main(["simulate", "--config", cfg, "--out", out]) == 0
        mani = json.load(open(latest_manifest(out)))
        assert [s["t"] for s in mani["snapshots"]] == [0.0]

    def test_mixed_sign_rings_rejected_at_parse(self, tmp_path, capsys):
        text = BASE_CONFIG.replace(
            "ring1 = kappa=1.0 r0=1.0 z0=0.0 eps=0.25",
            "ring1 = kappa=1.0 r0=1.0 z0=-0.5 eps=0.2\n"
            "ring2 = kappa=-1.0 r0=1.5 z0=0.5 eps=0.2",
        )
        cfg = write_config(tmp_path, text)
        assert cli.main(["simulate", "--config", cfg,
                         "--out", str(tmp_path / "runs")]) == 2

    def test_invalid_config_field(self, tmp_path):
        cfg = write_config(tmp_path,
                           BASE_CONFIG.replace("nr = 64", "nr = banana"))
        assert cli.main(["simulate", "--config", cfg,
                         "--out", str(tmp_path / "runs")]) == 2

    def test_missing_config(self, tmp_path):
        assert cli.main(["simulate", "--config",
                         str(tmp_path / "nope.ini"),
                         "--out", str(tmp_path / "runs")]) == 2

    def test_determinism_bitwise(self, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "runs")
        assert cli.main(["simulate", "--config", cfg, "--out", out]) == 0
        first = latest_manifest(out)
        d1 = open(os.path.join(os.path.dirname(first),
                               "diagnostics.csv"), "rb").read()
        assert cli.main(["simulate", "--config", cfg, "--out", out]) == 0
        second = latest_manifest(out)
        assert os.path.dirname(first) != os.path.dirname(second)
        d2 = open(os.path.join(os.path.dirname(second),
                               "diagnostics.csv"), "rb").read()
        assert d1 == d2


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("verify")
    cfg = write_config(tmp)
    out = str(tmp / "runs")
    assert cli.main(["simulate", "--config", cfg, "--out", out]) == 0
    return latest_manifest(out)


class TestVerify:
    def test_interpolation_suite_passes(self, run_dir):
        assert cli.main(["verify", "--manifest", run_dir,
                         "--suite", "interpolation"]) == 0
        run = os.path.dirname(run_dir)
        reports = [f for f in os.listdir(run)
                   if f.startswith("reports_interpolation")]
        assert reports
        rows = [json.loads(line) for line in
                open(os.path.join(run, sorted(reports)[-1]))]
        assert all(r["pass"] for r in rows)
        assert max(r["ratio"] for r in rows) <= 1.0 + 1e-6

    def test_velocity_suite_passes(self, run_dir):
        assert cli.main(["verify", "--manifest", run_dir,
                         "--suite", "velocity"]) == 0

    def test_attainment_suite_passes(self, run_dir):
        assert cli.main(["verify", "--manifest", run_dir,
                         "--suite", "attainment"]) == 0

    def test_missing_snapshot_io_error(self, run_dir, tmp_path):
        mani = json.load(open(run_dir))
        mani["snapshots"][0]["path"] = "does_not_exist.bin"
        bad = tmp_path / "manifest.json"
        bad.write_text(json.dumps(mani))
        assert cli.main(["verify", "--manifest", str(bad),
                         "--suite", "interpolation"]) == 2

    def test_corrupt_snapshot_header(self, run_dir, tmp_path):
        import shutil

        src = os.path.dirname(run_dir)
        dst = tmp_path / "copy"
        shutil.copytree(src, dst)
        mani = json.load(open(run_dir))
        snap = os.path.join(dst, mani["snapshots"][0]["path"])
        data = open(snap, "rb").read()
        open(snap, "wb").write(b"\x00" * 7)
        assert cli.main(["verify", "--manifest",
                         str(dst / "manifest.json"),
                         "--suite", "interpolation"]) == 2
        open(snap, "wb").write(data)


class TestSweep:
    def test_two_point_sweep(self, tmp_path):
        text = BASE_CONFIG + (
            "\n[sweep]\nkappa = 0.5 1.0\neps = 0.25\n"
            "grids = 64,96,4.0,-3.0,3.0\n"
        )
        cfg = write_config(tmp_path, text, "sweep.ini")
        out = str(tmp_path / "sweeps")
        assert cli.main(["sweep", "--config", cfg, "--out", out,
                         "--jobs", "1"]) == 0
        summaries = [f for f in os.listdir(out)
                     if f.startswith("sweep_summary")]
        assert summaries
        data = json.load(open(os.path.join(out, summaries[0])))
        rows = data["points"]
        assert len(rows) == 2
        assert all(r["exit"] == 0 for r in rows)
        assert all(r["nash_envelope"] is not None for r in rows)
        fits = data["aggregates"]["kappa_linearity"]
        assert fits and np.isfinite(fits[0]["kappa_fit_slope"])
        env_csv = [f for f in os.listdir(out)
                   if f.startswith("sweep_envelopes")]
        assert env_csv
        lines = open(os.path.join(out, env_csv[0])).read().strip().split("\n")
        assert lines[0] == "kappa,eps,nr,nz,exit,nash_envelope"
        assert len(lines) == 3

    def test_empty_lists_usage_error(self, tmp_path):
        text = BASE_CONFIG + "\n[sweep]\nkappa =\neps = 0.25\ngrids =\n"
        cfg = write_config(tmp_path, text, "sweep.ini")
        assert cli.main(["sweep", "--config", cfg,
                         "--out", str(tmp_path / "s")]) == 2

    def test_missing_section(self, tmp_path):
        cfg = write_config(tmp_path)
        assert cli.main(["sweep", "--config", cfg,
                         "--out", str(tmp_path / "s")]) == 2


class TestKernelTable:
    def test_csv_output(self, tmp_path):
        out = tmp_path / "table.csv"
        assert cli.main(["kernel-table", "--lo", "1e-4", "--hi", "1e4",
                         "--count", "50", "--out", str(out)]) == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "s,F,Fprime,regime,estimated_error"
        assert len(lines) == 51
        F = [float(line.split(",")[1]) for line in lines[1:]]
        assert all(a > b for a, b in zip(F, F[1:]))
        regimes = {line.split(",")[3] for line in lines[1:]}
        assert regimes & {"small-quad", "quad", "asym"}

    def test_single_row(self, tmp_path):
        out = tmp_path / "one.csv"
        assert cli.main(["kernel-table", "--lo", "0.5", "--hi", "0.5",
                         "--count", "1", "--out", str(out)]) == 0
        assert len(out.read_text().strip().split("\n")) == 2

    def test_negative_lower_bound(self, tmp_path):
        assert cli.main(["kernel-table", "--lo", "-1", "--hi", "1",
                         "--count", "5"]) == 2
