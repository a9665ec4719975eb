import csv
import filecmp
from pathlib import Path

import numpy as np
import pytest

from cqbeats.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from cqbeats.clickstream import APD_A, APD_B, ClickStream
from cqbeats.config import preset_path

DATA = Path(__file__).parent / "data"

BASE = """
[system]
g = 1.2
kappa = 3.0
gamma = 6.0
photon_number = 1.0
n_max_v = 2
n_max_h = 2
{system}

[protocol]
feedback = {feedback}
trigger_delay_ns = 325
width_us = 1.0
rearm_deadtime_ns = 0

[detection]
epsilon = 0.3

[run]
seed = 7
n_traj = {n_traj}
duration_us = 5
t_max_us = 1.0
dt_ns = 4
mc_step_ns = 2
output_dir = {out}

[analysis]
bin = 1.64ns
{predict}
"""


def write_cfg(tmp_path, name="run.ini", system="", feedback="off", n_traj=0, predict="", out=None):
    p = tmp_path / name
    p.write_text(BASE.format(system=system, feedback=feedback, n_traj=n_traj, predict=predict,
                             out=out or tmp_path / "out"))
    return p


def read_rows(path):
    with open(path) as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# --- predict --------------------------------------------------------------------------------

def test_predict_without_sweep_gives_one_row(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["predict", "--config", str(cfg)]) == EXIT_OK
    rows = read_rows(tmp_path / "out" / "predictions.csv")
    assert len(rows) == 1
    assert rows[0]["detuning_mhz"] == pytest.approx(0.5)


def test_predict_empty_sweep_gives_one_row(tmp_path):
    cfg = write_cfg(tmp_path, predict="[predict]\nsweep = delta_eff\nvalues =")
    assert main(["predict", "--config", str(cfg)]) == EXIT_OK
    assert len(read_rows(tmp_path / "out" / "predictions.csv")) == 1


def test_predict_detuning_sweep_is_antisymmetric_and_monotone(tmp_path):
    vals = [-1.0, -0.5, -0.25, 0.25, 0.5, 1.0]
    cfg = write_cfg(tmp_path, predict="[predict]\nsweep = delta_eff\nvalues = "
                    + ", ".join(map(str, vals)))
    assert main(["predict", "--config", str(cfg)]) == EXIT_OK
    rows = read_rows(tmp_path / "out" / "predictions.csv")
    jump = np.array([r["delta_jump_mhz"] for r in rows])
    assert np.allclose(jump, -jump[::-1], rtol=1e-9)
    assert np.all(np.diff(jump) > 0) or np.all(np.diff(jump) < 0)
    light = np.array([r["delta_light_mhz"] for r in rows])
    assert np.allclose(light, -light[::-1], rtol=1e-9)


def test_predict_photon_number_range_brackets_measured_light_shift(tmp_path):
    # n = 1 +/- 0.3 at the default 0.5 MHz detuning
    cfg = write_cfg(tmp_path, predict="[predict]\nsweep = photon_number\nvalues = 0.7, 1.0, 1.3")
    assert main(["predict", "--config", str(cfg)]) == EXIT_OK
    light = [r["delta_light_mhz"] for r in read_rows(tmp_path / "out" / "predictions.csv")]
    lo, hi = min(light), max(light)
    # the predicted interval overlaps 0.075 +/- 0.025 MHz and contains its centre
    assert lo <= 0.075 <= hi
    assert lo >= 0.05 - 0.01 and hi <= 0.10 + 0.01


# --- simulate -------------------------------------------------------------------------------

def test_simulate_without_trajectories_writes_curves_only(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["simulate", "--config", str(cfg)]) == EXIT_OK
    out = tmp_path / "out"
    assert (out / "g2_reference.csv").exists()
    assert not (out / "clicks.bin").exists()
    assert not (out / "g2_feedback.csv").exists()


def test_simulate_is_byte_identical_for_a_fixed_seed(tmp_path):
    files = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        cfg = write_cfg(tmp_path, name=f"c{k}.ini", feedback="on", n_traj=6, out=out)
        assert main(["simulate", "--config", str(cfg), "--seed", "99"]) == EXIT_OK
        files.append(out)
    names = ["clicks.bin", "gate_log.csv", "g2_reference.csv", "g2_feedback.csv", "summary.txt"]
    match, mismatch, errors = filecmp.cmpfiles(files[0], files[1], names, shallow=False)
    assert not mismatch and not errors
    # and the seed matters
    out = tmp_path / "o2"
    cfg = write_cfg(tmp_path, name="c2.ini", feedback="on", n_traj=6, out=out)
    main(["simulate", "--config", str(cfg), "--seed", "100"])
    assert (out / "clicks.bin").read_bytes() != (files[0] / "clicks.bin").read_bytes()


def test_dark_window_preset_keeps_coherence_flat_in_the_dark(tmp_path):
    out = tmp_path / "dark_window"
    assert main(["simulate", "--config", str(preset_path("dark_window")), "--out", str(out)]) == EXIT_OK
    summary = dict(line.split(" = ") for line in (out / "summary.txt").read_text().splitlines())
    assert float(summary["dark_coherence_drift"]) < 5e-3
    assert float(summary["dark_precession_mhz"]) == pytest.approx(2.33, rel=0.01)


def test_truncation_overflow_is_a_numerical_failure(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    cfg.write_text(cfg.read_text().replace("n_max_v = 2\nn_max_h = 2", "n_max_v = 1\nn_max_h = 1"))
    assert main(["simulate", "--config", str(cfg)]) == EXIT_NUMERIC
    assert "numerical failure" in capsys.readouterr().err


# --- correlate / analyze ---------------------------------------------------------------------

def test_filter_on_stream_without_gate_copies_fails(tmp_path, capsys):
    s = ClickStream(np.array([0, 10_000, 20_000]), np.array([APD_A, APD_B, APD_A]),
                    np.zeros(3, np.uint8))
    path = tmp_path / "nogates.bin"
    s.write_binary(path)
    assert main(["correlate", str(path), "--filter", "on", "--out", str(tmp_path)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "--filter" in err and "nogates.bin" in err
    assert main(["correlate", str(path), "--filter", "off", "--bin", "1ns", "--t-max", "0.05",
                 "--out", str(tmp_path)]) == EXIT_OK


def test_missing_stream_is_a_usage_error(tmp_path, capsys):
    assert main(["correlate", str(tmp_path / "nope.bin"), "--out", str(tmp_path)]) == EXIT_USAGE
    assert "streams" in capsys.readouterr().err


def _report(path):
    return {k: v for k, v in (ln.split(" = ") for ln in Path(path).read_text().splitlines())}


@pytest.fixture(scope="module")
def fixture_hists(tmp_path_factory):
    out = tmp_path_factory.mktemp("hist")
    rc = main(["correlate", str(DATA / "fixture_reference.bin"), str(DATA / "fixture_feedback.bin"),
               "--bin", "16.4ns", "--out", str(out)])
    assert rc == EXIT_OK
    return out / "fixture_reference_hist.csv", out / "fixture_feedback_hist.csv"


def test_pipeline_matches_golden_report(fixture_hists, tmp_path):
    ref, fb = fixture_hists
    rc = main(["analyze", str(ref), str(fb), "--window", "0.5,4.5", "--purpose", "amplitude",
               "--out", str(tmp_path)])
    assert rc == EXIT_OK
    got, want = _report(tmp_path / "fit_report.txt"), _report(DATA / "golden_fit_report.txt")
    assert got.keys() == want.keys()
    for k, v in want.items():
        try:
            assert float(got[k]) == pytest.approx(float(v), rel=1e-5, abs=1e-9), k
        except ValueError:
            assert got[k] == v


def test_per_start_rates_fit_the_same_beat(fixture_hists, tmp_path):
    ref, fb = fixture_hists
    rc = main(["analyze", str(ref), str(fb), "--window", "0.5,4.5", "--purpose", "amplitude",
               "--per-start", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    got, want = _report(tmp_path / "fit_report.txt"), _report(DATA / "golden_fit_report.txt")
    # both fixture streams share one stop rate, so only the normalization differs
    assert float(got["time_shift_ns"]) == pytest.approx(float(want["time_shift_ns"]), abs=3.0)
    assert float(got["scale"]) == pytest.approx(float(want["scale"]), rel=0.1)


def test_per_start_needs_histograms(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    main(["simulate", "--config", str(cfg)])
    curve = tmp_path / "out" / "g2_reference.csv"
    rc = main(["analyze", str(curve), str(curve), "--window", "0.2,0.9", "--per-start",
               "--out", str(tmp_path)])
    assert rc == EXIT_USAGE
    assert "--per-start" in capsys.readouterr().err


def test_coarse_phase_analysis_warns(fixture_hists, tmp_path, capsys):
    ref, fb = fixture_hists
    rc = main(["analyze", str(ref), str(fb), "--window", "0.5,4.5", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    assert "1.64 ns" in capsys.readouterr().err


def test_incommensurate_rebin_is_rejected(fixture_hists, tmp_path, capsys):
    ref, fb = fixture_hists
    rc = main(["analyze", str(ref), str(fb), "--bin", "20ns", "--window", "0.5,4.5",
               "--out", str(tmp_path)])
    assert rc == EXIT_USAGE
    assert "--bin" in capsys.readouterr().err


def test_analyze_needs_a_window(fixture_hists, tmp_path, capsys):
    ref, fb = fixture_hists
    assert main(["analyze", str(ref), str(fb), "--out", str(tmp_path)]) == EXIT_USAGE
    assert "--window" in capsys.readouterr().err


# --- errors ---------------------------------------------------------------------------------

@pytest.mark.parametrize("edit, key", [
    (("seed = 7\n", ""), "run.seed"),
    (("gamma = 6.0", "gamma = -6.0"), "system.gamma"),
    (("gamma = 6.0", "gamma = six"), "system.gamma"),
    (("width_us = 1.0", "width_us = -1"), "protocol.width_us"),
    (("n_traj = 0", "n_traj = -3"), "run.n_traj"),
    (("epsilon = 0.3", "epsilon = 0.3\nefficiency = 2"), "detection.efficiency"),
    (("[analysis]", "[analysis]\nwindow_us = 3, 1"), "analysis.window_us"),
    (("[analysis]\n", ""), "analysis"),
])
def test_config_errors_name_the_key(tmp_path, capsys, edit, key):
    cfg = write_cfg(tmp_path)
    cfg.write_text(cfg.read_text().replace(*edit))
    assert main(["predict", "--config", str(cfg)]) == EXIT_USAGE
    assert key in capsys.readouterr().err


def test_unknown_sweep_parameter(tmp_path, capsys):
    cfg = write_cfg(tmp_path, predict="[predict]\nsweep = colour\nvalues = 1")
    assert main(["predict", "--config", str(cfg)]) == EXIT_USAGE
    assert "predict.sweep" in capsys.readouterr().err


def test_bad_flags_are_usage_errors(capsys):
    assert main(["predict"]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["correlate", "x.bin", "--window", "2,1"]) == EXIT_USAGE


def test_missing_config_file(tmp_path, capsys):
    assert main(["predict", "--config", str(tmp_path / "none.ini")]) == EXIT_USAGE
    assert "config" in capsys.readouterr().err
