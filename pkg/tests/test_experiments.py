import json
import math

import numpy as np
import pytest

from acoustic_grind.audio import SILENT
from acoustic_grind.cli import main
from acoustic_grind.config import ConfigError
from acoustic_grind.encoder import EncoderConfig, PsdFrame, encode_recording
from acoustic_grind.experiments.baseline import PeakTracker, baseline_peak_tracker, fit_calibration
from acoustic_grind.experiments.closed_loop import (
    LoopSettings, Trial, plant_for, read_log, run_trials, step_profile, write_log,
)
from acoustic_grind.experiments.dataset import DatasetSpec, generate_dataset, label_histogram, load_dataset
from acoustic_grind.experiments.metrics import (
    eval_control, eval_estimation, eval_mrr, fixed_point_depth, fixed_point_mrr, line_linearity,
    write_metrics_csv,
)
from acoustic_grind.experiments.settings import ExperimentConfig, load_settings
from acoustic_grind.plant import Workpiece

CFG = EncoderConfig()


def second_order_step(t, zeta, wn):
    wd = wn * math.sqrt(1 - zeta ** 2)
    return 1 - np.exp(-zeta * wn * t) * (np.cos(wd * t) + zeta / math.sqrt(1 - zeta ** 2) * np.sin(wd * t))


def test_estimation_trivial_cases():
    f = np.linspace(1, 5, 100)
    m, pairs = eval_estimation(f, f)
    assert m.rmse == 0.0 and m.outliers == 0 and pairs.shape == (100, 2)
    m, _ = eval_estimation(f, f + 0.3)
    assert m.rmse == pytest.approx(0.3, rel=1e-12) and m.residual_mean == pytest.approx(0.3)
    with pytest.raises(ValueError):
        eval_estimation([], [])
    with pytest.raises(ValueError):
        eval_estimation([1.0, 2.0], [1.0])


def test_estimation_outliers_and_nan_pairs():
    r = np.zeros(1000)
    r[::100] = 0.01
    r[7] = 5.0
    m, pairs = eval_estimation(np.zeros(1001), np.append(r, np.nan))
    assert m.outliers == 1 and len(pairs) == 1000


def test_control_perfect_tracking():
    t = np.linspace(0, 10, 201)
    m = eval_control(t, np.full_like(t, 3.0), 3.0, (5.0, 10.0))
    assert m.sse == 0.0 and m.overshoot == 0.0 and m.steady_std == 0.0


def test_control_second_order_oracle():
    zeta, wn = 0.3, 4.0
    t = np.linspace(0, 20, 20001)
    f = 3.0 * second_order_step(t, zeta, wn)
    m = eval_control(t, f, 3.0, (15.0, 20.0))
    expected = 100 * math.exp(-math.pi * zeta / math.sqrt(1 - zeta ** 2))
    assert abs(m.overshoot - expected) < 1.0
    assert m.sse < 1e-3
    # rise time of the same trace found by brute-force root search on a fine grid
    fine = np.linspace(0, 2, 2_000_001)
    y = second_order_step(fine, zeta, wn)
    t10, t90 = fine[np.argmax(y >= 0.1)], fine[np.argmax(y >= 0.9)]
    assert m.rise_time == pytest.approx(t90 - t10, abs=2e-3)


def test_control_window_checked():
    t = np.linspace(0, 5, 11)
    with pytest.raises(ValueError):
        eval_control(t, np.ones(11), 1.0, (4.0, 6.0))
    with pytest.raises(ValueError):
        eval_control(t, np.ones(11), 1.0, (3.0, 2.0))


def test_mrr_metrics():
    m = eval_mrr([2e-4] * 5)
    assert m.depth_range == 0.0 and m.d_max == m.d_min == 2e-4
    m = eval_mrr([3e-4, 1e-4, 2e-4], Workpiece())
    assert m.depth_range == pytest.approx(2e-4) and len(m.mrr_series) == 3
    wp = Workpiece()
    d = 1.7e-4
    assert fixed_point_depth(fixed_point_mrr(d, wp), wp) == pytest.approx(d, rel=1e-15)
    assert fixed_point_mrr(d, wp) == pytest.approx(1e-3 * 3e-3 * d / 10.0, rel=1e-15)


def test_line_linearity():
    x = np.linspace(0, 0.03, 50)
    assert line_linearity(x, 1e-4 + 2e-3 * x) < 1e-15
    assert line_linearity(x, np.sin(300 * x)) > 0.1


def test_metrics_csv(tmp_path):
    write_metrics_csv({"a": eval_mrr([1e-4, 2e-4])}, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0].startswith("name,rmse") and lines[1].startswith("a,")
    with pytest.raises(ValueError):
        write_metrics_csv({}, tmp_path / "n.csv")


def test_fixed_point_depth_matches_removed_volume(tmp_path):
    base = LoopSettings(noise=SILENT)
    settings = LoopSettings(plant=plant_for(base, wear_enabled=False), noise=SILENT)
    wp = settings.workpiece
    duration = 3.0
    log = run_trials(settings, [Trial(0.4, duration, step_profile(3.0), preroll=1.0)])
    volume = float(np.sum(log.depth_field)) * wp.thickness * wp.grid_resolution
    assert fixed_point_depth(volume / duration, wp, duration) == pytest.approx(
        log.trial_depths[0], rel=1e-6)
    # JSONL log round trip
    back = read_log(write_log(log, tmp_path / "run"))
    assert back.records == json.loads(json.dumps(log.records))
    assert back.trial_depths == log.trial_depths
    np.testing.assert_array_equal(back.depth_field, log.depth_field)
    assert len(back.frames) == len(log.frames)


def test_closed_loop_is_reproducible():
    s = LoopSettings(seed=3)
    a = run_trials(s, [Trial(0.4, 1.0, step_profile(2.0), preroll=1.0)])
    b = run_trials(s, [Trial(0.4, 1.0, step_profile(2.0), preroll=1.0)])
    assert a.records == b.records


def test_closed_loop_rejects_missing_estimator():
    with pytest.raises(ValueError):
        run_trials(LoopSettings(feedback="afrg"), [Trial(0.4, 1.0, step_profile(2.0))])


def test_calibration_recovers_affine_map():
    f = np.array([250.0, 300.0, 400.0, 500.0])
    cal = fit_calibration(f, -0.02 * f + 12.0)
    assert cal.slope == pytest.approx(-0.02, rel=1e-12)
    assert cal.intercept == pytest.approx(12.0, rel=1e-12)
    with pytest.raises(ValueError):
        fit_calibration([300.0, 300.0], [1.0, 2.0])


def frame_with_peak(k, t=0.0):
    v = np.zeros(CFG.bins)
    v[k] = 1.0
    return PsdFrame(v, t)


def test_tracker_hysteresis_and_degenerate_frames():
    cal = fit_calibration([230.0, 570.0], [0.0, 34.0])  # one newton per bin
    peaks = [5, 5, 9, 5, 9, 9, 9]
    est = baseline_peak_tracker([frame_with_peak(k) for k in peaks], cal)
    np.testing.assert_allclose(est, [5, 5, 5, 5, 5, 9, 9], atol=1e-12)
    tracker = PeakTracker(CFG, cal)
    tracker.update(frame_with_peak(3))
    held = tracker.update(PsdFrame(np.zeros(CFG.bins), 0.55, degenerate=True))
    assert held == pytest.approx(3.0) and tracker.flags == [0.55]


def test_tracker_constant_tone_and_burst():
    cal = fit_calibration([230.0, 570.0], [6.0, 1.0])
    t = np.arange(32000) / 16000.0
    tone = np.sin(2 * np.pi * 300.0 * t)
    est = baseline_peak_tracker(encode_recording(tone, CFG), cal)
    assert np.ptp(est) == 0.0
    burst = tone + (t >= 1.0) * 2.0 * np.sin(2 * np.pi * 500.0 * t)
    est_b = baseline_peak_tracker(encode_recording(burst, CFG), cal)
    assert np.max(np.abs(est_b - est[0])) > 2.0


def test_label_histogram():
    h = label_histogram(np.array([2.0, 2.4, 3.0, 7.0, 5.6]), (2.0, 3.0, 5.0))
    assert h == {"2": 0.4, "3": 0.2, "5": 0.0}


def test_short_dataset_is_synchronised(tmp_path):
    spec = DatasetSpec(targets=(2.0, 4.0), total_duration=16.0, preroll=1.0, ramp_time=1.0,
                       on_time=1.0, off_time=0.5)
    out = generate_dataset(tmp_path / "ds", spec, seed=1)
    meta = json.loads((out / "metadata.json").read_text())
    assert len(meta["segments"]) == 4
    data = load_dataset(out, CFG)
    assert data.X.shape[1:] == (35, 40) and len(data.y) == len(data.times)
    # every window ends on a control tick that has a label
    ticks = data.times * CFG.control_rate
    assert np.max(np.abs(ticks - np.rint(ticks))) < 1e-9
    assert set(data.metadata["label_fraction_near_target"]) == {"2", "4"}
    with open(out / f"{meta['segments'][1]['name']}.jsonl") as fh:
        rows = [json.loads(line) for line in fh]
    contact = [r for r in rows if r["phase"] == "contact"]
    # intermittent mode: the command steps straight to the target and back to zero
    assert {r["f_target"] for r in contact} == {0.0, 2.0}


def test_settings_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# test\nexperiment.targets = [2.0, 4.0]\ncontroller.admittance_damping = 5e4\n"
                   "loop.sensor_noise = 0.0\ndataset.duration = 40\n")
    s = load_settings(cfg)
    assert s.experiment.targets == (2.0, 4.0)
    assert s.loop.controller.admittance_damping == 5e4
    assert s.loop.sensor_noise == 0.0 and s.dataset_duration == 40.0
    cfg.write_text("robot.speed = 3\n")
    with pytest.raises(ConfigError):
        load_settings(cfg)
    cfg.write_text("plant.bogus = 3\n")
    with pytest.raises(ConfigError):
        load_settings(cfg)


def test_experiment_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(targets=(8.0,))
    with pytest.raises(ConfigError):
        ExperimentConfig(repetitions=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(feedback="magic")
    with pytest.raises(ConfigError):
        ExperimentConfig(noise="street")


def test_cli_end_to_end(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("experiment.duration = 2.0\nexperiment.targets = [3.0]\n")
    assert main(["synth-data", "--out", str(tmp_path / "ds"), "--duration", "40"]) == 0
    assert len(list((tmp_path / "ds").glob("*.wav"))) == 10
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "logs")]) == 0
    assert (tmp_path / "logs" / "rep0" / "log.jsonl").exists()
    assert main(["eval", "--log", str(tmp_path / "logs" / "rep0"), "--out", str(tmp_path / "m.csv")]) == 0
    assert "rep0/control" in (tmp_path / "m.csv").read_text()
    assert main(["report", "--log", str(tmp_path / "logs" / "rep0"), "--out", str(tmp_path / "rep")]) == 0
    assert list((tmp_path / "rep").glob("*.svg"))
    with pytest.raises(SystemExit, match="checkpoint"):
        main(["run", "--feedback", "afrg", "--out", str(tmp_path / "x")])
    capsys.readouterr()


def test_cli_reports_config_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("experiment.targets = [9.0]\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err
