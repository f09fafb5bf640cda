"""The experiment protocols: held-out estimation, straight-line control, MRR under wear and noise robustness."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..audio import FACTORY_NOISE, LOUD_TONES, MIC_NOISE, NoiseProfile, Synthesizer
from ..encoder import StreamingEncoder
from .baseline import PeakTracker, fit_calibration, peak_frequencies
from .closed_loop import ExperimentLog, LoopSettings, Trial, plant_for, run_trials, step_profile
from .metrics import Metrics, eval_control, eval_estimation, eval_mrr


@dataclass
class EstimationProtocol:
    targets: tuple[float, ...] = (2.0, 3.0, 4.0)
    duration: float = 10.0
    seed: int = 101
    noise: NoiseProfile = FACTORY_NOISE


def run_estimation(estimator, protocol: EstimationProtocol | None = None,
                   base: LoopSettings | None = None) -> tuple[ExperimentLog, Metrics, dict[float, float]]:
    """Short fixed-point trials under F/T control with the estimator running open-loop.

    Returns the log, the pooled estimation metrics and the mean estimate per level.
    """
    p = protocol or EstimationProtocol()
    base = base or LoopSettings()
    wp = base.workpiece
    settings = replace(base, plant=plant_for(base, wear_enabled=False),
                       noise=p.noise, feedback="ft", seed=p.seed)
    n = len(p.targets)
    trials = [Trial(wp.origin_x + wp.length * (i + 0.5) / n, p.duration, step_profile(t))
              for i, t in enumerate(p.targets)]
    log = run_trials(settings, trials, estimator)
    measured, estimated = log.column("f_measured"), log.column("f_hat")
    metrics, _ = eval_estimation(measured, estimated)
    trial_id = log.column("trial")
    levels = {t: float(np.mean(estimated[trial_id == i])) for i, t in enumerate(p.targets)}
    return log, metrics, levels


@dataclass
class LineProtocol:
    target: float = 3.0
    length: float = 0.045  # m of travel along the workpiece (90 s at the default feed)
    feed_rate: float = 0.5e-3  # m/s
    x_start: float = 0.36
    steady_start: float = 10.0  # s after contact onset
    seed: int = 202
    noise: NoiseProfile = FACTORY_NOISE


def run_straight_line(estimator, feedback: str = "afrg", protocol: LineProtocol | None = None,
                      base: LoopSettings | None = None) -> tuple[ExperimentLog, Metrics]:
    """Constant-feed pass at a fixed force target; metrics use the F/T measurement."""
    p = protocol or LineProtocol()
    base = base or LoopSettings()
    wp = base.workpiece
    duration = p.length / p.feed_rate
    settings = replace(base, plant=plant_for(base, wear_enabled=False),
                       noise=p.noise, feedback=feedback, seed=p.seed)
    trial = Trial(p.x_start, duration, step_profile(p.target), feed_rate=p.feed_rate,
                  x_end=p.x_start + p.length)
    log = run_trials(settings, [trial], estimator)
    t = log.column("t")
    t = t - t[0] + (t[1] - t[0])  # seconds since contact onset
    f = log.column("f_measured")
    metrics = eval_control(np.concatenate(([0.0], t)), np.concatenate(([0.0], f)), p.target,
                           (p.steady_start, t[-1]), start=0.0)
    return log, metrics


@dataclass
class WearProtocol:
    trials: int = 5
    duration: float = 30.0
    target: float = 4.0
    repetitions: int = 3
    material: str = "steel"
    seed: int = 303
    noise: NoiseProfile = FACTORY_NOISE


def run_wear(estimator, feedback: str, protocol: WearProtocol | None = None,
             base: LoopSettings | None = None) -> list[tuple[ExperimentLog, Metrics]]:
    """Consecutive fixed-point trials on one disc that starts fresh each repetition."""
    p = protocol or WearProtocol()
    base = base or LoopSettings()
    wp = replace(base.workpiece, material_preset=p.material, trial_duration=p.duration)
    plant = plant_for(base, wp, wear_enabled=True)
    results = []
    for rep in range(p.repetitions):
        settings = replace(base, plant=plant, workpiece=wp, noise=p.noise, feedback=feedback,
                           seed=p.seed + rep)
        trials = [Trial(wp.origin_x + wp.length * (i + 0.5) / p.trials, p.duration,
                        step_profile(p.target)) for i in range(p.trials)]
        log = run_trials(settings, trials, estimator if feedback != "ft" else None)
        results.append((log, eval_mrr(log.trial_depths, wp)))
    return results


def calibrate_baseline(base: LoopSettings | None = None, targets=(1.5, 2.0, 2.5, 3.0, 3.5, 4.0),
                       duration: float = 6.0, settle: float = 2.0, seed: int = 404) -> PeakTracker:
    """Fit the peak tracker's affine map on clean (mic-noise-only) recordings."""
    base = base or LoopSettings()
    wp = base.workpiece
    settings = replace(base, plant=plant_for(base, wear_enabled=False),
                       noise=MIC_NOISE, feedback="ft", seed=seed, record_audio=True)
    n = len(targets)
    trials = [Trial(wp.origin_x + wp.length * (i + 0.5) / n, duration, step_profile(t))
              for i, t in enumerate(targets)]
    log = run_trials(settings, trials)
    cfg = settings.encoder
    freqs = peak_frequencies(log.frames, cfg)
    times = np.array([f.frame_time for f in log.frames])
    keep = []
    for i in range(n):
        rows = [r for r in log.records if r["trial"] == i and r["phase"] == "contact"]
        t_on = rows[0]["t"]
        keep += [(r["t"], r["f_measured"]) for r in rows if r["t"] >= t_on + settle]
    lookup = {round(t * cfg.control_rate): k for k, t in enumerate(times)}
    fx = [freqs[lookup[round(t * cfg.control_rate)]] for t, _ in keep]
    fy = [f for _, f in keep]
    return PeakTracker(cfg, fit_calibration(fx, fy))


@dataclass
class RobustnessResult:
    clean: dict[str, Metrics] = field(default_factory=dict)
    noisy: dict[str, Metrics] = field(default_factory=dict)

    def degradation(self, name: str) -> float:
        return self.noisy[name].rmse - self.clean[name].rmse


def run_noise_robustness(model, tracker: PeakTracker, base: LoopSettings | None = None,
                         targets=(2.0, 3.0, 4.0), duration: float = 10.0, seed: int = 505,
                         clean: NoiseProfile = MIC_NOISE, noisy: NoiseProfile = LOUD_TONES
                         ) -> RobustnessResult:
    """Same plant trajectory rendered with clean and tone-contaminated audio.

    Both estimators see identical audio in each condition; degradation is the
    RMSE increase from the clean to the noisy rendering.
    """
    base = base or LoopSettings()
    wp = base.workpiece
    settings = replace(base, plant=plant_for(base, wear_enabled=False),
                       noise=clean, feedback="ft", seed=seed, record_audio=True)
    n = len(targets)
    trials = [Trial(wp.origin_x + wp.length * (i + 0.5) / n, duration, step_profile(t))
              for i, t in enumerate(targets)]
    log = run_trials(settings, trials)
    contact = np.array([r["phase"] == "contact" for r in log.records])
    force = np.array([r["f_measured"] for r in log.records])
    cfg = settings.encoder
    hop = cfg.hop_samples
    result = RobustnessResult()
    for label, profile in (("clean", clean), ("noisy", noisy)):
        synth = Synthesizer(settings.acoustic, profile, seed=seed,
                            max_omega=settings.plant.no_load_speed)
        enc = StreamingEncoder(cfg)
        tr = PeakTracker(cfg, tracker.calibration)
        net, peak = [], []
        for k in range(len(log.records)):
            sl = slice(k * hop, (k + 1) * hop)
            block = synth.synthesize_block(log.omega_samples[sl], float(log.engagement_samples[sl][0]))
            enc.push_audio(block)
            net.append(model(enc))
            peak.append(tr(enc))
        target = result.clean if label == "clean" else result.noisy
        target["psdregnet"] = eval_estimation(force[contact], np.array(net)[contact])[0]
        target["baseline"] = eval_estimation(force[contact], np.array(peak)[contact])[0]
    return result
