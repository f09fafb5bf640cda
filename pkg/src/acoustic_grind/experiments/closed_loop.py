"""Fixed-order closed-loop simulation: plant -> audio -> encoder -> estimator -> controller."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from ..audio import AcousticModel, NoiseProfile, Synthesizer
from ..controller import ArmModel, ControllerConfig, HybridController, forward_kinematics, inverse_kinematics
from ..encoder import EncoderConfig, PsdFrame, StreamingEncoder
from ..plant import PlantParams, PlantState, Workpiece, initial_state, params_for, step_plant

TOOL_ANGLE = -math.pi / 2  # disc axis pointing down at the workpiece


class Estimator(Protocol):
    def check_encoder(self, config: EncoderConfig) -> None: ...
    def __call__(self, encoder: StreamingEncoder) -> float: ...


# --- force target profiles -------------------------------------------------------

def step_profile(target: float) -> Callable[[float], float]:
    return lambda t: target


def ramp_profile(target: float, ramp_time: float) -> Callable[[float], float]:
    """Force rising continuously from 0 to ``target`` then held."""
    return lambda t: target * min(1.0, max(t, 0.0) / ramp_time)


def intermittent_profile(target: float, on_time: float, off_time: float) -> Callable[[float], float]:
    period = on_time + off_time
    return lambda t: target if (t % period) < on_time else 0.0


@dataclass
class Trial:
    """One contact phase: a pre-roll at zero force, then ``duration`` under the profile."""
    x_start: float
    duration: float
    profile: Callable[[float], float]
    feed_rate: float = 0.0
    preroll: float = 2.0
    x_end: float | None = None


@dataclass
class LoopSettings:
    plant: PlantParams = field(default_factory=PlantParams)
    workpiece: Workpiece = field(default_factory=Workpiece)
    acoustic: AcousticModel = field(default_factory=AcousticModel)
    noise: NoiseProfile = field(default_factory=NoiseProfile)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    feedback: str = "ft"  # ft | afrg | baseline
    substeps: int = 10
    sensor_noise: float = 0.02  # N, F/T measurement noise (std)
    seed: int = 0
    record_audio: bool = False


def plant_for(settings: LoopSettings, workpiece: Workpiece | None = None, **overrides) -> PlantParams:
    """The settings' plant, re-deriving material constants only when the material changes."""
    wp = workpiece or settings.workpiece
    if wp.material_preset == settings.workpiece.material_preset:
        return replace(settings.plant, **overrides)
    return params_for(wp, settings.plant, **overrides)


@dataclass
class ExperimentLog:
    records: list[dict] = field(default_factory=list)
    frames: list[PsdFrame] = field(default_factory=list)
    trial_depths: list[float] = field(default_factory=list)
    trial_ranges: list[tuple[int, int]] = field(default_factory=list)  # cell slices per trial
    depth_field: np.ndarray | None = None
    audio: np.ndarray | None = None
    omega_samples: np.ndarray | None = None
    engagement_samples: np.ndarray | None = None
    settings: dict = field(default_factory=dict)
    faults: int = 0

    def column(self, key: str, phase: str | None = "contact") -> np.ndarray:
        rows = self.records if phase is None else [r for r in self.records if r["phase"] == phase]
        return np.array([r[key] for r in rows], dtype=float)

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r) + "\n")


def _settings_echo(settings: LoopSettings) -> dict:
    echo = {}
    for name in ("plant", "workpiece", "acoustic", "noise", "encoder"):
        echo[name] = asdict(getattr(settings, name))
    ctrl = asdict(settings.controller)
    ctrl["S"] = np.asarray(settings.controller.S).tolist()
    echo["controller"] = ctrl
    for name in ("feedback", "substeps", "sensor_noise", "seed"):
        echo[name] = getattr(settings, name)
    return echo


class ClosedLoop:
    """Simulation instance owning its plant, synthesizer, encoder and controller."""

    def __init__(self, settings: LoopSettings, estimator: Estimator | None = None):
        self.s = settings
        if settings.feedback not in ("ft", "afrg", "baseline"):
            raise ValueError(f"unknown feedback source {settings.feedback!r}")
        if settings.feedback != "ft" and estimator is None:
            raise ValueError(f"feedback {settings.feedback!r} needs an estimator")
        if estimator is not None:
            # a mismatched estimator must fail before any stepping
            estimator.check_encoder(settings.encoder)
        self.estimator = estimator
        if abs(settings.controller.control_rate - settings.encoder.control_rate) > 1e-12:
            raise ValueError("controller and encoder control rates differ")
        self.dt = 1.0 / settings.encoder.control_rate
        if abs(settings.encoder.sample_rate - settings.acoustic.sample_rate) > 1e-9:
            raise ValueError("encoder and acoustic sample rates differ")
        self.synth = Synthesizer(settings.acoustic, settings.noise, seed=settings.seed,
                                 max_omega=settings.plant.no_load_speed)
        self.encoder = StreamingEncoder(settings.encoder)
        self.sensor_rng = np.random.default_rng(np.random.SeedSequence([settings.seed, 7]))
        self.state: PlantState = initial_state(settings.plant, settings.workpiece)
        self.arm = ArmModel()
        self.time = 0.0
        self.step_index = 0
        self.log = ExperimentLog(settings=_settings_echo(settings))
        self._audio: list[np.ndarray] = []
        self._omega: list[np.ndarray] = []
        self._mu: list[float] = []

    def _place_tool(self, x: float) -> None:
        wp = self.s.workpiece
        cells = wp.footprint(x)
        surface = wp.surface_y - float(np.mean(self.state.depth_field[cells]))
        self.arm.q = inverse_kinematics(self.arm.lengths, (x, surface, TOOL_ANGLE))

    def _advance_plant(self, qdot: np.ndarray) -> np.ndarray:
        """Hold ``qdot`` for one control period; return omega at substep boundaries."""
        dts = self.dt / self.s.substeps
        omegas = [self.state.omega]
        for _ in range(self.s.substeps):
            self.arm.q = self.arm.q + qdot * dts
            pose = forward_kinematics(self.arm)
            self.state = step_plant(self.state, (pose[0], pose[1]), dts, self.s.plant, self.s.workpiece)
            omegas.append(self.state.omega)
        return np.array(omegas)

    def _audio_block(self, omegas: np.ndarray):
        hop = self.s.encoder.hop_samples
        fs = self.s.encoder.sample_rate
        knots = np.linspace(0.0, self.dt, len(omegas))
        omega = np.interp(np.arange(hop) / fs, knots, omegas)
        block = self.synth.synthesize_block(omega, self.state.engagement)
        if self.s.record_audio:
            self._audio.append(block.samples)
            self._omega.append(omega)
            self._mu.append(self.state.engagement)
        return block

    def run_trial(self, trial: Trial) -> None:
        s = self.s
        ctrl = HybridController(s.controller)
        self._place_tool(trial.x_start)
        y0 = forward_kinematics(self.arm)[1]
        pre_steps = int(round(trial.preroll / self.dt))
        steps = int(round(trial.duration / self.dt))
        depth_before = self.state.depth_field.copy()
        qdot = np.zeros(3)
        x_end = trial.x_end if trial.x_end is not None else math.inf
        for k in range(pre_steps + steps):
            omegas = self._advance_plant(qdot)
            frames = self.encoder.push_audio(self._audio_block(omegas))
            self.log.frames.extend(frames)
            self.time = round((self.step_index + 1) * self.dt, 9)
            self.step_index += 1

            t_trial = (k + 1 - pre_steps) * self.dt
            contact = k + 1 > pre_steps
            target = trial.profile(t_trial) if contact else 0.0
            measured = self.state.normal_force + s.sensor_noise * self.sensor_rng.standard_normal()
            estimate = math.nan
            if self.estimator is not None:
                estimate = float(self.estimator(self.encoder))
            feedback = measured if s.feedback == "ft" else estimate

            moving = contact and trial.feed_rate > 0
            x_ref = min(trial.x_start + trial.feed_rate * max(t_trial, 0.0), x_end)
            v_ref = trial.feed_rate if moving and x_ref < x_end else 0.0
            reference = np.array([x_ref, y0, TOOL_ANGLE])
            pose = forward_kinematics(self.arm)
            cmd = ctrl.step(target, feedback, self.time, self.time, pose, reference,
                            np.array([v_ref, 0.0, 0.0]), self.arm)
            qdot = cmd.joint_velocity
            self.log.faults += int(cmd.fault)
            self.log.records.append({
                "t": self.time,
                "phase": "contact" if contact else "preroll",
                "trial": len(self.log.trial_depths),
                "f_target": target,
                "f_n": self.state.normal_force,
                "f_measured": measured,
                "f_hat": estimate,
                "f_t": self.state.tangential_force,
                "omega": self.state.omega,
                "engagement": self.state.engagement,
                "mrr": self.state.removal_rate,
                "x": float(pose[0]), "y": float(pose[1]), "phi": float(pose[2]),
                "u": [float(v) for v in qdot],
                "saturated": bool(cmd.saturated),
                "clamped": bool(self.state.clamped),
                "warmup": len(self.encoder.frames) < s.encoder.frames,
            })
        # retract: the tool leaves the surface between trials
        removed = self.state.depth_field - depth_before
        touched = np.flatnonzero(removed > 0)
        if touched.size:
            self.log.trial_ranges.append((int(touched[0]), int(touched[-1]) + 1))
            self.log.trial_depths.append(float(np.max(removed)))
        else:
            self.log.trial_ranges.append((0, 0))
            self.log.trial_depths.append(0.0)
        self.state = replace(self.state, normal_force=0.0, tangential_force=0.0)

    def finish(self) -> ExperimentLog:
        self.log.depth_field = self.state.depth_field.copy()
        if self.s.record_audio and self._audio:
            self.log.audio = np.concatenate(self._audio)
            self.log.omega_samples = np.concatenate(self._omega)
            hop = self.s.encoder.hop_samples
            self.log.engagement_samples = np.repeat(np.array(self._mu), hop)
        return self.log


def run_trials(settings: LoopSettings, trials: list[Trial],
               estimator: Estimator | None = None) -> ExperimentLog:
    loop = ClosedLoop(settings, estimator)
    for trial in trials:
        loop.run_trial(trial)
    return loop.finish()


def write_log(log: ExperimentLog, out_dir) -> Path:
    """JSONL records plus settings, trial summary and PSD frames in ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        log.write_jsonl(out / "log.jsonl")
        (out / "settings.json").write_text(json.dumps(log.settings, indent=2, default=str))
        summary = {"trial_depths": log.trial_depths, "trial_ranges": log.trial_ranges,
                   "faults": log.faults}
        (out / "trials.json").write_text(json.dumps(summary, indent=2))
        arrays = {"frame_times": np.array([f.frame_time for f in log.frames]),
                  "frame_values": np.array([f.values for f in log.frames]),
                  "frame_degenerate": np.array([f.degenerate for f in log.frames], dtype=bool)}
        if log.depth_field is not None:
            arrays["depth_field"] = log.depth_field
        np.savez_compressed(out / "arrays.npz", **arrays)
    except OSError as exc:
        raise OSError(f"cannot write experiment log to {out}: {exc}") from exc
    return out


def read_log(log_dir) -> ExperimentLog:
    src = Path(log_dir)
    if not (src / "log.jsonl").exists():
        raise FileNotFoundError(f"no log.jsonl in {src}")
    with open(src / "log.jsonl") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    log = ExperimentLog(records=records)
    if (src / "settings.json").exists():
        log.settings = json.loads((src / "settings.json").read_text())
    if (src / "trials.json").exists():
        summary = json.loads((src / "trials.json").read_text())
        log.trial_depths = summary["trial_depths"]
        log.trial_ranges = [tuple(r) for r in summary["trial_ranges"]]
        log.faults = summary["faults"]
    if (src / "arrays.npz").exists():
        with np.load(src / "arrays.npz") as data:
            log.frames = [PsdFrame(v, float(t), bool(d)) for t, v, d in
                          zip(data["frame_times"], data["frame_values"], data["frame_degenerate"])]
            if "depth_field" in data:
                log.depth_field = data["depth_field"]
    return log
