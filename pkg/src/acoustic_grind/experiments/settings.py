"""Assemble every subsystem's settings from one flat config file."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass

import numpy as np

from ..audio import NOISE_PROFILES, AcousticModel, NoiseProfile
from ..config import ConfigError, read_flat, section
from ..controller import ControllerConfig
from ..encoder import EncoderConfig
from ..model import TrainSettings
from ..plant import PlantParams, Workpiece, params_for
from .closed_loop import LoopSettings

SCENARIOS = ("fixed_point", "straight_line")
FEEDBACKS = ("ft", "afrg", "baseline")


@dataclass
class ExperimentConfig:
    scenario: str = "fixed_point"
    feedback: str = "ft"
    targets: tuple[float, ...] = (3.0,)
    duration: float = 10.0  # s per trial (fixed point); straight line derives it from path_length
    path_length: float = 0.03  # m
    feed_rate: float = 0.5e-3  # m/s
    repetitions: int = 1
    wear: bool = False
    noise: str = "factory"
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.feedback not in FEEDBACKS:
            raise ConfigError(f"feedback must be one of {FEEDBACKS}, got {self.feedback!r}")
        self.targets = tuple(float(t) for t in np.atleast_1d(self.targets))
        if not self.targets or any(not 0.5 <= t <= 7.0 for t in self.targets):
            raise ConfigError("force targets must lie in [0.5, 7] N")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.noise not in NOISE_PROFILES:
            raise ConfigError(f"unknown noise profile {self.noise!r}; known: {sorted(NOISE_PROFILES)}")
        self.seeds = tuple(int(s) for s in np.atleast_1d(self.seeds))

    @property
    def noise_profile(self) -> NoiseProfile:
        return NOISE_PROFILES[self.noise]


@dataclass
class Settings:
    loop: LoopSettings = field(default_factory=LoopSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    dataset_duration: float = 280.0


def _tuples(kwargs: dict) -> dict:
    # config lists become tuples so frozen dataclasses stay hashable
    return {k: tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v
            for k, v in kwargs.items()}


def load_settings(path=None) -> Settings:
    """Defaults overridden by any ``section.key`` found in ``path``.

    Sections: plant, workpiece, acoustic, encoder, controller, loop, train,
    experiment, dataset. Unknown keys are rejected.
    """
    values = read_flat(path) if path else {}
    known = {"plant", "workpiece", "acoustic", "encoder", "controller", "loop", "train",
             "experiment", "dataset"}
    stray = sorted({k.split(".", 1)[0] for k in values} - known)
    if stray:
        raise ConfigError(f"unknown config sections: {', '.join(stray)}")
    workpiece = Workpiece(**_tuples(section(values, "workpiece", Workpiece)))
    plant_keys = section(values, "plant", PlantParams)
    # material presets fill removal gain / wear scale unless set explicitly
    plant = params_for(workpiece, PlantParams(), **plant_keys)
    acoustic = AcousticModel(**_tuples(section(values, "acoustic", AcousticModel)))
    encoder = EncoderConfig(**section(values, "encoder", EncoderConfig))
    ctrl_keys = section(values, "controller", ControllerConfig)
    if "S" in ctrl_keys:
        ctrl_keys["S"] = np.asarray(ctrl_keys["S"], dtype=float)
    controller = ControllerConfig(**_tuples(ctrl_keys))
    loop_keys = section(values, "loop")
    allowed = {"substeps", "sensor_noise"}
    if set(loop_keys) - allowed:
        raise ConfigError(f"unknown loop keys: {', '.join(sorted(set(loop_keys) - allowed))}")
    experiment = ExperimentConfig(**section(values, "experiment", ExperimentConfig))
    loop = LoopSettings(plant=plant, workpiece=workpiece, acoustic=acoustic,
                        noise=experiment.noise_profile, encoder=encoder, controller=controller,
                        feedback=experiment.feedback, **loop_keys)
    train = TrainSettings(**section(values, "train", TrainSettings))
    ds = section(values, "dataset")
    if set(ds) - {"duration"}:
        raise ConfigError(f"unknown dataset keys: {', '.join(sorted(set(ds) - {'duration'}))}")
    return Settings(loop, train, experiment, float(ds.get("duration", 280.0)))


def echo(obj) -> dict:
    """Plain-data view of (nested) settings for logs and summaries."""
    if is_dataclass(obj):
        out = {}
        for f in fields(obj):
            out[f.name] = echo(getattr(obj, f.name))
        return out
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (list, tuple)):
        return [echo(v) for v in obj]
    if isinstance(obj, dict):
        return {k: echo(v) for k, v in obj.items()}
    return obj

