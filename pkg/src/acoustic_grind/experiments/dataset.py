"""Synthetic training-data collection under F/T-sensor force control."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..audio import FACTORY_NOISE, NoiseProfile, read_wav, write_wav
from ..controller import ControllerConfig
from ..encoder import EncoderConfig, encode_recording, stack_windows
from ..model import TrainingDataset
from .closed_loop import LoopSettings, Trial, intermittent_profile, plant_for, ramp_profile, run_trials

TARGETS = (2.0, 3.0, 4.0, 5.0, 7.0)
MODES = ("continuous", "intermittent")


@dataclass
class DatasetSpec:
    targets: tuple[float, ...] = TARGETS
    modes: tuple[str, ...] = MODES
    total_duration: float = 280.0  # s of audio, pre-roll included
    preroll: float = 2.0
    ramp_time: float = 3.0  # continuous mode
    on_time: float = 12.0  # intermittent mode
    off_time: float = 1.0
    noise: NoiseProfile = FACTORY_NOISE
    # the clean F/T loop used for collection can be stiffer than the acoustic one
    controller: ControllerConfig | None = field(default_factory=lambda: ControllerConfig(
        admittance_inertia=2250.0, admittance_damping=45000.0))


def _segment_trial(spec: DatasetSpec, target: float, mode: str, x: float, contact: float) -> Trial:
    if mode == "continuous":
        profile = ramp_profile(target, spec.ramp_time)
    elif mode == "intermittent":
        profile = intermittent_profile(target, spec.on_time, spec.off_time)
    else:
        raise ValueError(f"unknown grinding mode {mode!r}")
    return Trial(x, contact, profile, preroll=spec.preroll)


def generate_dataset(out_dir, spec: DatasetSpec | None = None, seed: int = 0,
                     base: LoopSettings | None = None) -> Path:
    """Record F/T-controlled fixed-point grinding at every target in both modes.

    Writes one WAV and one JSONL label file per segment plus ``metadata.json``.
    Disc wear is off so the engagement during collection stays at its initial value.
    """
    spec = spec or DatasetSpec()
    base = base or LoopSettings()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    segments = [(t, m) for t in spec.targets for m in spec.modes]
    seg_len = spec.total_duration / len(segments)
    contact = seg_len - spec.preroll
    if contact <= 0:
        raise ValueError("dataset too short for the pre-roll")
    plant = plant_for(base, wear_enabled=False)
    wp = base.workpiece
    controller = spec.controller or base.controller
    files = []
    for i, (target, mode) in enumerate(segments):
        settings = replace(base, plant=plant, workpiece=wp, controller=controller,
                           noise=spec.noise, feedback="ft",
                           seed=seed * 1000 + i, record_audio=True)
        x = wp.origin_x + wp.length * (i + 0.5) / len(segments)
        log = run_trials(settings, [_segment_trial(spec, target, mode, x, contact)])
        name = f"seg{i:02d}_{mode}_{target:g}N"
        wav = out / f"{name}.wav"
        labels = out / f"{name}.jsonl"
        write_wav(wav, log.audio, settings.acoustic.sample_rate)
        try:
            with open(labels, "w") as fh:
                for r in log.records:
                    fh.write(json.dumps({"t": r["t"], "f_n": r["f_measured"], "f_true": r["f_n"],
                                         "f_target": r["f_target"], "omega": r["omega"],
                                         "engagement": r["engagement"], "phase": r["phase"]}) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write {labels}: {exc}") from exc
        files.append({"name": name, "target": target, "mode": mode, "seed": settings.seed})
    meta = {
        "segments": files,
        "targets": list(spec.targets),
        "modes": list(spec.modes),
        "total_duration": spec.total_duration,
        "preroll": spec.preroll,
        "ramp_time": spec.ramp_time,
        "on_off": [spec.on_time, spec.off_time],
        "admittance": [controller.admittance_inertia, controller.admittance_damping],
        "collection_engagement": plant.engagement_initial,
        "noise": repr(spec.noise),
        "material": wp.material_preset,
        "seed": seed,
        "encoder": base.encoder.fingerprint(),
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2))
    return out


def load_dataset(data_dir, config: EncoderConfig | None = None) -> TrainingDataset:
    """Replay the WAV files through the encoder and pair windows with labels.

    Windows are kept only once the encoder has ``frames`` real frames (no
    zero-padded warm-up) and only in the contact phase.
    """
    data_dir = Path(data_dir)
    meta = json.loads((data_dir / "metadata.json").read_text())
    config = config or EncoderConfig()
    Xs, ys, ts, recs = [], [], [], []
    for rec, seg in enumerate(meta["segments"]):
        samples, fs = read_wav(data_dir / f"{seg['name']}.wav")
        if abs(fs - config.sample_rate) > 1e-9:
            raise ValueError(f"{seg['name']}: sample rate {fs} != encoder {config.sample_rate}")
        frames = encode_recording(samples, config)
        X, times = stack_windows(frames, config)
        labels = {}
        with open(data_dir / f"{seg['name']}.jsonl") as fh:
            for line in fh:
                r = json.loads(line)
                if r["phase"] == "contact":
                    labels[int(round(r["t"] * config.control_rate))] = r["f_n"]
        keys = np.rint(times * config.control_rate).astype(int)
        keep = np.array([k in labels for k in keys], dtype=bool)
        Xs.append(X[keep])
        ys.append(np.array([labels[k] for k in keys[keep]]))
        ts.append(times[keep])
        recs.append(np.full(int(keep.sum()), rec))
    meta["label_fraction_near_target"] = label_histogram(np.concatenate(ys), meta["targets"])
    return TrainingDataset(np.concatenate(Xs), np.concatenate(ys), np.concatenate(ts),
                           np.concatenate(recs), metadata=meta)


def label_histogram(labels: np.ndarray, targets, tolerance: float = 0.5) -> dict[str, float]:
    """Fraction of labels within ``tolerance`` of each target level."""
    labels = np.asarray(labels)
    return {f"{t:g}": float(np.mean(np.abs(labels - t) <= tolerance)) for t in targets}
