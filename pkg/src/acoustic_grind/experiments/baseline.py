"""Dominant-spectral-peak force estimator used as the comparison baseline."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..encoder import EncoderConfig, PsdFrame, StreamingEncoder


@dataclass(frozen=True)
class PeakCalibration:
    """Affine map from peak frequency (Hz) to normal force (N)."""
    slope: float
    intercept: float

    def __call__(self, frequency):
        return self.slope * np.asarray(frequency) + self.intercept


def fit_calibration(frequencies, forces) -> PeakCalibration:
    """Least-squares affine fit on clean recordings."""
    f = np.asarray(frequencies, dtype=float)
    y = np.asarray(forces, dtype=float)
    if f.size < 2 or np.ptp(f) == 0:
        raise ValueError("calibration needs at least two distinct peak frequencies")
    A = np.column_stack((f, np.ones_like(f)))
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    return PeakCalibration(float(slope), float(intercept))


@dataclass
class PeakTracker:
    """Per-frame argmax tracker with a one-frame hysteresis on bin changes.

    A new peak bin is accepted once it has been the argmax for two frames in a
    row. All-equal (degenerate) frames hold the previous estimate and are flagged.
    """
    config: EncoderConfig
    calibration: PeakCalibration
    bin: int | None = None
    candidate: int | None = None
    estimate: float = math.nan
    flags: list[float] = field(default_factory=list)  # times of degenerate frames
    seen: int = 0  # frame_count of the last processed frame

    def check_encoder(self, config: EncoderConfig) -> None:
        if config.bin_frequencies.shape != self.config.bin_frequencies.shape or \
                not np.allclose(config.bin_frequencies, self.config.bin_frequencies):
            raise ValueError("baseline calibrated for a different analysis band")

    def update(self, frame: PsdFrame) -> float:
        if frame.degenerate or not np.any(frame.values):
            self.flags.append(frame.frame_time)
            return self.estimate
        peak = int(np.argmax(frame.values))
        if self.bin is None:
            self.bin = peak
        elif peak != self.bin:
            if peak == self.candidate:
                self.bin, self.candidate = peak, None
            else:
                self.candidate = peak
        else:
            self.candidate = None
        self.estimate = float(self.calibration(self.config.bin_frequencies[self.bin]))
        return self.estimate

    def __call__(self, encoder: StreamingEncoder) -> float:
        # process every frame emitted since the last call
        new = encoder.frame_count - self.seen
        frames = list(encoder.frames)
        for frame in frames[len(frames) - min(new, len(frames)):]:
            self.update(frame)
        self.seen = encoder.frame_count
        return self.estimate


def baseline_peak_tracker(frames, calibration: PeakCalibration,
                          config: EncoderConfig | None = None) -> np.ndarray:
    """Force estimate for every frame of a sequence."""
    tracker = PeakTracker(config or EncoderConfig(), calibration)
    return np.array([tracker.update(f) for f in frames])


def peak_frequencies(frames, config: EncoderConfig) -> np.ndarray:
    """Raw (hysteresis-free) argmax frequency per frame."""
    return np.array([config.bin_frequencies[int(np.argmax(f.values))] for f in frames])
