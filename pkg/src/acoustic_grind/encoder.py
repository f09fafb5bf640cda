"""Streaming PSD encoder: window, FFT, one-sided PSD, band crop, min-max, stack.

At every control tick the trailing ``window_seconds`` of audio become one
normalised spectral frame; the latest ``frames`` of them form the network
input, oldest column first.
"""
from __future__ import annotations

import math
import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioBlock


class EncoderConfigError(ValueError):
    pass


class StreamError(RuntimeError):
    def __init__(self, gap_samples: int):
        super().__init__(f"audio stream gap of {gap_samples} samples")
        self.gap_samples = gap_samples


@dataclass(frozen=True)
class EncoderConfig:
    sample_rate: float = 16000.0
    window_seconds: float = 0.1
    control_rate: float = 20.0
    band_low: float = 230.0
    band_high: float = 580.0
    frames: int = 40
    expected_bins: int | None = 35

    def __post_init__(self):
        if self.band_high > self.sample_rate / 2:
            raise EncoderConfigError("band_high above Nyquist")
        if not 0 <= self.band_low < self.band_high:
            raise EncoderConfigError("band edges must satisfy 0 <= low < high")
        if self.window_samples < 2:
            raise EncoderConfigError("window shorter than two samples")
        hop = self.sample_rate / self.control_rate
        if abs(hop - round(hop)) > 1e-9:
            raise EncoderConfigError("sample_rate / control_rate must be an integer")
        if self.frames < 1:
            raise EncoderConfigError("frames must be >= 1")
        n_bins = self.band_slice.stop - self.band_slice.start
        if n_bins != self.bins:
            raise EncoderConfigError(f"band yields {n_bins} bins, expected {self.bins}")
        if self.expected_bins is not None and self.bins != self.expected_bins:
            raise EncoderConfigError(f"band yields {self.bins} bins, expected {self.expected_bins}")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_seconds * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate / self.control_rate))

    @property
    def bin_width(self) -> float:
        return self.sample_rate / self.window_samples

    @property
    def bins(self) -> int:
        return int(round((self.band_high - self.band_low) / self.bin_width))

    @property
    def band_slice(self) -> slice:
        """FFT bins whose centre frequency lies in [band_low, band_high)."""
        centres = np.arange(self.window_samples // 2 + 1) * self.bin_width
        idx = np.flatnonzero((centres >= self.band_low - 1e-9) & (centres < self.band_high - 1e-9))
        return slice(int(idx[0]), int(idx[-1]) + 1)

    @property
    def bin_frequencies(self) -> np.ndarray:
        s = self.band_slice
        return np.arange(s.start, s.stop) * self.bin_width

    def fingerprint(self) -> dict:
        return {"bins": self.bins, "frames": self.frames, "band_low": self.band_low,
                "band_high": self.band_high, "control_rate": self.control_rate,
                "sample_rate": self.sample_rate, "window_seconds": self.window_seconds}


@dataclass(frozen=True)
class PsdFrame:
    values: np.ndarray
    frame_time: float
    degenerate: bool = False


@dataclass(frozen=True)
class PsdWindow:
    X: np.ndarray  # (bins, frames), oldest column first
    end_time: float
    warmup: bool = False


def hann_window(n: int) -> np.ndarray:
    """Symmetric Hann window, zero at both ends."""
    if n < 2:
        raise EncoderConfigError(f"Hann window needs N >= 2, got {n}")
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / (n - 1)))


_HANN_CACHE: dict[int, tuple[np.ndarray, float]] = {}


def _hann(n: int) -> tuple[np.ndarray, float]:
    if n not in _HANN_CACHE:
        w = hann_window(n)
        _HANN_CACHE[n] = (w, float(np.sum(w * w)))
    return _HANN_CACHE[n]


def power_spectral_density(samples: np.ndarray, fs: float, expected_length: int | None = None) -> np.ndarray:
    """One-sided Hann-windowed periodogram, |X_k|^2 / (fs * sum w^2)."""
    samples = np.asarray(samples, dtype=float)
    n = len(samples)
    if expected_length is not None and n != expected_length:
        raise EncoderConfigError(f"expected {expected_length} samples, got {n}")
    w, s2 = _hann(n)
    spectrum = np.fft.rfft(samples * w)
    psd = (spectrum.real ** 2 + spectrum.imag ** 2) / (fs * s2)
    last = n // 2 if n % 2 == 0 else n // 2 + 1
    psd[1:last] *= 2.0
    return psd


def minmax(values: np.ndarray) -> tuple[np.ndarray, bool]:
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi <= lo:
        return np.zeros_like(values), True
    return (values - lo) / (hi - lo), False


def encode_frame(samples: np.ndarray, config: EncoderConfig, frame_time: float = 0.0) -> PsdFrame:
    psd = power_spectral_density(samples, config.sample_rate, config.window_samples)
    values, degenerate = minmax(psd[config.band_slice])
    return PsdFrame(values, frame_time, degenerate)


class StreamingEncoder:
    """Ring-buffered encoder emitting one frame per control tick.

    A frame is due whenever the total number of samples received is a
    multiple of the hop and at least one full window is available; it is
    stamped with the time of its trailing edge.
    """

    def __init__(self, config: EncoderConfig):
        self.config = config
        self.buffer = np.zeros(config.window_samples)
        self.received = 0
        self.frames: deque[PsdFrame] = deque(maxlen=config.frames)
        self.frame_count = 0

    def push_audio(self, block: AudioBlock) -> list[PsdFrame]:
        cfg = self.config
        if abs(block.sample_rate - cfg.sample_rate) > 1e-9:
            raise EncoderConfigError("block sample rate does not match encoder")
        start = block.start_time * cfg.sample_rate
        start_index = int(round(start))
        if abs(start - start_index) > 1e-6 or start_index != self.received:
            raise StreamError(int(round(start - self.received)))

        samples = np.asarray(block.samples, dtype=float)
        emitted = []
        n_win, hop = cfg.window_samples, cfg.hop_samples
        pos = 0
        while pos < len(samples):
            # advance to the next hop boundary or the end of the block
            to_boundary = hop - (self.received % hop)
            take = min(to_boundary, len(samples) - pos)
            chunk = samples[pos:pos + take]
            self.buffer = np.concatenate((self.buffer[take:], chunk)) if take < n_win \
                else chunk[-n_win:].copy()
            self.received += take
            pos += take
            if self.received % hop == 0 and self.received >= n_win:
                frame = encode_frame(self.buffer, cfg, self.received / cfg.sample_rate)
                self.frames.append(frame)
                self.frame_count += 1
                emitted.append(frame)
        return emitted

    def current_input(self) -> PsdWindow:
        cfg = self.config
        X = np.zeros((cfg.bins, cfg.frames))
        frames = list(self.frames)
        for j, frame in enumerate(frames):
            X[:, cfg.frames - len(frames) + j] = frame.values
        end = frames[-1].frame_time if frames else self.received / cfg.sample_rate
        return PsdWindow(X, end, warmup=len(frames) < cfg.frames)


def encode_recording(samples: np.ndarray, config: EncoderConfig) -> list[PsdFrame]:
    """Offline counterpart of :class:`StreamingEncoder` over a whole recording."""
    n_win, hop = config.window_samples, config.hop_samples
    frames = []
    end = max(n_win, hop * math.ceil(n_win / hop))
    while end <= len(samples):
        frames.append(encode_frame(samples[end - n_win:end], config, end / config.sample_rate))
        end += hop
    return frames


def stack_windows(frames: list[PsdFrame], config: EncoderConfig) -> tuple[np.ndarray, np.ndarray]:
    """All complete windows of ``frames``: array (m, bins, n) and their end times."""
    n = config.frames
    if len(frames) < n:
        return np.zeros((0, config.bins, n)), np.zeros(0)
    values = np.stack([f.values for f in frames], axis=1)  # (bins, total)
    view = np.lib.stride_tricks.sliding_window_view(values, n, axis=1)  # (bins, m, n)
    times = np.array([f.frame_time for f in frames[n - 1:]])
    return np.ascontiguousarray(view.transpose(1, 0, 2)), times


def dump_frames_csv(frames: list[PsdFrame], path) -> None:
    rows = [np.concatenate(([f.frame_time], f.values)) for f in frames]
    np.savetxt(path, np.array(rows), delimiter=",", fmt="%.10g")


_WINDOW_MAGIC = b"PSDW"


def dump_window(window: PsdWindow, path) -> None:
    """Portable float dump: 16-byte header (magic, F, n, t_i as float32) then float64 data."""
    F, n = window.X.shape
    header = _WINDOW_MAGIC + struct.pack("<IIf", F, n, window.end_time)
    Path(path).write_bytes(header + window.X.astype("<f8").tobytes())


def load_window(path) -> PsdWindow:
    data = Path(path).read_bytes()
    if data[:4] != _WINDOW_MAGIC or len(data) < 16:
        raise ValueError(f"{path}: not a PSD window dump")
    F, n, t = struct.unpack("<IIf", data[4:16])
    body = np.frombuffer(data[16:], dtype="<f8")
    if body.size != F * n:
        raise ValueError(f"{path}: truncated PSD window dump")
    return PsdWindow(body.reshape(F, n).copy(), float(t))
