"""Synthetic contact-microphone signal driven by the tool's angular velocity.

The harmonic series tracks the rotor speed sample by sample; structural
resonances are noise-excited narrow bands; the factory environment adds pink
noise and intermittent tones. Everything passes through a band-pass
microphone model and a hard limiter.

Each random source draws from its own child generator so that synthesizing a
recording block by block is bit-identical to synthesizing it in one call.
"""
from __future__ import annotations

import math
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal


class AudioConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TonalBurst:
    frequency: float  # Hz
    amplitude: float
    duty: float = 0.5  # fraction of each period the tone is on
    period: float = 1.0  # s
    offset: float = 0.0  # s, start of the first on-phase
    spread: float = 0.0  # per-cycle amplitude drawn from amplitude * U(1 - spread, 1 + spread)

    def gate(self, t: np.ndarray) -> np.ndarray:
        phase = np.mod(t - self.offset, self.period) / self.period
        return (phase < self.duty).astype(float)

    def cycle(self, t: np.ndarray) -> np.ndarray:
        return np.floor((t - self.offset) / self.period).astype(np.int64)


@dataclass(frozen=True)
class NoiseProfile:
    pink_level: float = 0.0  # RMS of the pink component before the mic filter
    tonal_bursts: tuple[TonalBurst, ...] = ()


@dataclass(frozen=True)
class AcousticModel:
    sample_rate: float = 16000.0
    harmonic_amplitudes: tuple[float, ...] = (1.0, 0.5, 0.25, 0.12)
    harmonic_phases: tuple[float, ...] = (0.0, 0.7, 1.9, 2.6)
    fundamental_multiplier: float = 1.0
    wear_gain_slope: float = 2.0
    engagement_reference: float = 0.5  # mu_0, the fresh-disc engagement
    # (frequency Hz, amplitude, bandwidth Hz); excitation scales with the load
    # fraction 1 - omega/omega_nl, so contact drives the structure, idling does not
    resonance_lines: tuple[tuple[float, float, float], ...] = (
        (470.0, 0.4, 40.0), (1250.0, 0.15, 80.0), (2600.0, 0.1, 150.0))
    mic_bandpass: tuple[float, float, int] = (80.0, 5000.0, 2)
    output_gain: float = 0.2

    @property
    def harmonic_count(self) -> int:
        return len(self.harmonic_amplitudes)

    def wear_gain(self, engagement: float) -> float:
        return 1.0 + self.wear_gain_slope * (self.engagement_reference - engagement)


# Factory environment: broadband floor plus machinery tones that switch on and
# off. Two tones sit inside the default analysis band.
FACTORY_NOISE = NoiseProfile(
    pink_level=0.15,
    tonal_bursts=(
        TonalBurst(410.0, 1.0, duty=0.3, period=2.3, offset=0.4, spread=0.8),
        TonalBurst(520.0, 0.8, duty=0.25, period=3.1, offset=1.7, spread=0.8),
        TonalBurst(1500.0, 0.4, duty=0.5, period=1.7, offset=0.0),
    ),
)
MIC_NOISE = NoiseProfile(pink_level=0.15)
SILENT = NoiseProfile()
# In-band tones stronger than the fundamental, used for robustness trials.
LOUD_TONES = NoiseProfile(
    pink_level=0.15,
    tonal_bursts=(
        TonalBurst(410.0, 1.6, duty=0.3, period=2.3, offset=0.4),
        TonalBurst(520.0, 1.4, duty=0.25, period=3.1, offset=1.7),
        TonalBurst(1500.0, 0.4, duty=0.5, period=1.7, offset=0.0),
    ),
)
NOISE_PROFILES = {"silent": SILENT, "mic": MIC_NOISE, "factory": FACTORY_NOISE,
                  "loud_tones": LOUD_TONES}


@dataclass
class AudioBlock:
    samples: np.ndarray
    start_time: float
    sample_rate: float

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def _pink_sos(fs: float) -> np.ndarray:
    """First-order pole/zero sections alternating every half decade."""
    sections = []
    for pole_hz in (10.0, 100.0, 1000.0):
        p = math.exp(-2 * math.pi * pole_hz / fs)
        z = math.exp(-2 * math.pi * pole_hz * math.sqrt(10.0) / fs)
        sections.append([1.0, -z, 0.0, 1.0, -p, 0.0])
    return np.array(sections)


def _power_gain(sos: np.ndarray, n: int) -> float:
    impulse = np.zeros(n)
    impulse[0] = 1.0
    return float(np.sum(signal.sosfilt(sos, impulse) ** 2))


class NoiseSource:
    """Stateful pink noise plus gated tones, continuous across calls."""

    def __init__(self, profile: NoiseProfile, sample_rate: float, rng: np.random.Generator):
        self.profile = profile
        self.fs = sample_rate
        self.rng = rng
        # per-burst cycle amplitudes, drawn in cycle order from a separate stream
        self.burst_rngs = [np.random.default_rng(s) for s in
                           np.random.SeedSequence(int(rng.integers(2**63))).spawn(len(profile.tonal_bursts))]
        self.cycle_gains: list[list[float]] = [[] for _ in profile.tonal_bursts]
        self.sos = _pink_sos(sample_rate)
        self.norm = 1.0 / math.sqrt(_power_gain(self.sos, int(sample_rate)))
        self.zi = np.zeros((self.sos.shape[0], 2))
        self.index = 0

    def generate(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        if self.profile.pink_level > 0:
            white = self.rng.standard_normal(n)
            pink, self.zi = signal.sosfilt(self.sos, white, zi=self.zi)
            out += self.profile.pink_level * self.norm * pink
        if self.profile.tonal_bursts:
            t = (self.index + np.arange(n)) / self.fs
            for i, burst in enumerate(self.profile.tonal_bursts):
                amp = burst.amplitude * burst.gate(t)
                if burst.spread > 0:
                    cycles = np.maximum(burst.cycle(t), 0)
                    gains = self.cycle_gains[i]
                    while len(gains) <= cycles[-1]:
                        gains.append(1.0 + burst.spread * (2 * self.burst_rngs[i].random() - 1))
                    amp = amp * np.asarray(gains)[cycles]
                out += amp * np.sin(2 * np.pi * burst.frequency * t)
        self.index += n
        return out


def ambient_noise(profile: NoiseProfile, n_samples: int, rng_seed: int,
                  sample_rate: float = 16000.0) -> np.ndarray:
    """Factory-style ambient noise: pink floor plus intermittent tones."""
    if n_samples <= 0:
        raise AudioConfigError("n_samples must be > 0")
    source = NoiseSource(profile, sample_rate, np.random.default_rng(rng_seed))
    return source.generate(n_samples)


def design_mic_bandpass(low: float, high: float, order: int, fs: float) -> np.ndarray:
    if not 0 < low < high < fs / 2:
        raise AudioConfigError(f"invalid band-pass cutoffs ({low}, {high}) for fs={fs}")
    if order < 1:
        raise AudioConfigError("band-pass order must be >= 1")
    return signal.butter(order, [low, high], btype="bandpass", fs=fs, output="sos")


class MicFilter:
    """Cascaded biquad band-pass with state persisting across blocks."""

    def __init__(self, bandpass: tuple[float, float, int], fs: float):
        low, high, order = bandpass
        self.sos = design_mic_bandpass(low, high, int(order), fs)
        self.zi = np.zeros((self.sos.shape[0], 2))

    def __call__(self, samples: np.ndarray) -> np.ndarray:
        out, self.zi = signal.sosfilt(self.sos, samples, zi=self.zi)
        return out


def mic_filter(samples: np.ndarray, bandpass: tuple[float, float, int], fs: float,
               filter_state: MicFilter | None = None) -> tuple[np.ndarray, MicFilter]:
    """Apply the microphone band-pass; returns the output and the (updated) filter."""
    filt = filter_state if filter_state is not None else MicFilter(bandpass, fs)
    return filt(np.asarray(samples, dtype=float)), filt


@dataclass
class Synthesizer:
    """Streaming acoustic synthesizer for one microphone channel."""

    model: AcousticModel = field(default_factory=AcousticModel)
    noise: NoiseProfile = MIC_NOISE
    seed: int = 0
    max_omega: float = 3665.0

    def __post_init__(self):
        fs = self.model.sample_rate
        if self.model.harmonic_count < 1:
            raise AudioConfigError("need at least one harmonic")
        if any(a < 0 for a in self.model.harmonic_amplitudes):
            raise AudioConfigError("harmonic amplitudes must be >= 0")
        top = (self.model.harmonic_count * self.model.fundamental_multiplier
               * self.max_omega / (2 * math.pi))
        freqs = [top] + [f for f, _, _ in self.model.resonance_lines]
        freqs += [b.frequency for b in self.noise.tonal_bursts]
        if fs < 4 * max(freqs):
            raise AudioConfigError(
                f"sample rate {fs} Hz below 4x highest synthesized frequency {max(freqs):.1f} Hz")
        n_res = len(self.model.resonance_lines)
        children = np.random.SeedSequence(self.seed).spawn(n_res + 1)
        self._res_rngs = [np.random.default_rng(s) for s in children[1:]]
        noise_rng = np.random.default_rng(children[0])
        self._noise = NoiseSource(self.noise, fs, noise_rng)
        self._mic = MicFilter(self.model.mic_bandpass, fs)
        self._res_sos, self._res_norm = [], []
        for freq, _, bw in self.model.resonance_lines:
            b, a = signal.iirpeak(freq, freq / bw, fs=fs)
            sos = signal.tf2sos(b, a)
            self._res_sos.append(sos)
            self._res_norm.append(1.0 / math.sqrt(_power_gain(sos, int(fs))))
        self._res_zi = [np.zeros((s.shape[0], 2)) for s in self._res_sos]
        self.phase = 0.0
        self.index = 0

    def synthesize_block(self, omega: np.ndarray, engagement: float) -> AudioBlock:
        """One block of microphone samples for a per-sample omega trajectory."""
        omega = np.asarray(omega, dtype=float)
        if np.any(omega < 0) or np.any(omega > self.max_omega * (1 + 1e-9)):
            raise AudioConfigError("omega outside [0, max_omega]")
        fs = self.model.sample_rate
        n = len(omega)
        start = self.index / fs
        increments = omega * (self.model.fundamental_multiplier / fs)
        phase = np.cumsum(np.concatenate(([self.phase], increments)))[1:]
        # phase[k] is the phase reached after sample k; sample k uses the phase before it
        before = np.concatenate(([self.phase], phase[:-1]))
        self.phase = float(phase[-1])

        gain = self.model.wear_gain(engagement)
        harmonic = np.zeros(n)
        for h, (a, psi) in enumerate(zip(self.model.harmonic_amplitudes,
                                         self.model.harmonic_phases), start=1):
            harmonic += a * np.sin(h * before + psi)
        # a stationary rotor emits no tone
        harmonic *= gain * (omega > 0)

        # torque fraction on the linear motor curve; a stopped rotor excites nothing
        excitation = (1.0 - omega / self.max_omega) * (omega > 0)
        resonance = np.zeros(n)
        for i, (_, amp, _) in enumerate(self.model.resonance_lines):
            white = self._res_rngs[i].standard_normal(n)
            band, self._res_zi[i] = signal.sosfilt(self._res_sos[i], white, zi=self._res_zi[i])
            resonance += amp * self._res_norm[i] * gain * excitation * band

        raw = harmonic + resonance + self._noise.generate(n)
        out = np.clip(self.model.output_gain * self._mic(raw), -1.0, 1.0)
        self.index += n
        return AudioBlock(out, start, fs)


def write_wav(path, samples: np.ndarray, sample_rate: float) -> None:
    """16-bit PCM mono WAV."""
    pcm = np.round(np.clip(samples, -1.0, 1.0) * 32767).astype("<i2")
    path = Path(path)
    try:
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(int(round(sample_rate)))
            w.writeframes(pcm.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_wav(path) -> tuple[np.ndarray, float]:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise AudioConfigError(f"{path}: expected 16-bit mono PCM")
        fs = float(w.getframerate())
        data = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return data.astype(float) / 32767, fs
