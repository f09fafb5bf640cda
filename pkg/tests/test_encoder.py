import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acoustic_grind.audio import AudioBlock
from acoustic_grind.encoder import (
    EncoderConfig, EncoderConfigError, StreamError, StreamingEncoder, dump_frames_csv, dump_window,
    encode_frame, encode_recording, hann_window, load_window, power_spectral_density, stack_windows,
)

CFG = EncoderConfig()


def naive_psd(x, fs):
    n = len(x)
    w = np.array([0.5 * (1 - math.cos(2 * math.pi * k / (n - 1))) for k in range(n)])
    out = []
    for k in range(n // 2 + 1):
        re = sum(w[j] * x[j] * math.cos(2 * math.pi * k * j / n) for j in range(n))
        im = -sum(w[j] * x[j] * math.sin(2 * math.pi * k * j / n) for j in range(n))
        p = (re * re + im * im) / (fs * float(np.sum(w * w)))
        if 0 < k < n / 2:
            p *= 2
        out.append(p)
    return np.array(out)


def blocks(x, size, fs=16000.0, start=0):
    for i in range(0, len(x), size):
        yield AudioBlock(x[i:i + size], (start + i) / fs, fs)


def test_default_shape():
    assert CFG.bins == 35 and CFG.frames == 40
    assert CFG.window_samples == 1600 and CFG.hop_samples == 800
    assert CFG.bin_frequencies[0] == 230.0 and CFG.bin_frequencies[-1] == 570.0


def test_hann_properties():
    w = hann_window(9)
    assert w[0] == 0.0 and w[-1] == 0.0 and w[4] == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(w, w[::-1], atol=1e-15)
    ref = [0.5 * (1 - math.cos(2 * math.pi * k / 7)) for k in range(8)]
    np.testing.assert_allclose(hann_window(8), ref, atol=1e-15, rtol=0)
    with pytest.raises(EncoderConfigError):
        hann_window(1)


def test_psd_matches_naive_dft():
    x = np.random.default_rng(3).standard_normal(64)
    ref = naive_psd(x, 1000.0)
    got = power_spectral_density(x, 1000.0)
    assert np.max(np.abs(got - ref)) / np.max(ref) < 1e-9
    assert not np.any(power_spectral_density(np.zeros(64), 1000.0))


def test_windowed_parseval():
    for n in (64, 65):
        x = np.random.default_rng(n).standard_normal(n)
        w = hann_window(n)
        fs = 2000.0
        mean_power = np.sum((w * x) ** 2) / np.sum(w ** 2)
        # sum of PSD times bin width equals the window-weighted mean power
        total = np.sum(power_spectral_density(x, fs)) * fs / n
        # the one-sided doubling counts the Nyquist bin once for even n
        assert total == pytest.approx(mean_power, rel=1e-9)


def test_psd_length_checked():
    with pytest.raises(EncoderConfigError):
        power_spectral_density(np.zeros(10), 16000.0, expected_length=1600)


def test_bin_centre_tone_peaks_at_its_bin():
    t = np.arange(1600) / 16000.0
    frame = encode_frame(np.sin(2 * np.pi * 400.0 * t), CFG)
    k = int(np.argmax(frame.values))
    assert CFG.bin_frequencies[k] == 400.0
    assert frame.values[k] == 1.0 and frame.values.min() == 0.0
    others = np.delete(frame.values, [k - 1, k, k + 1])
    assert np.max(others) < 1e-3
    assert len(frame.values) == 35


def test_silence_is_degenerate():
    frame = encode_frame(np.zeros(1600), CFG)
    assert frame.degenerate and not np.any(frame.values)


def test_band_mismatch_is_configuration_error():
    with pytest.raises(EncoderConfigError):
        EncoderConfig(band_high=600.0)
    with pytest.raises(EncoderConfigError):
        EncoderConfig(band_high=9000.0, expected_bins=None)


def test_rate_and_warmup():
    enc = StreamingEncoder(CFG)
    assert enc.push_audio(AudioBlock(np.ones(1000), 0.0, 16000.0)) == []
    enc = StreamingEncoder(CFG)
    x = np.random.default_rng(0).standard_normal(32000)
    enc.push_audio(AudioBlock(x[:16000], 0.0, 16000.0))
    frames = enc.push_audio(AudioBlock(x[16000:], 1.0, 16000.0))
    assert len(frames) == 20
    assert frames[-1].frame_time == pytest.approx(2.0)


def test_gap_raises_stream_error():
    enc = StreamingEncoder(CFG)
    enc.push_audio(AudioBlock(np.ones(800), 0.0, 16000.0))
    with pytest.raises(StreamError) as exc:
        enc.push_audio(AudioBlock(np.ones(800), 0.1, 16000.0))
    assert exc.value.gap_samples == 800


def test_overlapping_frame_recomputed_offline():
    x = np.random.default_rng(1).standard_normal(4000)
    enc = StreamingEncoder(CFG)
    frames = []
    for b in blocks(x, 333):
        frames += enc.push_audio(b)
    second = frames[1]
    end = int(round(second.frame_time * 16000))
    np.testing.assert_array_equal(second.values, encode_frame(x[end - 1600:end], CFG).values)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 5000), st.integers(0, 2**31))
def test_streaming_equals_offline(block, seed):
    x = np.random.default_rng(seed).standard_normal(12000)
    enc = StreamingEncoder(CFG)
    stream = []
    for b in blocks(x, block):
        stream += enc.push_audio(b)
    offline = encode_recording(x, CFG)
    assert len(stream) == len(offline)
    for a, b in zip(stream, offline):
        assert a.frame_time == b.frame_time
        np.testing.assert_array_equal(a.values, b.values)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_gain_invariance(c):
    x = np.random.default_rng(5).standard_normal(1600)
    a = encode_frame(x, CFG).values
    b = encode_frame(c * x, CFG).values
    assert np.max(np.abs(a - b)) < 1e-9


def test_causality():
    x = np.random.default_rng(2).standard_normal(8000)
    y = x.copy()
    y[4800:] = 0.0
    fa = encode_recording(x, CFG)
    fb = encode_recording(y, CFG)
    for a, b in zip(fa, fb):
        if a.frame_time <= 4800 / 16000:
            np.testing.assert_array_equal(a.values, b.values)


def test_current_input_zero_fill_and_order():
    enc = StreamingEncoder(CFG)
    t = np.arange(16000 * 3) / 16000.0
    x = np.sin(2 * np.pi * 300.0 * t)
    enc.push_audio(AudioBlock(x[:1600], 0.0, 16000.0))
    w = enc.current_input()
    assert w.warmup and w.X.shape == (35, 40)
    assert not np.any(w.X[:, :39]) and np.any(w.X[:, 39])
    enc.push_audio(AudioBlock(x[1600:], 0.1, 16000.0))
    w = enc.current_input()
    assert not w.warmup
    # stationary tone: every column is the same frame
    np.testing.assert_allclose(w.X, np.repeat(w.X[:, -1:], 40, axis=1), atol=1e-9)
    assert w.end_time == pytest.approx(3.0)


def test_stack_windows_match_streaming_window():
    x = np.random.default_rng(9).standard_normal(16000 * 3)
    frames = encode_recording(x, CFG)
    X, times = stack_windows(frames, CFG)
    enc = StreamingEncoder(CFG)
    enc.push_audio(AudioBlock(x, 0.0, 16000.0))
    np.testing.assert_array_equal(X[-1], enc.current_input().X)
    assert times[-1] == enc.current_input().end_time
    assert stack_windows(frames[:5], CFG)[0].shape == (0, 35, 40)


def test_throughput():
    x = np.random.default_rng(0).standard_normal(16000)
    enc = StreamingEncoder(CFG)
    start = time.perf_counter()
    enc.push_audio(AudioBlock(x, 0.0, 16000.0))
    assert time.perf_counter() - start < 0.05


def test_debug_dumps(tmp_path):
    x = np.random.default_rng(0).standard_normal(16000)
    frames = encode_recording(x, CFG)
    dump_frames_csv(frames, tmp_path / "f.csv")
    rows = np.loadtxt(tmp_path / "f.csv", delimiter=",")
    assert rows.shape == (len(frames), 36)
    enc = StreamingEncoder(CFG)
    enc.push_audio(AudioBlock(x, 0.0, 16000.0))
    w = enc.current_input()
    dump_window(w, tmp_path / "w.bin")
    assert len((tmp_path / "w.bin").read_bytes()) == 16 + 35 * 40 * 8
    back = load_window(tmp_path / "w.bin")
    np.testing.assert_array_equal(back.X, w.X)
    assert back.end_time == pytest.approx(w.end_time)
