import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spokensem.errors import DataError, FormatError, LengthError
from spokensem.frontend import AudioClip, FrontendConfig, extract_mfcc, read_wav, write_wav


def reference_mfcc(signal, sr=16000):
    """Textbook MFCC written with explicit loops: DFT -> mel triangles -> log -> DCT-II."""
    win, hop, nfft, nmel = 400, 160, 512, 40
    emph = [signal[0]] + [signal[i] - 0.97 * signal[i - 1] for i in range(1, len(signal))]
    hamming = [0.54 - 0.46 * math.cos(2 * math.pi * i / (win - 1)) for i in range(win)]

    def mel(f):
        return 2595.0 * math.log10(1 + f / 700.0)

    def imel(m):
        return 700.0 * (10 ** (m / 2595.0) - 1)

    lo, hi = mel(0.0), mel(8000.0)
    centers = [imel(lo + (hi - lo) * i / (nmel + 1)) for i in range(nmel + 2)]
    k = np.arange(nfft // 2 + 1)
    rows = []
    for start in range(0, len(signal) - win + 1, hop):
        frame = np.array([emph[start + i] * hamming[i] for i in range(win)])
        n = np.arange(win)
        # explicit DFT over the zero-padded 512-point frame
        spec = np.array([np.sum(frame * np.exp(-2j * np.pi * kk * n / nfft)) for kk in k])
        power = np.abs(spec) ** 2 / nfft
        freqs = k * sr / nfft
        logmel = []
        for m in range(nmel):
            l, c, r = centers[m], centers[m + 1], centers[m + 2]
            w = [max(0.0, min((f - l) / (c - l), (r - f) / (r - c))) for f in freqs]
            logmel.append(math.log(max(float(np.dot(w, power)), 1e-10)))
        ceps = []
        for q in range(1, 13):
            s = sum(logmel[m] * math.cos(math.pi * q * (2 * m + 1) / (2 * nmel)) for m in range(nmel))
            ceps.append(s * math.sqrt(2.0 / nmel))
        energy = math.log(max(float(np.sum(frame**2)), 1e-10))
        rows.append(ceps + [energy])
    return np.array(rows)


def test_frame_count_one_second():
    clip = AudioClip(np.random.default_rng(0).uniform(-0.5, 0.5, 16000), 16000)
    assert extract_mfcc(clip).shape == (98, 13)


def test_silence_gives_floor_energy():
    fm = extract_mfcc(AudioClip(np.zeros(4000), 16000))
    np.testing.assert_array_equal(fm[:, 12], np.full(len(fm), np.log(1e-10)))


def test_sine_matches_reference_oracle():
    t = np.arange(16000) / 16000
    signal = np.sin(2 * np.pi * 440 * t)
    ours = extract_mfcc(AudioClip(signal, 16000))
    ref = reference_mfcc(list(signal))
    assert ours.shape == ref.shape
    np.testing.assert_allclose(ours, ref, atol=1e-6, rtol=0)


def test_short_clip_raises():
    with pytest.raises(LengthError):
        extract_mfcc(AudioClip(np.zeros(399), 16000))


def test_nonfinite_samples_raise():
    x = np.zeros(800)
    x[10] = np.nan
    with pytest.raises(DataError):
        extract_mfcc(AudioClip(x, 16000))


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=400, max_value=6000))
def test_frame_count_formula(n):
    fm = extract_mfcc(AudioClip(np.random.default_rng(n).uniform(-1, 1, n), 16000))
    assert len(fm) == 1 + (n - 400) // 160


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=0.05, max_value=20.0))
def test_amplitude_scaling_shifts_energy_only(a):
    x = np.random.default_rng(7).uniform(-0.05, 0.05, 3200)
    base = extract_mfcc(AudioClip(x, 16000))
    scaled = extract_mfcc(AudioClip(a * x, 16000))
    np.testing.assert_allclose(scaled[:, 12] - base[:, 12], 2 * np.log(a), atol=1e-9)
    np.testing.assert_allclose(scaled[:, :12], base[:, :12], atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(min_value=-1, max_value=1), min_size=400, max_size=900))
def test_output_always_finite(samples):
    assert np.all(np.isfinite(extract_mfcc(AudioClip(np.array(samples), 16000))))


def test_wav_roundtrip_and_stereo(tmp_path):
    rng = np.random.default_rng(3)
    mono = AudioClip(rng.uniform(-0.5, 0.5, 1600), 16000)
    write_wav(tmp_path / "a.wav", mono)
    back = read_wav(tmp_path / "a.wav")
    np.testing.assert_allclose(back.samples, mono.samples, atol=1 / 32767)

    import wave
    left = np.full(800, 1000, dtype="<i2")
    right = np.full(800, 3000, dtype="<i2")
    with wave.open(str(tmp_path / "s.wav"), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(16000)
        wf.writeframes(np.column_stack([left, right]).reshape(-1).tobytes())
    stereo = read_wav(tmp_path / "s.wav")
    np.testing.assert_allclose(stereo.samples, 2000 / 32768)


def test_wav_resampled_to_16k(tmp_path):
    write_wav(tmp_path / "lo.wav", AudioClip(np.zeros(8000), 8000))
    clip = read_wav(tmp_path / "lo.wav")
    assert clip.sample_rate == 16000 and len(clip.samples) == 16000


def test_corrupt_wav(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"RIFFnot really a wav")
    with pytest.raises(FormatError):
        read_wav(tmp_path / "bad.wav")


def test_sample_rate_mismatch():
    with pytest.raises(DataError):
        extract_mfcc(AudioClip(np.zeros(800), 8000), FrontendConfig())
