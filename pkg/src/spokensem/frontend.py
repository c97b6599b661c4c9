"""MFCC + log-energy front end.

Each utterance becomes a ``T x 13`` matrix: cepstral coefficients c1..c12
in columns 0-11 and the log total frame energy in column 12, computed over
25 ms windows every 10 ms.
"""
from dataclasses import dataclass
from math import gcd
import wave

import numpy as np
from scipy.fft import dct, rfft
from scipy.signal import resample_poly

from .errors import DataError, FormatError, LengthError

NUM_FEATURES = 13


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 16000
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    preemphasis: float = 0.97
    n_fft: int = 512
    n_mels: int = 40
    fmin: float = 0.0
    fmax: float = 8000.0
    num_ceps: int = 12
    log_floor: float = 1e-10
    energy_floor: float = 1e-10

    @property
    def window_samples(self):
        return int(round(self.sample_rate * self.frame_length_ms / 1000.0))

    @property
    def hop_samples(self):
        return int(round(self.sample_rate * self.frame_shift_ms / 1000.0))


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate) <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)


def num_frames(num_samples, window, hop):
    if num_samples < window:
        raise LengthError(f"{num_samples} samples is shorter than one {window}-sample window")
    return 1 + (num_samples - window) // hop


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config=FrontendConfig()):
    """Triangular filters (n_mels x n_fft//2+1) on a linear-frequency grid."""
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2))
    freqs = np.arange(config.n_fft // 2 + 1) * config.sample_rate / config.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_signal(signal, window, hop):
    t = num_frames(len(signal), window, hop)
    idx = np.arange(window)[None, :] + hop * np.arange(t)[:, None]
    return signal[idx]


def extract_mfcc(clip, config=FrontendConfig()):
    """Return the ``T x 13`` float64 feature matrix for ``clip``."""
    if clip.sample_rate != config.sample_rate:
        raise DataError(
            f"clip sampled at {clip.sample_rate} Hz, front end expects {config.sample_rate} Hz"
        )
    x = clip.samples
    if not np.all(np.isfinite(x)):
        raise DataError("audio contains non-finite samples")
    # pre-emphasis runs over the whole signal before framing
    emph = np.concatenate([x[:1], x[1:] - config.preemphasis * x[:-1]])
    frames = frame_signal(emph, config.window_samples, config.hop_samples)
    frames = frames * np.hamming(config.window_samples)[None, :]

    power = np.abs(rfft(frames, n=config.n_fft, axis=1)) ** 2 / config.n_fft
    mel = power @ mel_filterbank(config).T
    logmel = np.log(np.maximum(mel, config.log_floor))
    ceps = dct(logmel, type=2, norm="ortho", axis=1)[:, 1 : config.num_ceps + 1]

    energy = np.log(np.maximum(np.sum(frames**2, axis=1), config.energy_floor))
    return np.column_stack([ceps, energy])


def normalize_features(matrices):
    """Corpus-level mean/variance normalization per feature column."""
    stacked = np.concatenate([np.asarray(m, dtype=np.float64) for m in matrices], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std == 0] = 1.0
    return [((np.asarray(m, dtype=np.float64) - mean) / std) for m in matrices]


def read_wav(path, target_rate=16000):
    """Read 16-bit PCM WAV, average channels to mono, resample to ``target_rate``."""
    try:
        with wave.open(str(path), "rb") as wf:
            width = wf.getsampwidth()
            channels = wf.getnchannels()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: unreadable WAV ({exc})") from exc
    if width != 2:
        raise FormatError(f"{path}: only 16-bit PCM is supported (sample width {width})")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        pcm = pcm[: len(pcm) - len(pcm) % channels].reshape(-1, channels).mean(axis=1)
    if rate != target_rate:
        g = gcd(rate, target_rate)
        pcm = resample_poly(pcm, target_rate // g, rate // g)
        rate = target_rate
    return AudioClip(pcm, rate)


def write_wav(path, clip):
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.tobytes())
