"""MFCC front-end: 25 ms Hamming frames every 10 ms, magnitude spectrum via an
in-house radix-2 FFT, triangular mel filterbank, log, orthonormal DCT-II.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError

LOG_FLOOR = 1e-10


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("audio contains non-finite samples")


@dataclass
class MfccConfig:
    sample_rate: int = 16000
    frame_ms: int = 25
    hop_ms: int = 10
    n_mel_filters: int = 40
    n_ceps: int = 40
    fmin: float = 20.0
    fmax: Optional[float] = None
    mean_norm: bool = False

    def __post_init__(self):
        if self.n_ceps > self.n_mel_filters:
            raise ConfigError("n_ceps must not exceed n_mel_filters")
        if self.frame_ms <= self.hop_ms:
            raise ConfigError("frame_ms must exceed hop_ms")
        if self.fmax is not None and self.fmax > self.sample_rate / 2:
            raise ConfigError(f"fmax {self.fmax} Hz is above Nyquist ({self.sample_rate / 2} Hz)")
        if not 0 <= self.fmin < self.upper_hz:
            raise ConfigError("need 0 <= fmin < fmax")

    @property
    def frame_length(self) -> int:
        return self.sample_rate * self.frame_ms // 1000

    @property
    def hop_length(self) -> int:
        return self.sample_rate * self.hop_ms // 1000

    @property
    def fft_size(self) -> int:
        return 1 << (self.frame_length - 1).bit_length()

    @property
    def upper_hz(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else float(self.fmax)


def frame_signal(audio: AudioBuffer, cfg: MfccConfig) -> np.ndarray:
    """(n_frames, frame_length) view-copy; a trailing partial frame is dropped."""
    n, hop = cfg.frame_length, cfg.hop_length
    x = audio.samples
    if x.size < n:
        raise DataError(f"audio has {x.size} samples, shorter than one {n}-sample frame")
    count = 1 + (x.size - n) // hop
    idx = np.arange(count)[:, None] * hop + np.arange(n)[None, :]
    return x[idx]


def hamming_window(n: int) -> np.ndarray:
    if n < 2:
        raise ValueError("window length must be >= 2")
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    lead = x.shape[:-1]
    X = x[..., _bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        X = X.reshape(*lead, n // size, size)
        even = X[..., :half]
        odd = X[..., half:] * tw
        X = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        size *= 2
    return X


def magnitude_spectrum(frames: np.ndarray, fft_size: int) -> np.ndarray:
    padded = np.zeros((frames.shape[0], fft_size))
    padded[:, : frames.shape[1]] = frames
    return np.abs(fft(padded)[:, : fft_size // 2 + 1])


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_edges(cfg: MfccConfig) -> np.ndarray:
    """n_filters + 2 corner frequencies (Hz), equally spaced on the mel scale."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.upper_hz), cfg.n_mel_filters + 2)
    return mel_to_hz(mels)


def mel_filter_response(freqs, cfg: MfccConfig) -> np.ndarray:
    """Triangular filter weights (n_filters, len(freqs)), peak 1 at each centre."""
    f = np.asarray(freqs, dtype=np.float64)[None, :]
    e = mel_edges(cfg)
    lo, mid, hi = e[:-2, None], e[1:-1, None], e[2:, None]
    rise = (f - lo) / (mid - lo)
    fall = (hi - f) / (hi - mid)
    return np.clip(np.minimum(rise, fall), 0.0, None)


def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    bins = np.arange(cfg.fft_size // 2 + 1) * cfg.sample_rate / cfg.fft_size
    return mel_filter_response(bins, cfg)


def filter_centers(cfg: MfccConfig) -> np.ndarray:
    return mel_edges(cfg)[1:-1]


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II operator: row k is basis function k."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    C = np.cos(np.pi * k * (2 * i + 1) / (2 * n)) * np.sqrt(2.0 / n)
    C[0] /= np.sqrt(2.0)
    return C


def log_mel_energies(audio: AudioBuffer, cfg: MfccConfig) -> np.ndarray:
    if audio.sample_rate != cfg.sample_rate:
        raise DataError(f"audio is {audio.sample_rate} Hz but the front-end expects {cfg.sample_rate} Hz")
    frames = frame_signal(audio, cfg) * hamming_window(cfg.frame_length)
    spec = magnitude_spectrum(frames, cfg.fft_size)
    energies = spec @ mel_filterbank(cfg).T
    return np.log(np.maximum(energies, LOG_FLOOR))


def mfcc(audio: AudioBuffer, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """(n_frames, n_ceps) mel cepstra."""
    logmel = log_mel_energies(audio, cfg)
    ceps = logmel @ dct_matrix(cfg.n_mel_filters)[: cfg.n_ceps].T
    if cfg.mean_norm:
        ceps = ceps - ceps.mean(axis=0, keepdims=True)
    return ceps


def read_wav(path) -> AudioBuffer:
    """16-bit signed PCM mono RIFF/WAVE only."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise DataError(f"{path}: {w.getnchannels()} channels; only mono is accepted")
            if w.getsampwidth() != 2:
                raise DataError(f"{path}: {8 * w.getsampwidth()}-bit samples; only 16-bit PCM is accepted")
            if w.getcomptype() != "NONE":
                raise DataError(f"{path}: compressed WAV is not accepted")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as e:
        raise DataError(f"{path}: malformed WAV ({e})")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(samples, rate)


def write_wav(path, audio: AudioBuffer, channels: int = 1) -> None:
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    if channels > 1:
        pcm = np.repeat(pcm, channels)
    with wave.open(str(Path(path)), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(2)
        w.setframerate(audio.sample_rate)
        w.writeframes(pcm.tobytes())
