"""STFT, mel filterbank, dB scaling and image rendering of log-mel features."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .audio_io import AudioClip
from .errors import DegenerateBank, MalformedHeader

AMIN = 1e-10
IMAGE_MEAN = (0.485, 0.456, 0.406)
IMAGE_STD = (0.229, 0.224, 0.225)
IMAGE_SIZE = 224


@dataclass(frozen=True)
class MelConfig:
    n_fft: int = 2048
    hop: int = 512
    n_mels: int = 128
    fmin: float = 0.0
    fmax: float = 8000.0
    top_db: float = 80.0

    def __post_init__(self):
        if self.n_fft <= 0 or self.n_fft & (self.n_fft - 1):
            raise ValueError(f"n_fft must be a power of two, got {self.n_fft}")
        if not 0 < self.hop <= self.n_fft:
            raise ValueError(f"hop must be in (0, n_fft], got {self.hop}")
        if self.n_mels < 2:
            raise ValueError(f"n_mels must be >= 2, got {self.n_mels}")
        if not 0 <= self.fmin < self.fmax:
            raise ValueError(f"need 0 <= fmin < fmax, got {self.fmin}, {self.fmax}")
        if self.top_db <= 0:
            raise ValueError(f"top_db must be positive, got {self.top_db}")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def check_rate(self, sample_rate: int) -> None:
        if self.fmax > sample_rate / 2:
            raise ValueError(f"fmax {self.fmax} exceeds Nyquist for {sample_rate} Hz")


@dataclass(frozen=True)
class ComplexSpectrogram:
    bins: np.ndarray  # (n_bins, frames)
    config: MelConfig
    sample_rate: int


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # (n_mels, frames), dB
    config: MelConfig = field(default_factory=MelConfig)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class SpectroImage:
    pixels: np.ndarray  # (3, H, W)
    label: str | None = None


def hz_to_mel(f):
    return 2595.0 * np.log1p(np.asarray(f, dtype=np.float64) / 700.0) / np.log(10.0)


def mel_to_hz(m):
    return 700.0 * np.expm1(np.asarray(m, dtype=np.float64) * np.log(10.0) / 2595.0)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (symmetric about n/2, which keeps centered frames reversible)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def mel_points(cfg: MelConfig) -> np.ndarray:
    """The n_mels + 2 flank/center frequencies in Hz."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return mel_to_hz(mels)


def mel_filterbank(cfg: MelConfig, sample_rate: int) -> np.ndarray:
    return _filterbank(cfg, int(sample_rate)).copy()


@lru_cache(maxsize=16)
def _filterbank(cfg: MelConfig, sample_rate: int) -> np.ndarray:
    cfg.check_rate(sample_rate)
    hz = mel_points(cfg)
    bin_width = sample_rate / cfg.n_fft
    which_bin = np.floor(hz / bin_width)
    clash = np.nonzero(which_bin[1:] == which_bin[:-1])[0]
    if clash.size:
        j = int(clash[0])
        raise DegenerateBank(
            f"mel points {hz[j]:.2f} Hz and {hz[j + 1]:.2f} Hz fall in the same FFT bin; "
            f"n_fft={cfg.n_fft} is too small for n_mels={cfg.n_mels}")
    freqs = np.arange(cfg.n_bins) * bin_width
    lo, mid, hi = hz[:-2, None], hz[1:-1, None], hz[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    bank.setflags(write=False)
    return bank


def frame_count(n_samples: int, hop: int) -> int:
    return 1 + n_samples // hop


def _frames(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    pad = n_fft // 2
    padded = np.pad(x, pad, mode="reflect") if len(x) > 1 else np.pad(x, pad, mode="edge")
    n_frames = frame_count(len(x), hop)
    windows = np.lib.stride_tricks.sliding_window_view(padded, n_fft)
    return windows[: (n_frames - 1) * hop + 1: hop]


def stft_array(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Centered, Hann-windowed STFT of a 1-D signal, shape (n_fft//2 + 1, frames)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) < 1:
        raise ValueError("stft needs a non-empty 1-D signal")
    frames = _frames(x, n_fft, hop) * hann(n_fft)
    return np.fft.rfft(frames, axis=1).T


def istft_array(spec: np.ndarray, n_fft: int, hop: int, length: int) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft_array`, trimmed/padded to ``length``."""
    window = hann(n_fft)
    n_frames = spec.shape[1]
    frames = np.fft.irfft(spec.T, n=n_fft, axis=1) * window
    total = n_fft + hop * (n_frames - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    wsq = window * window
    for t in range(n_frames):
        out[t * hop: t * hop + n_fft] += frames[t]
        norm[t * hop: t * hop + n_fft] += wsq
    nonzero = norm > 1e-8
    out[nonzero] /= norm[nonzero]
    out = out[n_fft // 2:]
    if len(out) >= length:
        return out[:length]
    return np.pad(out, (0, length - len(out)))


def stft(clip: AudioClip, cfg: MelConfig = MelConfig()) -> ComplexSpectrogram:
    return ComplexSpectrogram(stft_array(clip.mono, cfg.n_fft, cfg.hop), cfg, clip.sample_rate)


def power_to_db(power: np.ndarray, top_db: float = 80.0) -> np.ndarray:
    power = np.asarray(power, dtype=np.float64)
    if np.any(power < 0):
        raise ValueError("power must be non-negative")
    db = 10.0 * np.log10(np.maximum(power, AMIN))
    db = db - db.max()
    return np.maximum(db, -top_db)


def mel_spectrogram(clip: AudioClip, cfg: MelConfig = MelConfig()) -> MelSpectrogram:
    spec = stft(clip, cfg)
    power = np.abs(spec.bins) ** 2
    mel = _filterbank(cfg, clip.sample_rate) @ power
    return MelSpectrogram(power_to_db(mel, cfg.top_db), cfg)


def _linear_resize_axis(a: np.ndarray, size: int, axis: int) -> np.ndarray:
    n = a.shape[axis]
    # half-pixel centers, edge-clamped
    pos = np.clip((np.arange(size) + 0.5) * (n / size) - 0.5, 0.0, n - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    shape = [1] * a.ndim
    shape[axis] = size
    frac = frac.reshape(shape)
    return np.take(a, lo, axis=axis) * (1.0 - frac) + np.take(a, hi, axis=axis) * frac


def bilinear_resize(plane: np.ndarray, height: int, width: int) -> np.ndarray:
    return _linear_resize_axis(_linear_resize_axis(plane, height, 0), width, 1)


def grayscale_plane(mel: MelSpectrogram, size: int = IMAGE_SIZE) -> np.ndarray:
    """Resized, min-max scaled plane in [0, 1]; constant input gives all zeros.

    Scaling happens after the resize so the extremes land exactly on 0 and 1.
    """
    values = np.asarray(mel.values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("mel spectrogram contains non-finite values")
    plane = bilinear_resize(values, size, size)
    lo, hi = plane.min(), plane.max()
    if hi == lo:
        return np.zeros_like(plane)
    return (plane - lo) / (hi - lo)


def normalize_plane(plane: np.ndarray) -> np.ndarray:
    """Replicate a [0, 1] plane into 3 channels and apply the per-channel mean/std."""
    mean = np.asarray(IMAGE_MEAN).reshape(3, 1, 1)
    std = np.asarray(IMAGE_STD).reshape(3, 1, 1)
    return (plane[None, :, :] - mean) / std


def render_image(mel: MelSpectrogram, size: int = IMAGE_SIZE, label: str | None = None) -> SpectroImage:
    return SpectroImage(normalize_plane(grayscale_plane(mel, size)), label)


def write_mels(mel: MelSpectrogram, path) -> None:
    values = np.ascontiguousarray(mel.values, dtype="<f4")
    n_mels, frames = values.shape
    Path(path).write_bytes(b"MELS" + struct.pack("<II", n_mels, frames) + values.tobytes())


def read_mels(path, cfg: MelConfig = MelConfig()) -> MelSpectrogram:
    data = Path(path).read_bytes()
    if data[:4] != b"MELS" or len(data) < 12:
        raise MalformedHeader(f"{path}: not a MELS file")
    n_mels, frames = struct.unpack_from("<II", data, 4)
    if len(data) - 12 != 4 * n_mels * frames:
        raise MalformedHeader(f"{path}: payload size does not match {n_mels}x{frames}")
    values = np.frombuffer(data, dtype="<f4", offset=12).reshape(n_mels, frames)
    return MelSpectrogram(values.astype(np.float64), cfg)
