"""PCM16 WAV decode/encode, windowed-sinc resampling and channel mixing."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import IoFailure, MalformedHeader, TruncatedData, UnsupportedEncoding

CANONICAL_RATE = 16000

_PCM = 1
_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioClip:
    """Decoded audio. ``samples`` has shape (channels, frames)."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[np.newaxis, :]
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise ValueError(f"samples must be (channels, frames), got {samples.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[1]

    @property
    def mono(self) -> np.ndarray:
        """The single channel of a mono clip."""
        if self.channels != 1:
            raise ValueError(f"expected a mono clip, got {self.channels} channels")
        return self.samples[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        yield cid, pos + 8, size
        pos += 8 + size + (size & 1)


def read_wav(path) -> AudioClip:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedHeader(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    for cid, start, size in _iter_chunks(data):
        if cid == b"fmt ":
            if size < 16 or start + 16 > len(data):
                raise MalformedHeader(f"{path}: short fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", data, start)
        elif cid == b"data":
            available = len(data) - start
            if available < size:
                raise TruncatedData(f"{path}: data chunk declares {size} bytes, {available} present")
            payload = data[start:start + size]
            if fmt is not None:
                break
    if fmt is None:
        raise MalformedHeader(f"{path}: missing 'fmt ' chunk")
    if payload is None:
        raise MalformedHeader(f"{path}: missing 'data' chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if tag not in (_PCM, _EXTENSIBLE) or bits != 16:
        raise UnsupportedEncoding(f"{path}: format tag {tag:#x}, {bits} bits; only PCM16 is supported")
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{path}: {channels} channels; only mono/stereo supported")
    if rate <= 0:
        raise MalformedHeader(f"{path}: sample rate {rate}")

    frame_bytes = 2 * channels
    if len(payload) % frame_bytes:
        raise TruncatedData(f"{path}: data length {len(payload)} not a multiple of frame size")
    ints = np.frombuffer(payload, dtype="<i2").reshape(-1, channels)
    return AudioClip(ints.T.astype(np.float64) / 32768.0, rate)


def encode_pcm16(samples: np.ndarray) -> np.ndarray:
    # same 32768 scale as the decoder, saturating at +32767, so a roundtrip
    # stays within one quantization step even near full scale
    scaled = np.round(np.clip(samples, -1.0, 1.0) * 32768.0)
    return np.clip(scaled, -32768, 32767).astype("<i2")


def wav_bytes(clip: AudioClip) -> bytes:
    ints = encode_pcm16(clip.samples).T.reshape(-1)
    payload = ints.tobytes()
    channels = clip.channels
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, _PCM, channels, clip.sample_rate,
        clip.sample_rate * channels * 2, channels * 2, 16,
        b"data", len(payload),
    )
    return header + payload


def write_wav(clip: AudioClip, path) -> None:
    if len(clip) == 0:
        raise ValueError("refusing to write an empty clip")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(wav_bytes(clip))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


_PHASES = 4096


@lru_cache(maxsize=8)
def _window_table(taps: int, beta: float) -> tuple[np.ndarray, np.ndarray]:
    half_width = taps + 1.0
    frac = np.arange(_PHASES + 1)[:, None] / _PHASES
    d = frac - np.arange(-taps + 1, taps + 1)[None, :]
    r = np.clip(d / half_width, -1.0, 1.0)
    return d, np.i0(beta * np.sqrt(1.0 - r * r)) / np.i0(beta)


@lru_cache(maxsize=64)
def _phase_table(taps: int, cutoff: float, beta: float) -> np.ndarray:
    """Kaiser-windowed sinc weights for fractional offsets j/_PHASES, shape (_PHASES + 1, 2*taps).

    Row j holds the weights applied to input samples floor(t) - taps + 1 ... floor(t) + taps
    when t - floor(t) = j/_PHASES.
    """
    d, window = _window_table(taps, beta)
    table = (cutoff * np.sinc(cutoff * d) * window).astype(np.float32)
    table.setflags(write=False)
    return table


def resample_array(x: np.ndarray, ratio: float, out_len: int | None = None,
                   taps: int = 32, beta: float = 8.6, rolloff: float = 0.95) -> np.ndarray:
    """Band-limited interpolation of ``x`` (..., n) onto a grid ``ratio`` times denser.

    Output sample ``m`` sits at input position ``m / ratio``; samples outside the
    input count as zero. Kernel weights come from the nearest of _PHASES
    precomputed fractional offsets (timing error below 1/8192 sample).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if out_len is None:
        out_len = int(round(n * ratio))
    table = _phase_table(taps, round(min(1.0, ratio) * rolloff, 12), beta)
    lead = x.shape[:-1]
    padded = np.concatenate([np.zeros(lead + (taps - 1,)), x, np.zeros(lead + (2 * taps + 1,))], axis=-1)
    windows = np.lib.stride_tricks.sliding_window_view(padded, 2 * taps, axis=-1)
    out = np.empty(lead + (out_len,))
    block = 8192
    for start in range(0, out_len, block):
        t = np.arange(start, min(start + block, out_len)) / ratio
        base = np.minimum(np.floor(t), n + taps).astype(np.int64)
        j = np.minimum(np.rint((t - base) * _PHASES), _PHASES).astype(np.int64)
        out[..., start:start + len(t)] = np.einsum("...mk,mk->...m", windows[..., base, :], table[j])
    return out


def resample(clip: AudioClip, target_rate: int, taps: int = 32) -> AudioClip:
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    ratio = target_rate / clip.sample_rate
    out_len = int(round(len(clip) * ratio))
    return AudioClip(resample_array(clip.samples, ratio, out_len, taps=taps), target_rate)


def to_mono(clip: AudioClip) -> AudioClip:
    if clip.channels == 1:
        return clip
    return AudioClip(clip.samples.mean(axis=0, keepdims=True), clip.sample_rate)


def load_canonical(path, rate: int = CANONICAL_RATE) -> AudioClip:
    """Read, mix to mono and resample to the pipeline rate."""
    return resample(to_mono(read_wav(path)), rate)
