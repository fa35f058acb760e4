"""Adversarial manipulations: phase-vocoder tempo stretch and pitch shift.

Each clip gets its own random parameters, drawn from a generator keyed on
``(seed, clip_index)`` so that results do not depend on processing order.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, load_canonical, resample_array, write_wav
from .dataset import Manifest, ManifestEntry
from .dsp import istft_array, stft_array
from .errors import PipelineError

log = logging.getLogger(__name__)

KINDS = ("none", "tempo", "pitch", "pitch_tempo")
VARIANT_NAMES = {
    "none": "Baseline",
    "tempo": "Tempo Stretch",
    "pitch": "Pitch Shift",
    "pitch_tempo": "Pitch Shift + Tempo Stretch",
}

VOCODER_FFT = 2048
VOCODER_HOP = 512


@dataclass(frozen=True)
class AugmentSpec:
    kind: str = "none"
    seed: int = 0
    rate_range: tuple[float, float] = (0.8, 1.2)
    semitone_range: tuple[float, float] = (-2.0, 2.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}; expected one of {KINDS}")


def phase_vocoder(spec: np.ndarray, rate: float, hop: int) -> np.ndarray:
    """Read STFT frames at fractional stride ``rate`` keeping per-bin phase coherent.

    Magnitudes are interpolated linearly between neighbouring frames. The phase
    advances by the expected per-bin increment plus the wrapped deviation
    measured between those two frames.
    """
    n_bins, n_frames = spec.shape
    n_fft = 2 * (n_bins - 1)
    steps = np.arange(0.0, n_frames, rate)
    padded = np.pad(spec, ((0, 0), (0, 2)))
    expected = (2.0 * np.pi * hop * np.arange(n_bins) / n_fft)[:, None]
    i = steps.astype(np.int64)
    alpha = steps - i
    mag = np.abs(padded)
    ang = np.angle(padded)
    magnitude = (1.0 - alpha) * mag[:, i] + alpha * mag[:, i + 1]
    dev = ang[:, i + 1] - ang[:, i] - expected
    dev -= 2.0 * np.pi * np.round(dev / (2.0 * np.pi))
    advance = expected + dev
    # phase used for output frame t accumulates the advances of frames 0..t-1
    phase = ang[:, :1] + np.concatenate([np.zeros((n_bins, 1)), np.cumsum(advance[:, :-1], axis=1)], axis=1)
    return magnitude * np.exp(1j * phase)


def _stretch_array(x: np.ndarray, rate: float) -> np.ndarray:
    spec = stft_array(x, VOCODER_FFT, VOCODER_HOP)
    stretched = phase_vocoder(spec, rate, VOCODER_HOP)
    return istft_array(stretched, VOCODER_FFT, VOCODER_HOP, int(round(len(x) / rate)))


def time_stretch(clip: AudioClip, rate: float) -> AudioClip:
    """Change duration by 1/rate (rate > 1 speeds up) without changing pitch."""
    if not 0.25 <= rate <= 4.0:
        raise ValueError(f"stretch rate {rate} outside [0.25, 4]")
    return AudioClip(_stretch_array(clip.mono, rate), clip.sample_rate)


def pitch_shift(clip: AudioClip, semitones: float) -> AudioClip:
    """Scale every frequency by 2**(semitones/12), keeping the length."""
    if not -12.0 <= semitones <= 12.0:
        raise ValueError(f"pitch shift {semitones} semitones outside [-12, 12]")
    factor = 2.0 ** (semitones / 12.0)
    x = clip.mono
    n = len(x)
    # stretch to n * factor samples, then squeeze back to n at the original rate
    stretched = _stretch_array(x, 1.0 / factor)
    shifted = resample_array(stretched, n / len(stretched), out_len=n)
    return AudioClip(shifted, clip.sample_rate)


def draw_params(spec: AugmentSpec, clip_index: int) -> dict[str, float]:
    if spec.kind == "none":
        return {}
    rng = np.random.default_rng([spec.seed & 0xFFFFFFFFFFFFFFFF, clip_index])
    semitones = float(rng.uniform(*spec.semitone_range))
    rate = float(rng.uniform(*spec.rate_range))
    params = {}
    if spec.kind in ("pitch", "pitch_tempo"):
        params["semitones"] = semitones
    if spec.kind in ("tempo", "pitch_tempo"):
        params["rate"] = rate
    return params


def apply(clip: AudioClip, params: dict[str, float]) -> AudioClip:
    # pitch first, then tempo
    if "semitones" in params:
        clip = pitch_shift(clip, params["semitones"])
    if "rate" in params:
        clip = time_stretch(clip, params["rate"])
    return clip


def _relative(entry_path: Path, root: Path | None) -> Path:
    if root is not None:
        try:
            return entry_path.relative_to(root)
        except ValueError:
            pass
    return Path(entry_path.parent.name) / entry_path.name


def build_variant(manifest: Manifest, spec: AugmentSpec, out_dir,
                  source_root=None) -> Manifest:
    """Materialize one augmented copy of every manifest entry under ``out_dir``.

    Files are placed at the same path relative to ``source_root`` (or
    ``<platform dir>/<name>`` when no root is given). Entries that fail to
    read or write are dropped with a warning.
    """
    out_dir = Path(out_dir)
    root = Path(source_root) if source_root is not None else None
    out_dir.mkdir(parents=True, exist_ok=True)
    kept: list[ManifestEntry] = []
    rows = []
    failures = 0
    for index, entry in enumerate(manifest):
        params = draw_params(spec, index)
        target = out_dir / _relative(Path(entry.path), root)
        try:
            clip = apply(load_canonical(entry.path), params)
            write_wav(clip, target)
        except (PipelineError, OSError) as exc:
            failures += 1
            log.warning("dropping %s: %s", entry.path, exc)
            continue
        kept.append(ManifestEntry(str(target), entry.label, entry.platform))
        rows.append((str(target), spec.kind, params.get("rate", ""), params.get("semitones", ""), spec.seed))
    if failures:
        log.warning("%d of %d entries dropped while building %s variant", failures, len(manifest), spec.kind)

    with open(out_dir / "augment_params.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "kind", "rate", "semitones", "seed"])
        for path, kind, rate, semis, seed in rows:
            writer.writerow([path, kind, _fmt(rate), _fmt(semis), seed])
    return Manifest(kept)


def _fmt(value) -> str:
    return "" if value == "" else repr(float(value))
