"""Corpus inventory, class balancing, stratified splitting and a synthetic stand-in corpus."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import EmptyCorpus, InsufficientEntries, TooSmall

log = logging.getLogger(__name__)

HUMAN = "human"
DEEPFAKE = "deepfake"
LABELS = (DEEPFAKE, HUMAN)  # index == class id used by the model

DEEPFAKE_PLATFORMS = ("MusicGen_medium", "audioldm2", "musicldm", "mustango", "stable_audio_open")
PLATFORM_LABELS = {
    "MusicCaps": HUMAN,
    **{name: DEEPFAKE for name in DEEPFAKE_PLATFORMS},
    "synthetic_human": HUMAN,
    "synthetic_fake": DEEPFAKE,
}

SPLIT_RATIOS = (0.8, 0.1, 0.1)


def label_index(label: str) -> int:
    return LABELS.index(label)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    platform: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...] = ()

    def __init__(self, entries: Iterable[ManifestEntry] = ()):
        entries = tuple(entries)
        seen = set()
        for e in entries:
            if e.path in seen:
                raise ValueError(f"duplicate path in manifest: {e.path}")
            seen.add(e.path)
        object.__setattr__(self, "entries", entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.entries]

    def class_counts(self) -> dict[str, int]:
        return {lab: sum(e.label == lab for e in self.entries) for lab in LABELS}

    def platform_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for e in self.entries:
            counts[e.platform] = counts.get(e.platform, 0) + 1
        return counts

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["path", "label", "platform"])
        for e in self.entries:
            writer.writerow([e.path, e.label, e.platform])
        return buf.getvalue()

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv(), encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["path", "label", "platform"]:
                raise ValueError(f"{path}: expected header path,label,platform, got {reader.fieldnames}")
            return cls(ManifestEntry(r["path"], r["label"], r["platform"]) for r in reader)


@dataclass(frozen=True)
class DatasetSplit:
    train: Manifest
    val: Manifest
    test: Manifest
    seed: int
    ratios: tuple[float, float, float] = field(default=SPLIT_RATIOS)

    def save(self, directory) -> None:
        directory = Path(directory)
        for name in ("train", "val", "test"):
            getattr(self, name).save(directory / f"{name}.csv")
        (directory / "split_meta").write_text(
            f"seed = {self.seed}\nratios = {','.join(str(r) for r in self.ratios)}\n", encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "DatasetSplit":
        directory = Path(directory)
        meta = {}
        for line in (directory / "split_meta").read_text(encoding="utf-8").splitlines():
            if "=" in line:
                key, value = line.split("=", 1)
                meta[key.strip()] = value.strip()
        ratios = tuple(float(r) for r in meta["ratios"].split(","))
        parts = [Manifest.load(directory / f"{name}.csv") for name in ("train", "val", "test")]
        return cls(*parts, seed=int(meta["seed"]), ratios=ratios)


def scan_corpus(root) -> Manifest:
    root = Path(root)
    entries = []
    if root.is_dir():
        for sub in sorted(p for p in root.iterdir() if p.is_dir()):
            if sub.name not in PLATFORM_LABELS:
                log.warning("skipping unknown subdirectory %s", sub)
                continue
            for wav in sub.iterdir():
                if wav.is_file() and wav.suffix.lower() == ".wav":
                    entries.append(ManifestEntry(str(wav), PLATFORM_LABELS[sub.name], sub.name))
    if not entries:
        raise EmptyCorpus(f"no WAV files found under {root}")
    entries.sort(key=lambda e: e.path)
    return Manifest(entries)


def balance(manifest: Manifest, per_class: int, seed: int) -> Manifest:
    """Keep ``per_class`` entries of each label.

    Deepfakes are taken round-robin over platforms (sorted by name), so
    platform counts differ by at most one while every platform has stock;
    which clips are taken within a platform is a seeded draw.
    """
    rng = np.random.default_rng([seed, 0xBA1A])
    humans = [i for i, e in enumerate(manifest) if e.label == HUMAN]
    if len(humans) < per_class:
        raise InsufficientEntries(f"human: {len(humans)} available, {per_class} requested")
    fakes_by_platform: dict[str, list[int]] = {}
    for i, e in enumerate(manifest):
        if e.label == DEEPFAKE:
            fakes_by_platform.setdefault(e.platform, []).append(i)
    n_fakes = sum(len(v) for v in fakes_by_platform.values())
    if n_fakes < per_class:
        raise InsufficientEntries(f"deepfake: {n_fakes} available, {per_class} requested")

    keep = set(int(i) for i in rng.choice(humans, size=per_class, replace=False))
    queues = {p: [idx[j] for j in rng.permutation(len(idx))] for p, idx in sorted(fakes_by_platform.items())}
    taken = 0
    while taken < per_class:
        for platform in sorted(queues):
            if taken == per_class:
                break
            if queues[platform]:
                keep.add(queues[platform].pop(0))
                taken += 1
    return Manifest(e for i, e in enumerate(manifest) if i in keep)


def split_indices(labels: list[str], seed: int) -> tuple[list[int], list[int], list[int]]:
    """Stratified 80/10/10 partition of positions, each part in ascending order."""
    rng = np.random.default_rng([seed, 0x5917])
    train, val, test = [], [], []
    for label in LABELS:
        idx = np.array([i for i, lab in enumerate(labels) if lab == label], dtype=np.int64)
        if len(idx) < 10:
            raise TooSmall(f"class {label!r} has {len(idx)} entries; at least 10 needed to split")
        idx = idx[rng.permutation(len(idx))]
        n_train = int(np.floor(SPLIT_RATIOS[0] * len(idx)))
        n_val = int(np.floor(SPLIT_RATIOS[1] * len(idx)))
        train += idx[:n_train].tolist()
        val += idx[n_train:n_train + n_val].tolist()
        test += idx[n_train + n_val:].tolist()
    return sorted(train), sorted(val), sorted(test)


def split(manifest: Manifest, seed: int) -> DatasetSplit:
    """Positions, not paths, drive the shuffle: variants of one corpus split identically."""
    train, val, test = split_indices(manifest.labels, seed)
    pick = lambda idx: Manifest(manifest[i] for i in idx)  # noqa: E731
    return DatasetSplit(pick(train), pick(val), pick(test), seed=seed)


# --- synthetic corpus -------------------------------------------------------

SYNTH_RATE = 16000
SYNTH_SECONDS = 10.0
FAKE_CUTOFF_HZ = 3000.0


def _pink_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    spectrum = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spectrum), dtype=np.float64)
    f[0] = 1.0
    noise = np.fft.irfft(spectrum / np.sqrt(f), n=n)
    return noise / np.sqrt(np.mean(noise ** 2))


def _harmonic_stack(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    f0 = rng.uniform(110.0, 440.0)
    vibrato_depth = rng.uniform(0.005, 0.015)
    vibrato_phase = rng.uniform(0, 2 * np.pi)
    # instantaneous frequency f0 * (1 + d sin(2 pi 5 t)), integrated analytically
    phase = 2 * np.pi * f0 * (t - vibrato_depth / (2 * np.pi * 5.0)
                              * (np.cos(2 * np.pi * 5.0 * t + vibrato_phase) - np.cos(vibrato_phase)))
    stack = sum(np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 7))
    env_rate = rng.uniform(0.1, 0.3)
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * env_rate * t + rng.uniform(0, 2 * np.pi))
    return stack * envelope


def _fade(x: np.ndarray, sr: int, seconds: float = 0.05) -> np.ndarray:
    # raised-cosine ends: a hard cut at the clip boundary would splash broadband
    # energy into the edge frames and blur the spectral difference between families
    n = min(int(sr * seconds), len(x) // 2)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(n) / n)
    out = x.copy()
    out[:n] *= ramp
    out[len(x) - n:] *= ramp[::-1]
    return out


def synth_pair(seed: int, index: int, sr: int = SYNTH_RATE, seconds: float = SYNTH_SECONDS):
    """One matched (human-like, fake-like) pair of clips sharing the same harmonic content."""
    rng = np.random.default_rng([seed, index, 0x5E7])
    n = int(round(sr * seconds))
    stack = _harmonic_stack(rng, n, sr)
    rms = np.sqrt(np.mean(stack ** 2))
    mixed = stack + rms * 10 ** (-30 / 20) * _pink_noise(rng, n)
    human = _fade(mixed, sr)
    human = 0.9 * human / np.max(np.abs(human))

    t = np.arange(n) / sr
    ring = mixed * (1.0 + 0.5 * np.sin(2 * np.pi * 20.0 * t))
    spectrum = np.fft.rfft(ring)
    spectrum[np.fft.rfftfreq(n, 1.0 / sr) > FAKE_CUTOFF_HZ] = 0.0
    fake = _fade(np.fft.irfft(spectrum, n=n), sr)
    fake = 0.9 * fake / np.max(np.abs(fake))
    return human, fake


def synth_corpus(n_per_class: int, seed: int, out_dir) -> Manifest:
    from .audio_io import AudioClip, write_wav

    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    out_dir = Path(out_dir)
    entries = []
    for i in range(n_per_class):
        human, fake = synth_pair(seed, i)
        for platform, samples, stem in (("synthetic_human", human, "human"), ("synthetic_fake", fake, "fake")):
            path = out_dir / platform / f"{stem}_{i:05d}.wav"
            write_wav(AudioClip(samples, SYNTH_RATE), path)
            entries.append(ManifestEntry(str(path), PLATFORM_LABELS[platform], platform))
    entries.sort(key=lambda e: e.path)
    return Manifest(entries)
