"""End-to-end orchestration of the five experiments.

Every random stage draws its seed from ``stage_seed(seed, name)`` so that
changing one stage's seed (e.g. via ``train_seed``) leaves the others alone.
"""
from __future__ import annotations

import hashlib
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import augment, dataset, dsp, metrics, model
from .audio_io import load_canonical
from .dataset import DatasetSplit, Manifest, ManifestEntry
from .errors import PipelineError

log = logging.getLogger(__name__)

DEFAULT_VARIANTS = ("none", "tempo", "pitch", "pitch_tempo")
CONTINUOUS_NAME = "Continuous Learning"


def stage_seed(seed: int, stage: str) -> int:
    digest = hashlib.blake2b(f"{stage}:{seed}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


class StageError(PipelineError):
    pass


@contextmanager
def stage(name: str):
    started = time.perf_counter()
    try:
        yield
        log.info("stage %s done in %.1f s", name, time.perf_counter() - started)
    except PipelineError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
    except (OSError, ValueError) as exc:
        err = StageError(f"[{name}] {exc}")
        err.stage = name
        raise err from exc


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    out: Path
    corpus: Path | None = None
    synthetic: int | None = None
    per_class: int | None = None
    variants: tuple[str, ...] = DEFAULT_VARIANTS
    continuous: bool = True
    order: tuple[str, ...] = DEFAULT_VARIANTS
    reset_optimizer: bool = False
    mel: dsp.MelConfig = field(default_factory=dsp.MelConfig)
    train: model.TrainConfig = field(default_factory=model.TrainConfig)
    image_size: int = dsp.IMAGE_SIZE
    train_seed: int | None = None
    augment_seed: int | None = None

    def __post_init__(self):
        if (self.corpus is None) == (self.synthetic is None):
            raise ValueError("exactly one of corpus / synthetic must be given")
        if self.seed is None:
            raise ValueError("a seed is required")
        for kind in self.variants + self.order:
            if kind not in augment.KINDS:
                raise ValueError(f"unknown variant {kind!r}")
        object.__setattr__(self, "out", Path(self.out))
        if self.corpus is not None:
            object.__setattr__(self, "corpus", Path(self.corpus))

    def seed_for(self, name: str) -> int:
        if name == "train" and self.train_seed is not None:
            return self.train_seed
        if name.startswith("augment") and self.augment_seed is not None:
            return stage_seed(self.augment_seed, name)
        return stage_seed(self.seed, name)

    @property
    def train_config(self) -> model.TrainConfig:
        return replace(self.train, seed=self.seed_for("train"))


class FeatureStore:
    """Log-mel images for manifest entries, cached on disk by (content hash, MelConfig).

    Mel values pass through float32 before rendering whether or not they came
    from the cache, so cached and fresh runs produce identical images.
    """

    def __init__(self, mel: dsp.MelConfig, cache_dir=None, image_size: int = dsp.IMAGE_SIZE):
        self.mel = mel
        self.image_size = image_size
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self._planes: dict[str, np.ndarray] = {}
        if self.cache_dir is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)

    def key(self, path) -> str:
        h = hashlib.sha256(Path(path).read_bytes())
        h.update(repr(self.mel).encode())
        return h.hexdigest()

    def mel_spectrogram(self, path) -> dsp.MelSpectrogram:
        cached = self.cache_dir / f"{self.key(path)}.mels" if self.cache_dir is not None else None
        if cached is not None and cached.exists():
            return dsp.read_mels(cached, self.mel)
        mel = dsp.mel_spectrogram(load_canonical(path), self.mel)
        mel = dsp.MelSpectrogram(mel.values.astype(np.float32).astype(np.float64), self.mel)
        if cached is not None:
            dsp.write_mels(mel, cached)
        return mel

    def plane(self, path: str) -> np.ndarray:
        if path not in self._planes:
            mel = self.mel_spectrogram(path)
            self._planes[path] = dsp.grayscale_plane(mel, self.image_size).astype(np.float32)
        return self._planes[path]

    def preload(self, manifest: Manifest) -> None:
        for entry in manifest:
            self.plane(entry.path)

    def __call__(self, entry: ManifestEntry) -> np.ndarray:
        return dsp.normalize_plane(self.plane(entry.path)).astype(np.float32)


class Workspace:
    """Shared state for one experiment run: source corpus, materialized variants, features."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.features = FeatureStore(cfg.mel, cfg.out / "features", cfg.image_size)
        self._source: Manifest | None = None
        self._source_root: Path | None = None
        self._variants: dict[str, Manifest] = {}

    def source(self) -> Manifest:
        if self._source is None:
            cfg = self.cfg
            if cfg.synthetic is not None:
                with stage("synth"):
                    root = cfg.out / "corpus"
                    manifest = dataset.synth_corpus(cfg.synthetic, cfg.seed_for("synth"), root)
            else:
                with stage("scan"):
                    root = cfg.corpus
                    manifest = dataset.scan_corpus(root)
                with stage("balance"):
                    counts = manifest.class_counts()
                    per_class = cfg.per_class or min(counts.values())
                    manifest = dataset.balance(manifest, per_class, cfg.seed_for("balance"))
            manifest.save(cfg.out / "manifest.csv")
            self._source, self._source_root = manifest, root
        return self._source

    def variant(self, kind: str) -> Manifest:
        if kind not in self._variants:
            source = self.source()
            with stage(f"augment:{kind}"):
                spec = augment.AugmentSpec(kind, self.cfg.seed_for(f"augment/{kind}"))
                manifest = augment.build_variant(source, spec, self.cfg.out / "variants" / kind,
                                                 source_root=self._source_root)
                manifest.save(self.cfg.out / "variants" / kind / "manifest.csv")
            with stage(f"featurize:{kind}"):
                self.features.preload(manifest)
            self._variants[kind] = manifest
        return self._variants[kind]

    def split(self, kind: str) -> DatasetSplit:
        manifest = self.variant(kind)
        with stage(f"split:{kind}"):
            parts = dataset.split(manifest, self.cfg.seed_for("split"))
            parts.save(self.cfg.out / "runs" / kind / "split")
        return parts


def evaluate_report(params: model.ModelParams, entries, features, source: str) -> metrics.MetricsReport:
    _, _, preds = model.evaluate(params, list(entries), features)
    truths = [e.label for e in entries]
    cm = metrics.confusion(preds.tolist(), truths)
    return metrics.compute_metrics(cm, source)


def run_single(cfg: ExperimentConfig, variant: str, workspace: Workspace | None = None) -> metrics.MetricsReport:
    ws = workspace or Workspace(cfg)
    parts = ws.split(variant)
    name = augment.VARIANT_NAMES[variant]
    log.info("training %s on %d clips", name, len(parts.train))
    with stage(f"train:{variant}"):
        ckpt = model.train(cfg.train_config, parts, ws.features)
        ckpt.save(cfg.out / "runs" / variant / "checkpoint.mgck")
    with stage(f"eval:{variant}"):
        return evaluate_report(ckpt.params, parts.test, ws.features, name)


def run_continuous(cfg: ExperimentConfig, workspace: Workspace | None = None) -> metrics.MetricsReport:
    """One model trained on each variant in ``cfg.order``, scored on all their test sets pooled."""
    ws = workspace or Workspace(cfg)
    ckpt = None
    pooled: list[ManifestEntry] = []
    for kind in cfg.order:
        parts = ws.split(kind)
        if ckpt is not None and cfg.reset_optimizer:
            last = ckpt.last_params if ckpt.last_params is not None else ckpt.params
            ckpt = replace(ckpt, adam=model.AdamState.zeros_like(last, lr=cfg.train.lr))
        with stage(f"train:continuous:{kind}"):
            log.info("continuous learning: stage %s", kind)
            ckpt = model.train(cfg.train_config, parts, ws.features, start=ckpt)
            ckpt.save(cfg.out / "runs" / "continuous" / f"checkpoint_{kind}.mgck")
        pooled.extend(parts.test)
    with stage("eval:continuous"):
        return evaluate_report(ckpt.params, pooled, ws.features, CONTINUOUS_NAME)


def run_experiment(cfg: ExperimentConfig) -> list[metrics.MetricsReport]:
    """All single-variant experiments, then continuous learning; writes ``results.csv`` as it goes."""
    cfg.out.mkdir(parents=True, exist_ok=True)
    ws = Workspace(cfg)
    reports = []
    results = cfg.out / "results.csv"
    for kind in cfg.variants:
        reports.append(run_single(cfg, kind, ws))
        results.write_text(metrics.to_csv(reports), encoding="utf-8", newline="\n")
    if cfg.continuous:
        reports.append(run_continuous(cfg, ws))
        results.write_text(metrics.to_csv(reports), encoding="utf-8", newline="\n")
    return reports
