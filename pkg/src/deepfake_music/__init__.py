"""Detecting AI-generated music from log-mel spectrogram images."""

from .audio_io import AudioClip, read_wav, resample, to_mono, write_wav
from .dsp import MelConfig, mel_spectrogram, render_image
from .metrics import ConfusionMatrix, MetricsReport, compute_metrics, confusion

__version__ = "0.1.0"
