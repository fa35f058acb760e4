"""Headline acceptance criteria, one test each.

Every test prints a ``[PASS]``/``[FAIL]`` line (also repeated in the terminal
summary) before asserting, so a failing criterion still reports its numbers.
"""
import time

import numpy as np
import pytest

from deepfake_music import augment, cli, dataset, dsp, experiments, metrics, model
from deepfake_music.audio_io import AudioClip
from deepfake_music.dsp import MelSpectrogram
from deepfake_music.model import TrainConfig

import gradcheck
from conftest import fft_peak_hz, record_criterion, sine
from test_dataset import mock_corpus


def test_table_identity_audit(capsys):
    start = time.perf_counter()
    code = cli.main(["verify-table1"])
    rows = metrics.audit_published_table()
    elapsed = time.perf_counter() - start
    capsys.readouterr()
    worst_f1 = max(r.f1_gap for r in rows)
    worst_comp = max(max(r.recall_fnr_gap, r.fpr_spec_gap) for r in rows)
    ok = code == 0 and len(rows) == 5 and all(r.passed for r in rows) and elapsed < 1.0
    with capsys.disabled():
        record_criterion("Table identity audit", ok,
                         f"5 rows, max |f1-2PR/(P+R)| = {worst_f1:.5f} (<= 0.002), "
                         f"max complement gap = {worst_comp:.5f} (<= 0.001), {elapsed:.3f} s (< 1 s)")
    assert ok


def test_gradient_fidelity(capsys):
    start = time.perf_counter()
    params, x, y = gradcheck.well_conditioned_instance(seed=0)
    assert x.shape == (1, 3, 16, 16) and all(v.dtype == np.float64 for v in params.values())
    analytic = model.backward(params, x, y)
    numeric = gradcheck.finite_difference_gradients(params, x, y, h=1e-3)
    errors = gradcheck.relative_errors(analytic, numeric)
    elapsed = time.perf_counter() - start
    worst_name = max(errors, key=lambda k: errors[k].max())
    worst = float(errors[worst_name].max())
    checked = sum(e.size for e in errors.values())
    ok = worst < 1e-4 and checked == model.PARAM_COUNT and elapsed < 60.0
    with capsys.disabled():
        record_criterion("Gradient fidelity", ok,
                         f"{checked} parameters, max relative error {worst:.2e} at {worst_name} (< 1e-4), "
                         f"h = 1e-3, {elapsed:.1f} s (< 60 s)")
    assert ok


def test_dsp_laws(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(20240607)

    freqs = np.concatenate([[0.0, 1e-3, 700.0, 1234.5, 8000.0, 22050.0], rng.uniform(0, 24000, 10_000)])
    back = dsp.mel_to_hz(dsp.hz_to_mel(freqs))
    roundtrip = float(np.max(np.abs(back - freqs) / np.maximum(freqs, 1e-300)))

    frame_fail = []
    for _ in range(20):
        n_fft = int(rng.choice([256, 512, 1024, 2048]))
        hop = int(rng.integers(1, n_fft + 1))
        n = int(rng.integers(n_fft // 2 + 1, 48000))
        frames = dsp.stft_array(rng.standard_normal(n), n_fft, hop).shape[1]
        if frames != 1 + n // hop:
            frame_fail.append((n, hop, frames))

    db_fail = 0
    for _ in range(200):
        top_db = float(rng.uniform(10, 120))
        power = rng.uniform(0, 1, 500) ** rng.uniform(1, 40)
        db = dsp.power_to_db(power, top_db)
        db_fail += not (db.max() == 0.0 and db.min() >= -top_db)
    elapsed = time.perf_counter() - start
    ok = roundtrip < 1e-9 and not frame_fail and db_fail == 0 and elapsed < 10.0
    with capsys.disabled():
        record_criterion("DSP laws", ok,
                         f"mel roundtrip max rel err {roundtrip:.1e} (< 1e-9), "
                         f"frame count 20/20 {'ok' if not frame_fail else frame_fail}, "
                         f"power_to_db range violations {db_fail}/200, {elapsed:.2f} s (< 10 s)")
    assert ok


def test_augmentation_laws(capsys):
    start = time.perf_counter()
    hop = augment.VOCODER_HOP
    clip = AudioClip(sine(440.0, 2.0), 16000)
    n = len(clip)
    problems = []
    for rate in (0.8, 0.9, 1.0, 1.1, 1.2):
        out = augment.time_stretch(clip, rate)
        if abs(len(out) - n / rate) > hop:
            problems.append(f"stretch {rate}: length {len(out)}")
    worst_bins = 0.0
    for s in (-2, -1, 0, 1, 2):
        out = augment.pitch_shift(clip, s)
        peak, width = fft_peak_hz(out.mono, 16000)
        off = abs(peak - 440.0 * 2 ** (s / 12)) / width
        worst_bins = max(worst_bins, off)
        if off > 1.0:
            problems.append(f"pitch {s}: peak {peak:.2f} Hz")
        if abs(len(out) - n) > hop:
            problems.append(f"pitch {s}: length {len(out)}")
    elapsed = time.perf_counter() - start
    ok = not problems and elapsed < 30.0
    with capsys.disabled():
        record_criterion("Augmentation laws", ok,
                         f"5 stretch rates and 5 semitone shifts, worst peak offset {worst_bins:.2f} bins (<= 1), "
                         f"{'no violations' if not problems else problems}, {elapsed:.2f} s (< 30 s)")
    assert ok


def test_normalization_constants(capsys):
    rng = np.random.default_rng(11)
    pixels = dsp.render_image(MelSpectrogram(rng.uniform(-80, 0, (128, 313)))).pixels
    mean = (0.485, 0.456, 0.406)
    std = (0.229, 0.224, 0.225)
    gaps = []
    for c in range(3):
        gaps.append(abs(pixels[c].max() - (1 - mean[c]) / std[c]))
        gaps.append(abs(pixels[c].min() - (0 - mean[c]) / std[c]))
    worst = max(gaps)
    ok = worst <= 1e-12 and dsp.IMAGE_MEAN == mean and dsp.IMAGE_STD == std
    with capsys.disabled():
        record_criterion("Normalization constants", ok,
                         f"per-channel extremes vs (1-mean)/std and (0-mean)/std, max gap {worst:.1e} (<= 1e-12)")
    assert ok


def test_dataset_arithmetic(capsys):
    balanced = dataset.balance(mock_corpus(5373, 5521), 5373, seed=7)
    platforms = sorted(c for p, c in balanced.platform_counts().items() if p in dataset.DEEPFAKE_PLATFORMS)
    parts = dataset.split(balanced, seed=7)
    again = dataset.split(balanced, seed=7)
    paths = [e.path for part in (parts.train, parts.val, parts.test) for e in part]
    disjoint = len(paths) == len(set(paths))
    exhaustive = set(paths) == {e.path for e in balanced}
    stratified = all(abs(p.class_counts()["human"] / len(p) - 0.5) <= 1 / len(p)
                     for p in (parts.train, parts.val, parts.test))
    sizes = (len(parts.train), len(parts.val), len(parts.test))
    ok = (len(balanced) == 10746 and set(platforms) <= {1074, 1075} and sum(platforms) == 5373
          and disjoint and exhaustive and stratified and parts == again)
    with capsys.disabled():
        record_criterion("Dataset arithmetic", ok,
                         f"{len(balanced)} entries, platform counts {platforms}, split {sizes}, "
                         f"disjoint={disjoint} exhaustive={exhaustive} stratified={stratified} "
                         f"deterministic={parts == again}")
    assert ok


@pytest.mark.slow
def test_end_to_end_learnability(tmp_path, capsys):
    cfg = experiments.ExperimentConfig(seed=7, out=tmp_path / "run_a", synthetic=200,
                                       train=TrainConfig(epochs=5, batch_size=32, lr=1e-4))
    start = time.perf_counter()
    reports = experiments.run_experiment(cfg)
    first = time.perf_counter() - start

    start = time.perf_counter()
    code = cli.main(["experiment", "--synthetic", "200", "--seed", "7", "--epochs", "5",
                     "--out", str(tmp_path / "run_b")])
    second = time.perf_counter() - start
    capsys.readouterr()

    csv_a = (tmp_path / "run_a" / "results.csv").read_bytes()
    csv_b = (tmp_path / "run_b" / "results.csv").read_bytes() if code == 0 else b""
    baseline = next(r for r in reports if r.source == "Baseline")
    rows = csv_a.decode().splitlines()
    ok = (baseline.accuracy >= 0.95 and len(reports) == 5 and len(rows) == 6 and csv_a == csv_b
          and first < 600 and second < 600)
    with capsys.disabled():
        record_criterion("End-to-end learnability", ok,
                         f"baseline test accuracy {baseline.accuracy:.4f} (>= 0.95), "
                         f"results.csv identical across runs: {csv_a == csv_b}, "
                         f"run times {first:.0f} s and {second:.0f} s (< 600 s each)")
        for line in rows:
            print("    " + line)
    assert ok
