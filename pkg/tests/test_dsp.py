import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deepfake_music import dsp
from deepfake_music.audio_io import AudioClip
from deepfake_music.dsp import MelConfig, MelSpectrogram
from deepfake_music.errors import DegenerateBank

from conftest import sine


def enumerate_frames(n_samples, n_fft, hop):
    """Count frame starts by walking the padded signal one hop at a time."""
    padded = n_samples + 2 * (n_fft // 2)
    count, start = 0, 0
    while start + n_fft <= padded:
        count += 1
        start += hop
    return count


def test_mel_scale_examples():
    assert dsp.hz_to_mel(0.0) == 0.0
    assert dsp.hz_to_mel(700.0) == pytest.approx(2595 * math.log10(2), rel=1e-12)
    assert dsp.hz_to_mel(700.0) == pytest.approx(781.1728, abs=1e-4)
    assert dsp.mel_to_hz(dsp.hz_to_mel(1234.5)) == pytest.approx(1234.5, rel=1e-9)


@given(st.floats(0.0, 1e5), st.floats(0.0, 1e5))
def test_mel_scale_monotone_and_invertible(a, b):
    if a <= b:
        assert dsp.hz_to_mel(a) <= dsp.hz_to_mel(b)
    if b - a > 1e-9:
        assert dsp.hz_to_mel(a) < dsp.hz_to_mel(b)
    back = float(dsp.mel_to_hz(dsp.hz_to_mel(a)))
    assert abs(back - a) <= 1e-9 * max(a, 1e-3)


def test_two_band_filterbank_against_hand_mel_points():
    cfg = MelConfig(n_fft=256, hop=64, n_mels=2, fmin=0.0, fmax=4000.0)
    top = 2595 * math.log10(1 + 4000 / 700)
    hz = [700 * (10 ** (top * i / 3 / 2595) - 1) for i in range(4)]
    bank = dsp.mel_filterbank(cfg, 8000)
    assert bank.shape == (2, 129)
    bin_width = 8000 / 256
    for row, centre in zip(bank, hz[1:3]):
        assert np.argmax(row) in (math.floor(centre / bin_width), math.ceil(centre / bin_width))
        support = np.nonzero(row)[0]
        assert support.min() * bin_width >= hz[0] - 1e-6 and support.max() * bin_width <= hz[3] + 1e-6


@pytest.mark.parametrize("cfg", [MelConfig(), MelConfig(n_fft=1024, hop=256, n_mels=40),
                                 MelConfig(n_fft=4096, n_mels=64, fmin=50.0, fmax=7000.0)])
def test_filterbank_shape_laws(cfg):
    bank = dsp.mel_filterbank(cfg, 16000)
    assert bank.shape == (cfg.n_mels, cfg.n_fft // 2 + 1)
    assert np.all(bank >= 0)
    assert np.all(bank @ np.ones(bank.shape[1]) > 0)
    peaks = np.argmax(bank, axis=1)
    assert np.all(np.diff(peaks) >= 0)
    for i, row in enumerate(bank):
        support = np.nonzero(row)[0]
        assert np.all(np.diff(support) == 1), "support must be contiguous"
        part = row[support]
        top = np.argmax(part)
        assert np.all(np.diff(part[: top + 1]) >= 0) and np.all(np.diff(part[top:]) <= 0)
        if i + 1 < len(bank):
            assert np.any((row > 0) & (bank[i + 1] > 0)), "adjacent rows overlap"


def test_degenerate_bank():
    with pytest.raises(DegenerateBank):
        dsp.mel_filterbank(MelConfig(n_fft=64, hop=16, n_mels=128), 16000)


def test_shared_bank_is_read_only():
    cfg = MelConfig()
    with pytest.raises(ValueError):
        dsp._filterbank(cfg, 16000)[0, 0] = 1.0
    dsp.mel_filterbank(cfg, 16000)[0, 0] = 5.0
    assert dsp._filterbank(cfg, 16000)[0, 0] != 5.0


def test_stft_zero_clip():
    spec = dsp.stft(AudioClip(np.zeros(5000), 16000))
    assert not np.any(spec.bins)


def test_stft_bin_frequency_peak():
    n_fft, k = 2048, 37
    x = sine(k * 16000 / n_fft, 10 * n_fft / 16000)
    spec = dsp.stft_array(x, n_fft, 512)
    interior = np.abs(spec[:, 4:-4])
    assert np.all(np.argmax(interior, axis=0) == k)


def test_stft_matches_direct_dft():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(300)
    n_fft, hop = 64, 16
    spec = dsp.stft_array(x, n_fft, hop)
    padded = np.concatenate([x[1:33][::-1], x, x[-33:-1][::-1]])
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n_fft) / n_fft)
    k = np.arange(n_fft // 2 + 1)[:, None]
    n = np.arange(n_fft)[None, :]
    basis = np.exp(-2j * np.pi * k * n / n_fft)
    for t in (0, 5, spec.shape[1] - 1):
        frame = padded[t * hop: t * hop + n_fft] * window
        np.testing.assert_allclose(spec[:, t], basis @ frame, atol=1e-10)


def test_frame_count_example():
    assert dsp.frame_count(16000, 512) == 32 == enumerate_frames(16000, 2048, 512)
    assert dsp.stft_array(np.zeros(16000), 2048, 512).shape == (1025, 32)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 20000), st.sampled_from([64, 128, 256, 333, 512, 1000]))
def test_frame_count_against_enumerator(n, hop):
    n_fft = 1024
    hop = min(hop, n_fft)
    expected = enumerate_frames(n, n_fft, hop)
    assert dsp.frame_count(n, hop) == expected
    if n > n_fft // 2:
        assert dsp.stft_array(np.ones(n), n_fft, hop).shape[1] == expected


def test_istft_inverts_stft():
    x = np.random.default_rng(5).standard_normal(9000)
    back = dsp.istft_array(dsp.stft_array(x, 2048, 512), 2048, 512, len(x))
    np.testing.assert_allclose(back, x, atol=1e-10)


def test_power_to_db_examples():
    np.testing.assert_array_equal(dsp.power_to_db(np.array([1.0, 1.0])), [0.0, 0.0])
    np.testing.assert_allclose(dsp.power_to_db(np.array([100.0, 1.0])), [0.0, -20.0], atol=1e-12)
    np.testing.assert_allclose(dsp.power_to_db(np.array([1.0, 1e-30]), 80.0), [0.0, -80.0])


@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(0.0, 1e6)), st.floats(1.0, 120.0))
def test_power_to_db_range(power, top_db):
    db = dsp.power_to_db(power, top_db)
    assert db.max() == 0.0
    assert db.min() >= -top_db


def test_mel_spectrogram_silence_and_shape():
    mel = dsp.mel_spectrogram(AudioClip(np.zeros(16000), 16000))
    assert mel.shape == (128, 32)
    assert np.all(mel.values == mel.values.flat[0])
    clip = AudioClip(sine(300, 0.7), 16000)
    assert dsp.mel_spectrogram(clip).shape[1] == dsp.stft(clip).bins.shape[1]


def test_440_hz_lands_in_nearest_band():
    cfg = MelConfig()
    centres = dsp.mel_points(cfg)[1:-1]
    nearest = int(np.argmin(np.abs(centres - 440.0)))
    mel = dsp.mel_spectrogram(AudioClip(sine(440, 2.0), 16000), cfg)
    assert np.all(np.argmax(mel.values[:, 3:-3], axis=0) == nearest)


@settings(max_examples=10, deadline=None)
@given(st.integers(3, 40), st.integers(0, 2**32 - 1))
def test_time_reversal_reverses_columns(blocks, seed):
    hop = 512
    n = blocks * hop + 1
    x = np.random.default_rng(seed).standard_normal(n)
    fwd = dsp.mel_spectrogram(AudioClip(x, 16000)).values
    rev = dsp.mel_spectrogram(AudioClip(x[::-1].copy(), 16000)).values
    np.testing.assert_allclose(rev, fwd[:, ::-1], atol=1e-6)


def test_power_grows_linearly_with_length():
    cfg = MelConfig()

    def total(seconds):
        return np.sum(np.abs(dsp.stft(AudioClip(sine(1000, seconds, amp=1.0), 16000), cfg).bins) ** 2)

    assert total(20.0) / total(10.0) == pytest.approx(2.0, rel=0.05)


def test_render_extremes():
    values = np.arange(12.0).reshape(3, 4) - 60
    img = dsp.render_image(MelSpectrogram(values))
    assert img.pixels.shape == (3, 224, 224)
    assert img.pixels[0].max() == pytest.approx((1 - 0.485) / 0.229, abs=1e-12)
    assert img.pixels[0].max() == pytest.approx(2.2489, abs=1e-4)
    assert img.pixels[2].min() == pytest.approx(-1.8044, abs=1e-4)
    np.testing.assert_allclose(img.pixels[1] * 0.224 + 0.456, img.pixels[0] * 0.229 + 0.485, atol=1e-12)


def test_render_constant():
    img = dsp.render_image(MelSpectrogram(np.full((128, 20), -12.0)))
    for c in range(3):
        assert np.all(img.pixels[c] == (0 - dsp.IMAGE_MEAN[c]) / dsp.IMAGE_STD[c])


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 40), st.integers(1, 40)), elements=st.floats(-80.0, 0.0)),
       st.integers(4, 64))
def test_render_range(values, size):
    pixels = dsp.render_image(MelSpectrogram(values), size).pixels
    assert pixels.shape == (3, size, size)
    for c in range(3):
        lo = (0 - dsp.IMAGE_MEAN[c]) / dsp.IMAGE_STD[c]
        hi = (1 - dsp.IMAGE_MEAN[c]) / dsp.IMAGE_STD[c]
        assert lo - 1e-12 <= pixels[c].min() and pixels[c].max() <= hi + 1e-12


def test_bilinear_resize_identity_and_linear_ramp():
    plane = np.random.default_rng(0).standard_normal((7, 9))
    np.testing.assert_allclose(dsp.bilinear_resize(plane, 7, 9), plane)
    ramp = np.tile(np.arange(4.0), (4, 1))
    out = dsp.bilinear_resize(ramp, 4, 8)
    np.testing.assert_allclose(out[0], [0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.0])


def test_mels_file_roundtrip(tmp_path):
    values = np.random.default_rng(1).uniform(-80, 0, (16, 11))
    path = tmp_path / "x.mels"
    dsp.write_mels(MelSpectrogram(values), path)
    data = path.read_bytes()
    assert data[:4] == b"MELS" and len(data) == 12 + 4 * 16 * 11
    np.testing.assert_array_equal(dsp.read_mels(path).values, values.astype(np.float32))


def test_config_validation():
    with pytest.raises(ValueError):
        MelConfig(n_fft=1000)
    with pytest.raises(ValueError):
        MelConfig(fmin=9000.0)
    with pytest.raises(ValueError):
        dsp.mel_filterbank(MelConfig(fmax=8000.0), 8000)
