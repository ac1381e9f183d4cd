import math
import wave

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svgrounding import signal as S


def _write_pcm(path, samples, rate=16000, channels=1):
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(np.asarray(samples, dtype="<i2").tobytes())


def test_read_wav_zero(tmp_path):
    _write_pcm(tmp_path / "z.wav", np.zeros(500))
    w = S.read_wav(tmp_path / "z.wav")
    assert len(w) == 500 and not w.samples.any()


def test_read_wav_scale(tmp_path):
    _write_pcm(tmp_path / "h.wav", [16384, -32768])
    assert S.read_wav(tmp_path / "h.wav").samples.tolist() == [0.5, -1.0]


def test_read_wav_stereo_averaged(tmp_path):
    _write_pcm(tmp_path / "s.wav", [16384, 0, 8192, 8192], channels=2)
    assert S.read_wav(tmp_path / "s.wav").samples.tolist() == [0.25, 0.25]


def test_read_wav_rejects_8k(tmp_path):
    _write_pcm(tmp_path / "n.wav", np.zeros(100), rate=8000)
    with pytest.raises(S.SignalError, match="8000"):
        S.read_wav(tmp_path / "n.wav")


def test_read_wav_malformed(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"RIFFxxxxWAVEjunk")
    with pytest.raises(S.SignalError):
        S.read_wav(tmp_path / "bad.wav")


def test_wav_write_read_round_trip(tmp_path):
    x = np.round(np.random.default_rng(0).uniform(-1, 1, 1000) * 32768) / 32768
    x = np.clip(x, -1, 32767 / 32768)
    S.write_wav(tmp_path / "r.wav", S.Waveform(x))
    np.testing.assert_array_equal(S.read_wav(tmp_path / "r.wav").samples, x)


def test_one_second_frames():
    assert S.log_mel(S.Waveform(np.zeros(16000))).shape == (98, 128)


def test_silence_hits_floor():
    m = S.log_mel(S.Waveform(np.zeros(800)))
    assert np.all(m == math.log(1e-6))


def test_too_short():
    with pytest.raises(S.SignalError):
        S.log_mel(S.Waveform(np.zeros(399)))


@settings(max_examples=1000, deadline=None)
@given(st.integers(400, 6000))
def test_frame_count_formula(n):
    assert S.log_mel(S.Waveform(np.zeros(n))).shape[0] == (n - 400) // 160 + 1


def _oracle_centers(n_mels=128, fmax=8000.0):
    # HTK mel built from scratch, independent of the package helpers
    top = 2595.0 * math.log10(1.0 + fmax / 700.0)
    pts = [top * i / (n_mels + 1) for i in range(n_mels + 2)]
    hz = [700.0 * (10 ** (p / 2595.0) - 1.0) for p in pts]
    return hz[1:-1]


@pytest.mark.parametrize("freq", [440.0, 125.0, 2500.0])
def test_tone_band_localization(freq):
    t = np.arange(16000) / 16000
    m = S.log_mel(S.Waveform(0.5 * np.sin(2 * math.pi * freq * t)))
    centers = _oracle_centers()
    nearest = min(range(128), key=lambda i: abs(centers[i] - freq))
    assert set(np.argmax(m, axis=1)) == {nearest}


def test_filterbank_shape_properties():
    fb = S.mel_filterbank()
    assert fb.shape == (128, 257)
    assert np.all(fb >= 0)
    assert np.all(fb.sum(axis=1) > 0)
    support = [set(np.flatnonzero(row)) for row in fb]
    assert all(support[i] & support[i + 1] for i in range(127))
    np.testing.assert_allclose(S.mel_edges()[1:-1], _oracle_centers(), rtol=1e-12)


def _speech(n=16000, seed=0):
    r = np.random.default_rng(seed)
    return S.Waveform(0.3 * np.sin(np.arange(n) * 0.05) + 0.05 * r.normal(size=n))


def test_mix_alpha_zero_is_identity():
    sp = _speech()
    out = S.mix_noise(sp, S.NoiseSpec(_speech(4000, 1), (0.0, 0.0)), np.random.default_rng(3))
    assert out.samples.tobytes() == sp.samples.tobytes()


def test_mix_power_addition():
    r = np.random.default_rng(11)
    sp = S.Waveform(0.1 * r.normal(size=200000))
    nz = S.Waveform(0.1 * r.normal(size=200000))
    out = S.mix_noise(sp, S.NoiseSpec(nz, (0.5, 0.5)), np.random.default_rng(0))
    assert S.rms(out.samples) == pytest.approx(math.sqrt(1.25) * S.rms(sp.samples), rel=0.01)


def test_mix_segment_within_bounds():
    sp = S.Waveform(np.zeros(1000) + 0.1)
    nz = S.Waveform(np.ones(300))
    for seed in range(50):
        out = S.mix_noise(sp, S.NoiseSpec(nz, (0.5, 0.7)), np.random.default_rng(seed))
        assert len(out) == 1000
        changed = np.flatnonzero(out.samples != 0.1)
        assert changed.size == 300 and changed[-1] - changed[0] == 299
        assert np.all(np.abs(out.samples) <= 1.0)


def test_mix_clips_to_unit_range():
    sp = S.Waveform(np.full(500, 0.9))
    out = S.mix_noise(sp, S.NoiseSpec(S.Waveform(np.ones(500)), (1.0, 1.0)), np.random.default_rng(0))
    assert out.samples.max() == 1.0


def test_mix_is_deterministic():
    sp, nz = _speech(), _speech(3000, 5)
    a = S.mix_noise(sp, S.NoiseSpec(nz), np.random.default_rng(42))
    b = S.mix_noise(sp, S.NoiseSpec(nz), np.random.default_rng(42))
    assert a.samples.tobytes() == b.samples.tobytes()


def test_mix_silent_noise_rejected():
    with pytest.raises(S.SignalError, match="silent"):
        S.mix_noise(_speech(), S.NoiseSpec(S.Waveform(np.zeros(100))), np.random.default_rng(0))


def test_alpha_range_validated():
    with pytest.raises(S.SignalError):
        S.NoiseSpec(_speech(), (0.7, 0.5))


def test_sample_fixed_cases():
    m = np.arange(40.0).reshape(20, 2)
    same, n = S.sample_fixed(m, 20)
    assert n == 20 and np.array_equal(same, m)
    half, n = S.sample_fixed(m, 10)
    assert n == 10 and np.array_equal(half, m[::2])
    padded, n = S.sample_fixed(m[:5], 10)
    assert n == 5 and np.array_equal(padded[:5], m[:5]) and not padded[5:].any()


def test_noise_bank_families_are_audible():
    bank = S.noise_bank(np.random.default_rng(0), per_family=1, seconds=0.5)
    assert len(bank) == len(S.NOISE_FAMILIES)
    assert all(S.rms(w.samples) > 0 and np.abs(w.samples).max() <= 1 for w in bank)


def test_featurize_shape():
    bank = S.noise_bank(np.random.default_rng(0), per_family=1, seconds=0.5)
    feats, valid = S.featurize(_speech(), bank, np.random.default_rng(1), 64)
    assert feats.shape == (64, 128) and valid == 64 and np.isfinite(feats).all()
