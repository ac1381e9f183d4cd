"""Audio front-end: WAV input, log-Mel features, noise mixing, fixed-length sampling."""
from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
WIN = 400  # 25 ms
HOP = 160  # 10 ms
N_FFT = 512
N_MELS = 128
LOG_EPS = 1e-6


class SignalError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise SignalError("waveform must be a non-empty 1-D signal")

    def __len__(self) -> int:
        return self.samples.size


@dataclass
class NoiseSpec:
    noise: Waveform
    alpha_range: tuple[float, float] = (0.5, 0.7)

    def __post_init__(self):
        lo, hi = self.alpha_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise SignalError(f"alpha range {self.alpha_range} must satisfy 0 <= lo <= hi <= 1")


def read_wav(path) -> Waveform:
    """Decode 16-bit PCM at 16 kHz; stereo is averaged to mono."""
    try:
        with wave.open(str(path), "rb") as fh:
            rate = fh.getframerate()
            width = fh.getsampwidth()
            channels = fh.getnchannels()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise SignalError(f"{path}: malformed WAV header ({exc})") from exc
    if width != 2:
        raise SignalError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise SignalError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} (no resampling)")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        pcm = pcm.reshape(-1, channels).mean(axis=1)
    return Waveform(pcm, rate)


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_edges(n_mels: int = N_MELS, fmin: float = 0.0, fmax: float = SAMPLE_RATE / 2) -> np.ndarray:
    """n_mels + 2 corner frequencies, equally spaced on the HTK mel scale."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def _triangle_area_below(x: np.ndarray, a: float, c: float, b: float) -> np.ndarray:
    x = np.clip(x, a, b)
    rise = np.minimum(x, c)
    area = (rise - a) ** 2 / (2.0 * (c - a))
    fall = np.maximum(x, c)
    area += ((b - c) ** 2 - (b - fall) ** 2) / (2.0 * (b - c))
    return area


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """(n_mels, n_fft // 2 + 1) triangular filters of unit peak.

    Each weight is the mean of the triangle over the bin's frequency cell
    [f_k - df/2, f_k + df/2], so filters narrower than one FFT bin (the low
    bands at 128 mels / 512 points) still carry positive weight.
    """
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_edges(n_mels, fmin, fmax)
    df = sample_rate / n_fft
    centers = np.arange(n_fft // 2 + 1) * df
    lo, hi = centers - df / 2, centers + df / 2
    fb = np.empty((n_mels, centers.size))
    for m in range(n_mels):
        a, c, b = edges[m:m + 3]
        fb[m] = (_triangle_area_below(hi, a, c, b) - _triangle_area_below(lo, a, c, b)) / df
    return fb


_FB_CACHE: dict = {}


def num_frames(n_samples: int) -> int:
    return (n_samples - WIN) // HOP + 1


def log_mel(w: Waveform) -> np.ndarray:
    """(T, 128) natural-log Mel energies of the Hamming-windowed magnitude STFT."""
    if w.sample_rate != SAMPLE_RATE:
        raise SignalError(f"sample rate {w.sample_rate} Hz, expected {SAMPLE_RATE}")
    if len(w) < WIN:
        raise SignalError(f"need at least {WIN} samples, got {len(w)}")
    n = num_frames(len(w))
    idx = np.arange(WIN)[None, :] + HOP * np.arange(n)[:, None]
    frames = w.samples[idx] * np.hamming(WIN)
    mag = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1))
    if "fb" not in _FB_CACHE:
        _FB_CACHE["fb"] = mel_filterbank()
    return np.log(mag @ _FB_CACHE["fb"].T + LOG_EPS)


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def mix_noise(speech: Waveform, spec: NoiseSpec, rng: np.random.Generator) -> Waveform:
    """Add rms-scaled noise to one randomly placed contiguous segment of the speech."""
    noise = spec.noise
    if noise.sample_rate != speech.sample_rate:
        raise SignalError("speech and noise sample rates differ")
    alpha = rng.uniform(*spec.alpha_range)
    seg = min(len(noise), len(speech))
    n_off = int(rng.integers(0, len(noise) - seg + 1))
    s_off = int(rng.integers(0, len(speech) - seg + 1))
    piece = noise.samples[n_off:n_off + seg]
    noise_rms = rms(piece)
    if noise_rms == 0.0:
        raise SignalError("noise clip is silent (rms = 0)")
    gain = alpha * rms(speech.samples) / noise_rms
    out = speech.samples.copy()
    out[s_off:s_off + seg] += gain * piece
    return Waveform(np.clip(out, -1.0, 1.0), speech.sample_rate)


def sample_fixed(frames: np.ndarray, n_a: int) -> tuple[np.ndarray, int]:
    """Uniformly subsample (or zero-pad) to exactly ``n_a`` rows; returns (rows, valid length)."""
    t = frames.shape[0]
    if t < 1:
        raise SignalError("empty spectrogram")
    if t >= n_a:
        idx = (np.arange(n_a) * t) // n_a
        return frames[idx].copy(), n_a
    out = np.zeros((n_a,) + frames.shape[1:])
    out[:t] = frames
    return out, t


# procedural stand-ins for environmental sound classes

NOISE_FAMILIES = ("filtered_white", "brown", "am_tone", "impulses", "chirp")


def synth_noise(family: str, n_samples: int, rng: np.random.Generator) -> Waveform:
    t = np.arange(n_samples) / SAMPLE_RATE
    if family == "filtered_white":
        k = int(rng.integers(3, 30))
        x = np.convolve(rng.normal(size=n_samples + k), np.ones(k) / k, mode="valid")[:n_samples]
    elif family == "brown":
        x = np.cumsum(rng.normal(size=n_samples))
        x -= np.linspace(x[0], x[-1], n_samples)
    elif family == "am_tone":
        f0 = rng.uniform(100, 3000)
        fm = rng.uniform(0.5, 8)
        x = np.sin(2 * math.pi * f0 * t) * (1 + 0.8 * np.sin(2 * math.pi * fm * t))
    elif family == "impulses":
        x = np.zeros(n_samples)
        period = int(rng.integers(400, 4000))
        x[::period] = 1.0
        x = np.convolve(x, np.exp(-np.arange(200) / 30.0), mode="same")
        x += 0.01 * rng.normal(size=n_samples)
    elif family == "chirp":
        f0, f1 = rng.uniform(200, 1000), rng.uniform(1500, 6000)
        dur = max(t[-1], 1.0 / SAMPLE_RATE)
        x = np.sin(2 * math.pi * (f0 * t + (f1 - f0) * t * t / (2 * dur)))
    else:
        raise SignalError(f"unknown noise family {family!r}")
    peak = np.max(np.abs(x))
    return Waveform(0.5 * x / peak if peak > 0 else x)


def noise_bank(rng: np.random.Generator, per_family: int = 4, seconds: float = 5.0) -> list[Waveform]:
    n = int(seconds * SAMPLE_RATE)
    return [synth_noise(f, n, rng) for f in NOISE_FAMILIES for _ in range(per_family)]


def load_noise_dir(path) -> list[Waveform]:
    files = sorted(Path(path).glob("*.wav"))
    if not files:
        raise SignalError(f"no .wav files under {path}")
    return [read_wav(f) for f in files]


def featurize(speech: Waveform, bank: list[Waveform], rng: np.random.Generator, n_a: int,
              alpha_range: tuple[float, float] = (0.5, 0.7)) -> tuple[np.ndarray, int]:
    """Noisy log-Mel features of fixed length, noise drawn from ``bank``."""
    noise = bank[int(rng.integers(len(bank)))]
    noisy = mix_noise(speech, NoiseSpec(noise, alpha_range), rng)
    return sample_fixed(log_mel(noisy), n_a)
