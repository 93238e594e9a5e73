"""16 kHz PCM to a 100 x 40 per-band-normalized log-Mel map."""

from __future__ import annotations

import hashlib
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import read_container, write_container
from .errors import DataError, FormatError


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    win_ms: float = 30.0
    hop_ms: float = 10.0
    n_mels: int = 40
    f_min: float = 20.0
    f_max: float = 4000.0
    n_frames: int = 100
    fft_size: int = 512
    log_floor: float = 1e-10
    n_samples: int = 16000

    def __post_init__(self):
        if not 0 <= self.f_min < self.f_max <= self.sample_rate / 2:
            raise ValueError(f"need 0 <= f_min < f_max <= Nyquist, got {self.f_min}, {self.f_max}")
        if self.win_samples > self.fft_size:
            raise ValueError("window longer than the FFT")

    @property
    def win_samples(self) -> int:
        return int(round(self.sample_rate * self.win_ms / 1000))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000))


def load_wav(path, sample_rate: int = 16000) -> np.ndarray:
    """Read 16-bit mono PCM as float64 samples in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise FormatError(f"{path}: channels={w.getnchannels()}, expected 1")
            if w.getsampwidth() != 2:
                raise FormatError(f"{path}: sample width={8 * w.getsampwidth()} bits, expected 16")
            if w.getframerate() != sample_rate:
                raise FormatError(f"{path}: sample rate={w.getframerate()}, expected {sample_rate}")
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a PCM RIFF/WAVE file ({exc})") from None
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, samples, sample_rate: int = 16000) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """The ``n_mels + 2`` mel-spaced edge/peak frequencies in Hz."""
    mels = np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2)
    return mel_to_hz(mels)


def mel_filterbank(cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Triangular HTK-mel filters, shape ``[n_mels, fft_size // 2 + 1]``, peak 1."""
    pts = mel_center_frequencies(cfg)
    freqs = np.arange(cfg.fft_size // 2 + 1) * cfg.sample_rate / cfg.fft_size
    lo, mid, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def _fit_length(samples: np.ndarray, n: int) -> np.ndarray:
    if samples.size >= n:
        start = (samples.size - n) // 2
        return samples[start:start + n]
    return np.pad(samples, (0, n - samples.size))


def log_mel_raw(samples, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Unnormalized log-Mel energies, ``[n_frames, n_mels]`` float64.

    Frames are centred (reflect padding by half a window), so the first
    frame is centred on sample 0; the map is truncated (or edge-padded) to
    ``n_frames``.
    """
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise DataError("empty audio buffer")
    x = _fit_length(x, cfg.n_samples)
    win, hop = cfg.win_samples, cfg.hop_samples
    half = win // 2
    x = np.pad(x, (half, win - half), mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    window = np.hanning(win + 1)[:-1]  # periodic Hann
    power = np.abs(np.fft.rfft(frames * window, n=cfg.fft_size, axis=1)) ** 2
    mel = power @ mel_filterbank(cfg).T
    out = np.log(mel + cfg.log_floor)
    if out.shape[0] >= cfg.n_frames:
        return out[:cfg.n_frames]
    return np.pad(out, ((0, cfg.n_frames - out.shape[0]), (0, 0)), mode="edge")


def normalize_bands(raw: np.ndarray, min_var: float = 1e-12) -> np.ndarray:
    """Zero-mean, unit-variance per band across time; flat bands become 0."""
    mu = raw.mean(axis=0, keepdims=True)
    var = raw.var(axis=0, keepdims=True)
    ok = var >= min_var
    return np.where(ok, (raw - mu) / np.sqrt(np.where(ok, var, 1.0)), 0.0)


def log_mel(samples, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Feature map ``[1, n_frames, n_mels]`` float32 (channel, time, band)."""
    return normalize_bands(log_mel_raw(samples, cfg)).astype(np.float32)[None]


def wav_features(path, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    return log_mel(load_wav(path, cfg.sample_rate), cfg)


def save_feature_map(path, fmap: np.ndarray, source: str = "") -> None:
    write_container(path, {"features": fmap}, {"kind": "feature_map", "source": source})


def load_feature_map(path) -> np.ndarray:
    tensors, meta = read_container(path)
    if meta.get("kind") != "feature_map" or "features" not in tensors:
        raise FormatError(f"{path}: not a feature-map container")
    return tensors["features"]


class FeatureCache:
    """On-disk cache of feature maps keyed by source descriptor."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, key: str) -> Path:
        return self.root / (hashlib.sha1(key.encode("utf-8")).hexdigest() + ".spk")

    def get(self, key: str, compute):
        path = self.path_for(key)
        if path.exists():
            return load_feature_map(path)
        fmap = compute()
        save_feature_map(path, fmap, key)
        return fmap
