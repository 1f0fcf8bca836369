"""Mel spectrogram featurization: resample, STFT, Mel filterbank, dB, resize, min-max."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import AudioClip


@dataclass(frozen=True)
class MelConfig:
    target_sample_rate: int = 22050
    window_size: int = 2048
    hop: int = 512
    n_mels: int = 128
    fmin: float = 0.0
    fmax: float = 11025.0
    log_floor: float = 1e-10
    resize_mode: str = "interpolate"

    def __post_init__(self):
        if not 0 <= self.fmin < self.fmax <= self.target_sample_rate / 2:
            raise ValueError("need 0 <= fmin < fmax <= target_sample_rate/2")
        if self.hop < 1 or self.n_mels < 1 or self.window_size < self.hop:
            raise ValueError("need hop >= 1, n_mels >= 1, window_size >= hop")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")
        if self.resize_mode not in ("interpolate", "crop_pad"):
            raise ValueError("resize_mode must be 'interpolate' or 'crop_pad'")

    @property
    def n_bins(self) -> int:
        return self.window_size // 2 + 1


@dataclass
class MelSpectrogram:
    values: np.ndarray
    normalized: bool = False

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def hz_to_mel(f):
    """HTK Mel scale: 2595 * log10(1 + f/700)."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be non-negative")
    m = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(m) if m.ndim == 0 else m


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(f) if f.ndim == 0 else f


def mel_band_edges(config: MelConfig) -> np.ndarray:
    """The n_mels + 2 band edges in Hz; edge i+1 is the center of filter i."""
    mels = np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2)
    return mel_to_hz(mels)


def mel_center_frequencies(config: MelConfig) -> np.ndarray:
    return mel_band_edges(config)[1:-1]


def fft_frequencies(config: MelConfig) -> np.ndarray:
    return np.arange(config.n_bins) * (config.target_sample_rate / config.window_size)


def mel_filterbank(config: MelConfig) -> np.ndarray:
    """(n_mels, window_size//2 + 1) triangular filters.

    Each triangle rises from the previous band edge to its center and falls
    to the next edge. Rows are scaled so the largest sampled weight is exactly
    1; there is no area normalization.
    """
    edges = mel_band_edges(config)
    freqs = fft_frequencies(config)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    peaks = fb.max(axis=1)
    empty = np.flatnonzero(peaks == 0)
    if empty.size:
        raise ValueError(
            f"{config.n_mels} Mel bands is too many for a {config.window_size}-point FFT: "
            f"filter {int(empty[0])} covers no FFT bin"
        )
    return fb / peaks[:, None]


def resample_linear(samples: np.ndarray, rate: int, target: int) -> np.ndarray:
    if rate == target:
        return np.asarray(samples, dtype=np.float64)
    n = len(samples)
    n_out = int(np.floor((n - 1) * target / rate)) + 1
    t = np.arange(n_out) * (rate / target)
    return np.interp(t, np.arange(n), samples)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def stft_power(clip: AudioClip, config: MelConfig) -> np.ndarray:
    """|STFT|^2 as a (window_size//2 + 1, frames) matrix, no edge padding."""
    x = resample_linear(clip.samples, clip.sample_rate, config.target_sample_rate)
    n = config.window_size
    if len(x) < n:
        raise ValueError(f"clip {clip.source_id!r} is shorter than one {n}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(x, n)[:: config.hop]
    spectrum = np.fft.rfft(frames * hann(n), axis=1)
    return (spectrum.real**2 + spectrum.imag**2).T


def mel_spectrogram(clip: AudioClip, config: MelConfig, filterbank: np.ndarray | None = None) -> MelSpectrogram:
    """10*log10(filterbank @ power + floor), not yet normalized."""
    fb = mel_filterbank(config) if filterbank is None else filterbank
    power = stft_power(clip, config)
    return MelSpectrogram(10.0 * np.log10(fb @ power + config.log_floor))


def mean_columns(specs) -> int:
    """Average column count, rounded to nearest with halves rounding up."""
    cols = [s.cols if isinstance(s, MelSpectrogram) else int(s) for s in specs]
    if not cols:
        raise ValueError("mean_columns of an empty set")
    total, n = sum(cols), len(cols)
    return (2 * total + n) // (2 * n)


def resize_columns(spec: MelSpectrogram, target: int, mode: str = "interpolate") -> MelSpectrogram:
    """Stretch or shrink the time axis to ``target`` columns.

    ``interpolate`` samples each row linearly at evenly spaced positions
    with both end columns pinned; ``crop_pad`` truncates on the right or
    repeats the row's last value.
    """
    if target < 1:
        raise ValueError("target column count must be >= 1")
    v = spec.values
    cols = v.shape[1]
    if cols == target:
        return MelSpectrogram(v.copy(), spec.normalized)
    if mode == "crop_pad":
        if cols > target:
            out = v[:, :target].copy()
        else:
            out = np.concatenate([v, np.repeat(v[:, -1:], target - cols, axis=1)], axis=1)
        return MelSpectrogram(out, spec.normalized)
    if mode != "interpolate":
        raise ValueError(f"unknown resize mode {mode!r}")
    if cols == 1:
        return MelSpectrogram(np.repeat(v, target, axis=1), spec.normalized)
    pos = np.linspace(0.0, cols - 1, target) if target > 1 else np.zeros(1)
    left = np.minimum(np.floor(pos).astype(np.int64), cols - 2)
    frac = pos - left
    out = v[:, left] * (1.0 - frac) + v[:, left + 1] * frac
    # keep results inside each row's range despite rounding in the blend
    out = np.clip(out, v.min(axis=1, keepdims=True), v.max(axis=1, keepdims=True))
    return MelSpectrogram(out.astype(v.dtype, copy=False), spec.normalized)


def minmax_normalize(spec: MelSpectrogram) -> MelSpectrogram:
    """Rescale the whole matrix to [0, 1] as float32; constant input gives zeros."""
    v = np.asarray(spec.values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        out = np.zeros_like(v)
    else:
        out = (v - lo) / (hi - lo)
    return MelSpectrogram(np.clip(out, 0.0, 1.0).astype(np.float32), normalized=True)


def featurize(clip: AudioClip, config: MelConfig, filterbank: np.ndarray | None = None) -> MelSpectrogram:
    return mel_spectrogram(clip, config, filterbank)


# ---------------------------------------------------------------- MSPC files

MAGIC = b"MSPC"
VERSION = 1
_HEADER = struct.Struct("<4sBII")
_MAX_ELEMENTS = 1 << 31


class SpecFormatError(ValueError):
    pass


def dumps_spec(spec: MelSpectrogram) -> bytes:
    v = np.ascontiguousarray(spec.values, dtype="<f4")
    if v.ndim != 2:
        raise ValueError("spectrogram must be 2-d")
    return _HEADER.pack(MAGIC, VERSION, v.shape[0], v.shape[1]) + v.tobytes()


def loads_spec(data: bytes, normalized: bool = True) -> MelSpectrogram:
    if len(data) < 5 or data[:4] != MAGIC:
        raise SpecFormatError("bad magic: not a MSPC file")
    if data[4] != VERSION:
        raise SpecFormatError(f"unsupported MSPC version {data[4]}")
    if len(data) < _HEADER.size:
        raise SpecFormatError("truncated header")
    _, _, rows, cols = _HEADER.unpack_from(data)
    n = rows * cols
    if n >= _MAX_ELEMENTS:
        raise SpecFormatError(f"dimension overflow: {rows}x{cols}")
    payload = data[_HEADER.size :]
    if len(payload) < 4 * n:
        raise SpecFormatError(f"truncated payload: header says {rows}x{cols}, got {len(payload)} bytes")
    if len(payload) > 4 * n:
        raise SpecFormatError("trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float32)
    return MelSpectrogram(values, normalized)


def write_spec(spec: MelSpectrogram, path) -> None:
    Path(path).write_bytes(dumps_spec(spec))


def read_spec(path, normalized: bool = True) -> MelSpectrogram:
    return loads_spec(Path(path).read_bytes(), normalized)
