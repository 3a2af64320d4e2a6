"""
STFT, Bark-band grouping and Terhardt-weighted barkgrams.
"""

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Union
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import rfft
from scipy.signal import get_window
from .corpus import CANONICAL_RATE, AudioClip
from .logging import get_logger


WINDOW_SIZE = 4096  # ~92.9 ms at 44.1 kHz
HOP_SIZE = 512  # 87.5% overlap
N_BINS = WINDOW_SIZE // 2 + 1
FLOOR_DB = -70.0
DYNAMIC_RANGE_DB = 70.0
POWER_FLOOR = 1e-10
PK08_BANDS = 72
CAE_BANDS = 128
CAE_FRAMES = 128
BINARY_MAGIC = b"BKG1"

logger = get_logger("barkgram")


class BarkgramError(Exception):
    """Custom exception for barkgram errors."""
    pass


@dataclass(frozen=True, eq=False)
class Barkgram:
    """Bands x frames loudness matrix, in dB above the -70 dB floor."""
    values: np.ndarray
    frame_hop_s: float = HOP_SIZE / CANONICAL_RATE

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise BarkgramError(f"barkgram must be a non-empty 2-D matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise BarkgramError("barkgram values must be finite and non-negative")
        object.__setattr__(self, "values", values)

    @property
    def n_bands(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[1])


@lru_cache(maxsize=1)
def _hann() -> np.ndarray:
    return get_window("hann", WINDOW_SIZE)


def bin_frequencies() -> np.ndarray:
    """Centre frequency in Hz of every one-sided FFT bin."""
    return np.arange(N_BINS) * (CANONICAL_RATE / WINDOW_SIZE)


def frame_count(n_samples: int) -> int:
    """Number of STFT frames for a clip, after padding to one window."""
    return (max(n_samples, WINDOW_SIZE) - WINDOW_SIZE) // HOP_SIZE + 1


def stft_magnitude(clip: AudioClip) -> np.ndarray:
    """Hann-windowed one-sided magnitude spectrogram, bins x frames.

    Magnitudes are scaled by 2 / sum(window), so a full-scale sinusoid peaks
    at 1.0 (0 dBFS).
    """
    if clip.sample_rate != CANONICAL_RATE:
        raise BarkgramError(f"clip must be at {CANONICAL_RATE} Hz, got {clip.sample_rate}")
    x = clip.samples
    if x.size < WINDOW_SIZE:
        x = np.pad(x, (0, WINDOW_SIZE - x.size))
    window = _hann()
    frames = sliding_window_view(x, WINDOW_SIZE)[::HOP_SIZE] * window
    spectrum = np.abs(rfft(frames, axis=1)) * (2.0 / window.sum())
    return spectrum.T


def terhardt_weight(freq) -> Union[float, np.ndarray]:
    """Terhardt outer/middle-ear weighting in dB for frequencies in Hz."""
    f = np.asarray(freq, dtype=np.float64)
    if np.any(f <= 0):
        raise BarkgramError("Terhardt weighting needs strictly positive frequencies")
    khz = f / 1000.0
    weight = -3.64 * khz ** -0.8 + 6.5 * np.exp(-0.6 * (khz - 3.3) ** 2) - 1e-3 * khz ** 4
    return float(weight) if weight.ndim == 0 else weight


def hz_to_bark(freq) -> Union[float, np.ndarray]:
    """Traunmüller's Hz to Bark mapping."""
    f = np.asarray(freq, dtype=np.float64)
    z = 26.81 * f / (1960.0 + f) - 0.53
    return float(z) if z.ndim == 0 else z


_BARK_TOP = hz_to_bark(CANONICAL_RATE / 2)


def bark_band_index(freq, n_bands: int) -> Union[int, np.ndarray]:
    """Uniform Bark-band index of a frequency in (0, 22050] Hz."""
    if n_bands < 1:
        raise BarkgramError(f"n_bands must be at least 1, got {n_bands}")
    f = np.asarray(freq, dtype=np.float64)
    if np.any(f <= 0) or np.any(f > CANONICAL_RATE / 2):
        raise BarkgramError(f"frequency out of range (0, {CANONICAL_RATE / 2}] Hz")
    band = np.floor(n_bands * np.asarray(hz_to_bark(f)) / _BARK_TOP)
    band = np.clip(band, 0, n_bands - 1).astype(np.int64)
    return int(band) if band.ndim == 0 else band


@lru_cache(maxsize=8)
def _band_weights(n_bands: int) -> np.ndarray:
    """bands x bins matrix: Terhardt power gain of each bin, placed in its band.

    The DC bin has no defined weight (the curve diverges at 0 Hz) and gets gain
    0 in band 0, so every bin belongs to exactly one band.
    """
    freqs = bin_frequencies()
    gains = np.zeros(N_BINS)
    bands = np.zeros(N_BINS, dtype=np.int64)
    gains[1:] = 10.0 ** (terhardt_weight(freqs[1:]) / 10.0)
    bands[1:] = bark_band_index(freqs[1:], n_bands)
    matrix = np.zeros((n_bands, N_BINS))
    matrix[bands, np.arange(N_BINS)] = gains
    matrix.setflags(write=False)
    return matrix


def band_powers(clip: AudioClip, n_bands: int) -> np.ndarray:
    """Terhardt-weighted power summed within each Bark band, bands x frames."""
    power = stft_magnitude(clip) ** 2
    return _band_weights(n_bands) @ power


def barkgram(clip: AudioClip, n_bands: int) -> Barkgram:
    """Floor-shifted Terhardt-weighted Bark-band loudness of a clip."""
    level_db = 10.0 * np.log10(band_powers(clip, n_bands) + POWER_FLOOR)
    values = np.maximum(0.0, level_db - FLOOR_DB)
    return Barkgram(values=values)


def fix_frames(bg: Barkgram, n_frames: int = CAE_FRAMES) -> Barkgram:
    """Right-pad with silent frames or truncate to exactly n_frames."""
    if n_frames < 1:
        raise BarkgramError(f"n_frames must be at least 1, got {n_frames}")
    if bg.n_frames == n_frames:
        return bg
    if bg.n_frames > n_frames:
        return Barkgram(values=bg.values[:, :n_frames].copy(), frame_hop_s=bg.frame_hop_s)
    padded = np.pad(bg.values, ((0, 0), (0, n_frames - bg.n_frames)))
    return Barkgram(values=padded, frame_hop_s=bg.frame_hop_s)


def normalize_unit(bg: Barkgram) -> Barkgram:
    """Scale the floor-shifted dB range onto [0, 1]."""
    return Barkgram(values=np.clip(bg.values / DYNAMIC_RANGE_DB, 0.0, 1.0), frame_hop_s=bg.frame_hop_s)


def cae_input(clip: AudioClip) -> np.ndarray:
    """128 x 128 unit-range barkgram, the auto-encoder input."""
    return normalize_unit(fix_frames(barkgram(clip, CAE_BANDS), CAE_FRAMES)).values


def write_barkgram_csv(bg: Barkgram, path: Union[str, Path]) -> None:
    """One row per band, frames as columns."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for row in bg.values:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def read_barkgram_csv(path: Union[str, Path]) -> Barkgram:
    try:
        values = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as e:
        raise BarkgramError(f"cannot read barkgram CSV {path}: {e}")
    return Barkgram(values=values)


def barkgram_to_bytes(bg: Barkgram) -> bytes:
    header = BINARY_MAGIC + struct.pack("<II", bg.n_bands, bg.n_frames)
    return header + bg.values.astype("<f4").tobytes(order="C")


def barkgram_from_bytes(data: bytes) -> Barkgram:
    if len(data) < 12 or data[:4] != BINARY_MAGIC:
        raise BarkgramError("not a BKG1 barkgram")
    n_bands, n_frames = struct.unpack_from("<II", data, 4)
    expected = 12 + 4 * n_bands * n_frames
    if len(data) != expected:
        raise BarkgramError(f"BKG1 payload size {len(data)} does not match {n_bands}x{n_frames}")
    values = np.frombuffer(data, dtype="<f4", offset=12).reshape(n_bands, n_frames)
    return Barkgram(values=values.astype(np.float64))


def write_barkgram_binary(bg: Barkgram, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(barkgram_to_bytes(bg))


def read_barkgram_binary(path: Union[str, Path]) -> Barkgram:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise BarkgramError(f"cannot read barkgram file {path}: {e}")
    return barkgram_from_bytes(data)
