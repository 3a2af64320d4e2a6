"""
Baseline feature sets: PK08 barkgram distance, MFCC statistics, temporal descriptors.
"""

import csv
import math
from functools import lru_cache
from pathlib import Path
from typing import Dict, Tuple, Union
import numpy as np
import librosa
from scipy.fft import dct
from .barkgram import (
    CANONICAL_RATE, PK08_BANDS, WINDOW_SIZE, Barkgram, BarkgramError,
    barkgram, stft_magnitude,
)
from .corpus import AudioClip
from .models import FeatureVector
from .logging import get_logger


N_MELS = 40
N_MFCC = 13
MFCC_DIM = 6 * N_MFCC  # mean and variance of c, delta and delta-delta
TEMP_DIM = 5
DELTA_WIDTH = 5
LOG_FLOOR = 1e-10

ENVELOPE_HOP_S = 0.010
ENVELOPE_WINDOW_S = 0.020
ATTACK_LOW = 0.1
ATTACK_HIGH = 0.9
MIN_ATTACK_S = 0.001
MIN_CENTROID_S = 0.001
TRIM_DBFS = -60.0

logger = get_logger("features")


class FeatureError(Exception):
    """Custom exception for feature extraction errors."""
    pass


def pk08_distance(a: Barkgram, b: Barkgram) -> float:
    """Euclidean distance of start-aligned, zero-padded 72-band barkgrams."""
    if a.n_bands != b.n_bands:
        raise FeatureError(f"band-count mismatch: {a.n_bands} vs {b.n_bands}")
    if a.n_bands != PK08_BANDS:
        raise FeatureError(f"PK08 compares {PK08_BANDS}-band barkgrams, got {a.n_bands}")
    n_frames = max(a.n_frames, b.n_frames)
    pa = np.pad(a.values, ((0, 0), (0, n_frames - a.n_frames)))
    pb = np.pad(b.values, ((0, 0), (0, n_frames - b.n_frames)))
    return float(np.linalg.norm((pa - pb).ravel()))


@lru_cache(maxsize=1)
def _mel_filterbank() -> np.ndarray:
    fb = librosa.filters.mel(
        sr=CANONICAL_RATE, n_fft=WINDOW_SIZE, n_mels=N_MELS,
        fmin=0.0, fmax=CANONICAL_RATE / 2, htk=True, norm=None,
    )
    fb.setflags(write=False)
    return fb


def mfcc_frames(clip: AudioClip) -> np.ndarray:
    """Cepstral coefficients 1..13 per frame, coefficients x frames."""
    power = stft_magnitude(clip) ** 2
    mel = _mel_filterbank() @ power
    cepstrum = dct(np.log(mel + LOG_FLOOR), type=2, axis=0, norm="ortho")
    return cepstrum[1:N_MFCC + 1]


def regression_delta(frames: np.ndarray) -> np.ndarray:
    """5-point regression slope along frames, with edge frames replicated."""
    return librosa.feature.delta(frames, width=DELTA_WIDTH, order=1, axis=-1, mode="nearest")


def mfcc_features(clip: AudioClip) -> FeatureVector:
    """Means then variances of c1..c13, their deltas and delta-deltas (78 values)."""
    c = mfcc_frames(clip)
    d = regression_delta(c)
    dd = regression_delta(d)
    stacked = np.vstack([c, d, dd])
    values = np.concatenate([stacked.mean(axis=1), stacked.var(axis=1)])
    return FeatureVector(values=values, extractor_id="mfcc")


def _trim(x: np.ndarray) -> np.ndarray:
    """Drop leading/trailing samples below -60 dBFS (or exact zeros if nothing reaches it)."""
    threshold = 10.0 ** (TRIM_DBFS / 20.0)
    loud = np.flatnonzero(np.abs(x) >= threshold)
    if loud.size == 0:
        loud = np.flatnonzero(x)
    return x[loud[0]:loud[-1] + 1]


def rms_envelope(x: np.ndarray, sample_rate: int = CANONICAL_RATE) -> Tuple[np.ndarray, np.ndarray]:
    """RMS envelope on 10 ms hops with 20 ms windows centred on each hop.

    Each frame's RMS is taken over the in-clip samples of its window.
    Returns (frame times in seconds, envelope).
    """
    hop = int(round(ENVELOPE_HOP_S * sample_rate))
    half = int(round(ENVELOPE_WINDOW_S * sample_rate)) // 2
    n_frames = x.size // hop + 1
    centres = np.arange(n_frames) * hop
    starts = np.clip(centres - half, 0, x.size)
    stops = np.clip(centres + half, 0, x.size)
    cumulative = np.concatenate([[0.0], np.cumsum(x ** 2)])
    counts = stops - starts
    energy = np.where(counts > 0, (cumulative[stops] - cumulative[starts]) / np.maximum(counts, 1), 0.0)
    keep = counts > 0
    return centres[keep] / sample_rate, np.sqrt(np.maximum(energy[keep], 0.0))


def temporal_features(clip: AudioClip) -> FeatureVector:
    """[LAT, TC, LAT/TC, TCF, duration] of the trimmed clip."""
    if not np.any(clip.samples):
        raise FeatureError("degenerate input: all-zero clip has no temporal features")
    x = _trim(np.abs(clip.samples))
    times, env = rms_envelope(x, clip.sample_rate)

    peak = env.max()
    t_low = times[np.argmax(env >= ATTACK_LOW * peak)]
    t_high = times[np.argmax(env >= ATTACK_HIGH * peak)]
    lat = math.log10(max(t_high - t_low, MIN_ATTACK_S))

    energy = env ** 2
    tc = float(np.sum(times * energy) / np.sum(energy))
    ratio = lat / max(tc, MIN_CENTROID_S)

    tcf = float(x.max() / np.sqrt(np.mean(x ** 2)))
    duration = x.size / clip.sample_rate
    return FeatureVector(values=np.array([lat, tc, ratio, tcf, duration]), extractor_id="temp")


class BaseExtractor:
    """Base class for feature extractors."""

    extractor_id: str = ""

    def __init__(self):
        self.logger = get_logger("features")

    def extract(self, clip: AudioClip):
        """Compute this extractor's representation of a clip."""
        raise NotImplementedError

    def distance(self, a, b) -> float:
        """Distance between two representations."""
        from .query import euclidean
        return euclidean(a, b)


class Pk08Extractor(BaseExtractor):
    """72-band barkgrams compared with the PK08 padded distance."""

    extractor_id = "pk08"

    def extract(self, clip: AudioClip) -> Barkgram:
        return barkgram(clip, PK08_BANDS)

    def distance(self, a: Barkgram, b: Barkgram) -> float:
        return pk08_distance(a, b)


class MfccExtractor(BaseExtractor):
    extractor_id = "mfcc"

    def extract(self, clip: AudioClip) -> FeatureVector:
        return mfcc_features(clip)


class TemporalExtractor(BaseExtractor):
    extractor_id = "temp"

    def extract(self, clip: AudioClip) -> FeatureVector:
        return temporal_features(clip)


def create_extractor(name: str, checkpoint: Union[str, Path, None] = None) -> BaseExtractor:
    """Factory function to create the extractor for a feature-set name."""
    name = name.lower()
    if name == "pk08":
        return Pk08Extractor()
    elif name == "mfcc":
        return MfccExtractor()
    elif name == "temp":
        return TemporalExtractor()
    elif name.startswith("cae-"):
        if checkpoint is None:
            raise FeatureError(f"feature set {name} needs a trained checkpoint")
        from .cae import CaeExtractor
        from .checkpoint import load_checkpoint
        return CaeExtractor(load_checkpoint(checkpoint))
    else:
        raise FeatureError(f"unknown extractor: {name}")


def feature_to_vector(feature: Union[FeatureVector, Barkgram], extractor_id: str) -> FeatureVector:
    """Flatten a representation for the feature file; barkgrams go row-major."""
    if isinstance(feature, Barkgram):
        return FeatureVector(values=feature.values.ravel(order="C"), extractor_id=extractor_id)
    return feature


def write_feature_csv(features: Dict[str, Union[FeatureVector, Barkgram]], extractor_id: str,
                      path: Union[str, Path]) -> None:
    """Write one row per clip: id,extractor_id,dim,v0..v{dim-1}.

    Rows may differ in length (pk08); the header spans the longest row.
    """
    vectors = {cid: feature_to_vector(f, extractor_id) for cid, f in features.items()}
    width = max((v.dim for v in vectors.values()), default=0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["id", "extractor_id", "dim"] + [f"v{i}" for i in range(width)])
        for cid, vec in vectors.items():
            writer.writerow([cid, extractor_id, vec.dim] + [repr(float(v)) for v in vec.values])
    tmp.replace(path)


def read_feature_csv(path: Union[str, Path]) -> Tuple[str, Dict[str, Union[FeatureVector, Barkgram]]]:
    """Read a feature file; pk08 rows come back as 72-band barkgrams."""
    features: Dict[str, Union[FeatureVector, Barkgram]] = {}
    extractor_id = ""
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or header[:3] != ["id", "extractor_id", "dim"]:
                raise FeatureError(f"{path}: not a feature file")
            for row_number, row in enumerate(reader, start=2):
                try:
                    cid, extractor_id, dim = row[0], row[1], int(row[2])
                    values = np.array([float(v) for v in row[3:3 + dim]])
                except (IndexError, ValueError) as e:
                    raise FeatureError(f"{path}: row {row_number}: {e}")
                if values.size != dim:
                    raise FeatureError(f"{path}: row {row_number} declares {dim} values, has {values.size}")
                if extractor_id == "pk08":
                    try:
                        features[cid] = Barkgram(values=values.reshape(PK08_BANDS, -1))
                    except (ValueError, BarkgramError) as e:
                        raise FeatureError(f"{path}: row {row_number}: bad pk08 barkgram: {e}")
                else:
                    features[cid] = FeatureVector(values=values, extractor_id=extractor_id)
    except OSError as e:
        raise FeatureError(f"cannot read feature file {path}: {e}")
    return extractor_id, features
