"""
Desk-scale synthetic drum corpus and manufactured similarity ratings.
"""

from pathlib import Path
from typing import Dict, List, Optional, Union
import numpy as np
from scipy.signal import butter, sosfilt
from .corpus import CANONICAL_RATE, AudioClip, Manifest, load_manifest, write_manifest, write_wav
from .models import ClassLabel, ClipKind, CorpusEntry, RatingRecord
from .query import DistanceTable
from .random_streams import derive_rng
from .logging import get_logger


DRUM_CLASSES = [ClassLabel.KICK, ClassLabel.SNARE, ClassLabel.CYMBAL, ClassLabel.HIHAT, ClassLabel.TOM]
CLIP_SECONDS = 0.5
PEAK = 0.9

# base frequency range (Hz), decay time constant range (s), noise share range
_RECIPES = {
    ClassLabel.KICK: ((45.0, 90.0), (0.08, 0.20), (0.0, 0.1)),
    ClassLabel.SNARE: ((150.0, 260.0), (0.05, 0.12), (0.4, 0.8)),
    ClassLabel.CYMBAL: ((3000.0, 6000.0), (0.20, 0.45), (0.8, 1.0)),
    ClassLabel.HIHAT: ((6000.0, 9000.0), (0.02, 0.06), (0.85, 1.0)),
    ClassLabel.TOM: ((90.0, 220.0), (0.10, 0.25), (0.05, 0.25)),
}

logger = get_logger("synthetic")


def _drum(freq: float, decay: float, noise_share: float, label: ClassLabel,
          rng: np.random.Generator, seconds: float = CLIP_SECONDS) -> np.ndarray:
    t = np.arange(int(seconds * CANONICAL_RATE)) / CANONICAL_RATE
    envelope = np.exp(-t / decay)
    if label in (ClassLabel.KICK, ClassLabel.TOM):
        # downward pitch glide
        phase = 2 * np.pi * np.cumsum(freq * (1.0 + 1.5 * np.exp(-t / 0.03))) / CANONICAL_RATE
        tone = np.sin(phase)
    else:
        tone = np.sin(2 * np.pi * freq * t)

    noise = rng.standard_normal(t.size)
    if label in (ClassLabel.CYMBAL, ClassLabel.HIHAT):
        sos = butter(4, min(freq, 0.45 * CANONICAL_RATE), btype="highpass", fs=CANONICAL_RATE, output="sos")
    else:
        sos = butter(2, [100.0, 8000.0], btype="bandpass", fs=CANONICAL_RATE, output="sos")
    noise = sosfilt(sos, noise)
    noise /= np.max(np.abs(noise)) or 1.0

    x = envelope * ((1.0 - noise_share) * tone + noise_share * noise)
    return PEAK * x / np.max(np.abs(x))


def synthesize_sound(label: ClassLabel, rng: np.random.Generator) -> Dict[str, float]:
    """Draw the synthesis parameters of one library sound."""
    (f_lo, f_hi), (d_lo, d_hi), (n_lo, n_hi) = _RECIPES[label]
    return {
        "freq": float(rng.uniform(f_lo, f_hi)),
        "decay": float(rng.uniform(d_lo, d_hi)),
        "noise_share": float(rng.uniform(n_lo, n_hi)),
    }


def imitate(params: Dict[str, float], label: ClassLabel, rng: np.random.Generator) -> np.ndarray:
    """A perturbed rendition: jittered pitch and decay, extra noise, gain change, leading silence."""
    jittered = {
        "freq": params["freq"] * rng.uniform(0.9, 1.1),
        "decay": params["decay"] * rng.uniform(0.7, 1.3),
        "noise_share": float(np.clip(params["noise_share"] + rng.uniform(-0.1, 0.1), 0.0, 1.0)),
    }
    x = _drum(jittered["freq"], jittered["decay"], jittered["noise_share"], label, rng)
    x = x + 0.02 * rng.standard_normal(x.size) * np.exp(-np.arange(x.size) / (0.3 * CANONICAL_RATE))
    lead = np.zeros(int(rng.uniform(0.0, 0.02) * CANONICAL_RATE))
    x = np.concatenate([lead, x])[: int(CLIP_SECONDS * CANONICAL_RATE)]
    return rng.uniform(0.5, 0.9) * x / np.max(np.abs(x))


def write_synthetic_corpus(
    directory: Union[str, Path],
    sounds_per_class: int = 6,
    imitations_per_sound: int = 2,
    seed: int = 0,
    classes: Optional[List[ClassLabel]] = None,
) -> Manifest:
    """Write 16-bit WAVs and manifest.csv for a synthetic drum corpus."""
    directory = Path(directory)
    classes = classes or DRUM_CLASSES
    entries: List[CorpusEntry] = []
    for label in classes:
        for i in range(sounds_per_class):
            sound_id = f"{label.value}-{i:02d}"
            rng = derive_rng(seed, f"sound-{sound_id}")
            params = synthesize_sound(label, rng)
            x = _drum(params["freq"], params["decay"], params["noise_share"], label, rng)
            write_wav(AudioClip(samples=x), directory / "audio" / f"{sound_id}.wav")
            entries.append(CorpusEntry(id=sound_id, path=f"audio/{sound_id}.wav",
                                       kind=ClipKind.SAMPLE, class_label=label))
            for m in range(imitations_per_sound):
                imitation_id = f"{sound_id}-imit{m}"
                y = imitate(params, label, derive_rng(seed, f"imitation-{imitation_id}"))
                write_wav(AudioClip(samples=y), directory / "audio" / f"{imitation_id}.wav")
                entries.append(CorpusEntry(id=imitation_id, path=f"audio/{imitation_id}.wav",
                                           kind=ClipKind.IMITATION, class_label=label,
                                           imitated_id=sound_id))
    write_manifest(entries, directory / "manifest.csv")
    logger.info(f"🥁 Wrote synthetic corpus of {len(entries)} clips to {directory}")
    return load_manifest(directory / "manifest.csv")


def synthesize_ratings(
    manifest: Manifest,
    oracle: DistanceTable,
    n_listeners: int = 20,
    pages_per_listener: int = 10,
    duplicates_per_listener: int = 2,
    noise: float = 0.05,
    listener_sd: float = 0.05,
    unreliable_listeners: int = 0,
    seed: int = 0,
) -> List[RatingRecord]:
    """Rating pages scored as a noisy decreasing function of the oracle's normalised distance.

    The last `unreliable_listeners` listeners answer uniformly at random.
    """
    pages: Dict[str, Dict[str, float]] = {}
    for row in oracle.rows:
        pages.setdefault(row.imitation_id, {})[row.candidate_id] = row.normalized
    imitations = sorted(i for i in pages if i in manifest and manifest.imitated_sound(i) is not None)
    if not imitations:
        raise ValueError("oracle table holds no imitation with a known imitated sound")

    records: List[RatingRecord] = []
    for k in range(n_listeners):
        listener = f"L{k:03d}"
        rng = derive_rng(seed, f"listener-{listener}")
        offset = rng.normal(0.0, listener_sd)
        random_answers = k >= n_listeners - unreliable_listeners
        chosen = list(rng.permutation(imitations)[:min(pages_per_listener, len(imitations))])
        schedule = [(imitation, False) for imitation in chosen]
        schedule += [(imitation, True) for imitation in chosen[:duplicates_per_listener]]
        for n, (imitation, duplicate) in enumerate(schedule):
            for candidate in sorted(pages[imitation]):
                if random_answers:
                    rating = rng.uniform(0.0, 1.0)
                else:
                    rating = 1.0 - pages[imitation][candidate] + offset + rng.normal(0.0, noise)
                records.append(RatingRecord(
                    listener_id=listener, test_page=f"p{n:02d}", imitation_id=imitation,
                    candidate_id=candidate, rating=float(np.clip(rating, 0.0, 1.0)), is_duplicate=duplicate,
                ))
    return records
