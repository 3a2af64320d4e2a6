"""
Audio ingestion, corpus manifests and train/validation splits.
"""

import csv
from dataclasses import dataclass
from math import gcd
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union
import numpy as np
import soundfile as sf
from pydantic import ValidationError
from scipy.signal import resample_poly
from .models import ClassLabel, ClipKind, CorpusEntry
from .logging import get_logger


CANONICAL_RATE = 44100
MANIFEST_HEADER = ["id", "path", "kind", "class_label", "imitated_id"]
SUPPORTED_SUBTYPES = {"PCM_U8", "PCM_S8", "PCM_16", "PCM_24", "PCM_32", "FLOAT"}
# WAVEX is WAVE_FORMAT_EXTENSIBLE, used for 24-bit, float and multichannel exports
WAV_FORMATS = ("WAV", "WAVEX")

logger = get_logger("corpus")


class CorpusError(Exception):
    """Custom exception for corpus and audio ingestion errors."""
    pass


class ManifestError(CorpusError):
    """Manifest validation failure, always naming the offending row."""
    pass


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono PCM clip at the canonical rate, amplitudes within [-1, 1]."""
    samples: np.ndarray
    sample_rate: int = CANONICAL_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if self.sample_rate <= 0:
            raise CorpusError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise CorpusError("clip contains non-finite samples")
        peak = float(np.max(np.abs(samples))) if samples.size else 0.0
        if peak > 1.0:
            raise CorpusError(f"clip samples must lie in [-1, 1], peak is {peak:.4f}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def __len__(self) -> int:
        return int(self.samples.size)


def load_wav(path: Union[str, Path]) -> AudioClip:
    """Load a PCM/float WAV as a mono clip at 44100 Hz.

    Channels are averaged, other rates are resampled with a polyphase
    windowed-sinc filter, and a clip whose peak exceeds full scale (float
    files, resampling overshoot) is divided by its peak.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"audio file not found: {path}")

    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise CorpusError(f"unreadable audio file {path}: {e}")

    if info.format not in WAV_FORMATS:
        raise CorpusError(f"unsupported container {info.format} in {path}; only WAV is accepted")
    if info.subtype not in SUPPORTED_SUBTYPES:
        raise CorpusError(f"unsupported encoding {info.subtype} in {path}")
    if info.channels not in (1, 2):
        raise CorpusError(f"unsupported channel count {info.channels} in {path}")

    try:
        data, rate = sf.read(str(path), dtype="float64", always_2d=True)
    except RuntimeError as e:
        raise CorpusError(f"unreadable audio file {path}: {e}")

    if data.shape[0] == 0:
        raise CorpusError(f"zero-length audio in {path}")

    mono = data.mean(axis=1)
    if rate != CANONICAL_RATE:
        g = gcd(int(rate), CANONICAL_RATE)
        mono = resample_poly(mono, CANONICAL_RATE // g, int(rate) // g)
        logger.debug(f"Resampled {path.name} from {rate} Hz to {CANONICAL_RATE} Hz")

    peak = float(np.max(np.abs(mono))) if mono.size else 0.0
    if peak > 1.0:
        mono = mono / peak

    return AudioClip(samples=mono, sample_rate=CANONICAL_RATE)


def write_wav(clip: AudioClip, path: Union[str, Path], subtype: str = "PCM_16") -> None:
    """Write a clip as a WAV file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), clip.samples, clip.sample_rate, subtype=subtype, format="WAV")


class Manifest:
    """Validated, ordered set of corpus entries."""

    def __init__(self, entries: Iterable[CorpusEntry], root: Optional[Path] = None):
        self.entries: Tuple[CorpusEntry, ...] = tuple(entries)
        self.root = Path(root) if root is not None else Path(".")
        self._by_id: Dict[str, CorpusEntry] = {e.id: e for e in self.entries}
        if len(self._by_id) != len(self.entries):
            raise ManifestError("duplicate ids in manifest")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[CorpusEntry]:
        return iter(self.entries)

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._by_id

    def get(self, entry_id: str) -> CorpusEntry:
        try:
            return self._by_id[entry_id]
        except KeyError:
            raise CorpusError(f"unknown corpus id: {entry_id}")

    def ids(self) -> List[str]:
        return [e.id for e in self.entries]

    def samples(self) -> List[CorpusEntry]:
        return [e for e in self.entries if e.kind == ClipKind.SAMPLE]

    def imitations(self) -> List[CorpusEntry]:
        return [e for e in self.entries if e.kind == ClipKind.IMITATION]

    def classes(self) -> List[ClassLabel]:
        return sorted({e.class_label for e in self.entries}, key=lambda c: c.value)

    def imitated_sound(self, imitation_id: str) -> Optional[str]:
        return self.get(imitation_id).imitated_id

    def resolve_path(self, entry: CorpusEntry) -> Path:
        path = Path(entry.path)
        return path if path.is_absolute() else self.root / path

    def load_clip(self, entry_id: str) -> AudioClip:
        return load_wav(self.resolve_path(self.get(entry_id)))


def load_manifest(path: Union[str, Path]) -> Manifest:
    """Read and validate a corpus manifest CSV."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            rows = list(csv.reader(f))
    except (OSError, UnicodeDecodeError) as e:
        raise ManifestError(f"cannot read manifest {path}: {e}")

    if not rows:
        raise ManifestError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    if header != MANIFEST_HEADER:
        raise ManifestError(f"{path}: header must be {','.join(MANIFEST_HEADER)}, got {','.join(header)}")

    entries: List[CorpusEntry] = []
    row_of: Dict[str, int] = {}
    for row_number, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(MANIFEST_HEADER):
            raise ManifestError(f"{path}: row {row_number} has {len(row)} fields, expected {len(MANIFEST_HEADER)}")
        try:
            entry = CorpusEntry(**dict(zip(MANIFEST_HEADER, (cell.strip() for cell in row))))
        except ValidationError as e:
            problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
            raise ManifestError(f"{path}: row {row_number}: {problems}")
        if entry.id in row_of:
            raise ManifestError(f"{path}: row {row_number}: duplicate id '{entry.id}' (first seen on row {row_of[entry.id]})")
        row_of[entry.id] = row_number
        entries.append(entry)

    by_id = {e.id: e for e in entries}
    for entry in entries:
        if entry.imitated_id is None:
            continue
        target = by_id.get(entry.imitated_id)
        if target is None:
            raise ManifestError(
                f"{path}: row {row_of[entry.id]}: imitated_id '{entry.imitated_id}' does not exist"
            )
        if target.kind != ClipKind.SAMPLE:
            raise ManifestError(
                f"{path}: row {row_of[entry.id]}: imitated_id '{entry.imitated_id}' is not a sample"
            )

    logger.debug(f"📋 Loaded {len(entries)} manifest entries from {path}")
    return Manifest(entries, root=path.parent)


def write_manifest(entries: Iterable[CorpusEntry], path: Union[str, Path]) -> None:
    """Write entries in manifest CSV format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for e in entries:
            writer.writerow([e.id, e.path, e.kind.value, e.class_label.value, e.imitated_id or ""])


def split_train_val(
    entries: Sequence[CorpusEntry], fraction: float, seed: int
) -> Tuple[List[CorpusEntry], List[CorpusEntry]]:
    """Deterministic split, stratified by clip kind.

    Each kind is ordered by id, shuffled under the seed and cut at
    round(fraction * count), so both partitions keep the imitation/sample
    ratio and the result does not depend on input order.
    """
    if not 0.0 < fraction < 1.0:
        raise CorpusError(f"fraction must lie strictly between 0 and 1, got {fraction}")

    rng = np.random.default_rng(seed)
    train: List[CorpusEntry] = []
    val: List[CorpusEntry] = []
    for kind in (ClipKind.IMITATION, ClipKind.SAMPLE):
        group = sorted((e for e in entries if e.kind == kind), key=lambda e: e.id)
        if len(group) < 2:
            raise CorpusError(f"need at least 2 entries of kind '{kind.value}' to split, got {len(group)}")
        order = rng.permutation(len(group))
        n_train = min(max(int(round(fraction * len(group))), 1), len(group) - 1)
        train.extend(group[i] for i in order[:n_train])
        val.extend(group[i] for i in order[n_train:])
    return train, val
