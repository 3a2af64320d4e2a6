"""Builders shared by the test modules."""

from typing import Optional

import numpy as np

from qbv_engine.corpus import CANONICAL_RATE
from qbv_engine.models import ClassLabel, ClipKind, CorpusEntry


def sine(freq: float, seconds: float = 1.0, amplitude: float = 1.0, rate: int = CANONICAL_RATE) -> np.ndarray:
    t = np.arange(int(round(seconds * rate))) / rate
    return amplitude * np.sin(2 * np.pi * freq * t)


def decaying_burst(seconds: float = 0.5, tail: float = 0.5, seed: int = 0) -> np.ndarray:
    """Noise burst with an exponential decay followed by digital silence."""
    rng = np.random.default_rng(seed)
    n = int(seconds * CANONICAL_RATE)
    x = 0.8 * rng.uniform(-1, 1, n) * np.exp(-np.arange(n) / (0.08 * CANONICAL_RATE))
    x[-64:] = 0.0
    return np.concatenate([x, np.zeros(int(tail * CANONICAL_RATE))])


def entry(cid: str, kind: str, label: str, imitated: Optional[str] = None) -> CorpusEntry:
    return CorpusEntry(id=cid, path=f"{cid}.wav", kind=ClipKind(kind),
                       class_label=ClassLabel(label), imitated_id=imitated)
