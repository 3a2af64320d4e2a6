"""Shared fixtures: deterministic clips and a small on-disk synthetic corpus."""

import numpy as np
import pytest

from qbv_engine.corpus import CANONICAL_RATE, AudioClip
from qbv_engine.models import ClassLabel
from qbv_engine.synthetic import write_synthetic_corpus

from .helpers import sine


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sine_clip():
    return AudioClip(samples=sine(1000.0, amplitude=0.5))


@pytest.fixture
def noise_clip(rng):
    return AudioClip(samples=0.3 * rng.uniform(-1, 1, CANONICAL_RATE))


@pytest.fixture
def synthetic_corpus(tmp_path):
    """Two classes, three sounds each, one imitation per sound, on disk."""
    directory = tmp_path / "corpus"
    manifest = write_synthetic_corpus(
        directory, sounds_per_class=3, imitations_per_sound=1, seed=7,
        classes=[ClassLabel.KICK, ClassLabel.HIHAT],
    )
    return directory, manifest
