"""
Data models for the QBV feature engine.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ClipKind(str, Enum):
    """Whether a clip is a vocal imitation or a library sound."""
    IMITATION = "imitation"
    SAMPLE = "sample"


class ClassLabel(str, Enum):
    """Drum class of a clip."""
    KICK = "kick"
    SNARE = "snare"
    CYMBAL = "cymbal"
    HIHAT = "hihat"
    TOM = "tom"
    OTHER = "other"


class CorpusEntry(BaseModel):
    """One row of a corpus manifest."""
    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    path: str = Field(min_length=1)
    kind: ClipKind
    class_label: ClassLabel
    imitated_id: Optional[str] = None

    @field_validator("id", "path")
    @classmethod
    def no_commas(cls, v: str) -> str:
        """Manifest fields are never quoted, so commas cannot appear."""
        if "," in v:
            raise ValueError("commas are not permitted")
        return v.strip()

    @field_validator("imitated_id", mode="before")
    @classmethod
    def empty_is_none(cls, v):
        if v is None or (isinstance(v, str) and not v.strip()):
            return None
        return v.strip()

    @model_validator(mode="after")
    def imitated_only_for_imitations(self):
        if self.imitated_id is not None and self.kind != ClipKind.IMITATION:
            raise ValueError("imitated_id is only allowed on imitation rows")
        return self


class RatingRecord(BaseModel):
    """One listener response: a rating of one candidate sound on one test page."""
    model_config = ConfigDict(frozen=True)

    listener_id: str
    test_page: str
    imitation_id: str
    candidate_id: str
    rating: float = Field(ge=0.0, le=1.0)
    is_duplicate: bool = False

    @field_validator("rating")
    @classmethod
    def finite_rating(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("rating must be finite")
        return v


class DistanceRow(BaseModel):
    """Distance between one imitation and one same-class candidate."""
    imitation_id: str
    candidate_id: str
    class_label: ClassLabel
    extractor_id: str
    distance: float = Field(ge=0.0)
    normalized: float = 0.0


class SlopeRow(BaseModel):
    """Per-sound slope estimate with its Wald interval."""
    sound_id: str
    class_label: ClassLabel
    slope: float
    lower: float
    upper: float
    significant: bool


class FeatureSetResult(BaseModel):
    """AIC and accuracy of one feature set."""
    extractor_id: str
    aic: float
    accuracy: float
    n_significant: int
    n_sounds: int


class ListenerScreening(BaseModel):
    """Duplicate-page agreement of one listener."""
    listener_id: str
    rhos: List[float] = []
    retained: bool = False
    reason: Optional[str] = None


class ScreeningResult(BaseModel):
    """Outcome of listener post-screening."""
    listeners: Dict[str, ListenerScreening]
    threshold: float = 0.5

    @property
    def reliable(self) -> List[str]:
        return sorted(k for k, v in self.listeners.items() if v.retained)

    @property
    def excluded(self) -> List[str]:
        return sorted(k for k, v in self.listeners.items() if not v.retained)

    def rho_summary(self) -> Dict[str, float]:
        """Mean and standard error of duplicate-page rho over retained listeners."""
        values = [r for k in self.reliable for r in self.listeners[k].rhos]
        if not values:
            return {"mean": float("nan"), "se": float("nan"), "n": 0}
        arr = np.asarray(values, dtype=float)
        se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
        return {"mean": float(arr.mean()), "se": se, "n": int(arr.size)}


class RetrievalSummary(BaseModel):
    """How highly a feature set ranks each imitation's imitated sound."""
    extractor_id: str
    n_queries: int
    top1_rate: float
    top2_rate: float
    mean_reciprocal_rank: float


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Flat feature vector produced by one extractor for one clip."""
    values: np.ndarray
    extractor_id: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.dim
