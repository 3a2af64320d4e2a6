"""
Distances, within-class distance tables and ranked query-by-vocalisation retrieval.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Tuple, Union
import numpy as np
from pydantic import ValidationError
from .barkgram import Barkgram
from .corpus import AudioClip, Manifest
from .features import BaseExtractor, FeatureError, pk08_distance
from .models import ClassLabel, DistanceRow, FeatureVector, RetrievalSummary
from .logging import get_logger


DISTANCE_HEADER = ["imitation_id", "candidate_id", "class_label", "extractor_id", "distance", "normalized"]

logger = get_logger("query")


class QueryError(Exception):
    """Custom exception for distance and retrieval errors."""
    pass


def euclidean(a: FeatureVector, b: FeatureVector) -> float:
    """Euclidean distance between two vectors of the same extractor."""
    if a.extractor_id != b.extractor_id:
        raise QueryError(f"extractor mismatch: {a.extractor_id} vs {b.extractor_id}")
    if a.dim != b.dim:
        raise QueryError(f"length mismatch: {a.dim} vs {b.dim}")
    return float(np.linalg.norm(a.values - b.values))


def feature_distance(a: Union[FeatureVector, Barkgram], b: Union[FeatureVector, Barkgram]) -> float:
    """PK08 distance for barkgrams, Euclidean otherwise."""
    if isinstance(a, Barkgram) and isinstance(b, Barkgram):
        try:
            return pk08_distance(a, b)
        except FeatureError as e:
            raise QueryError(str(e))
    if isinstance(a, FeatureVector) and isinstance(b, FeatureVector):
        return euclidean(a, b)
    raise QueryError(f"cannot compare {type(a).__name__} with {type(b).__name__}")


@dataclass
class DistanceTable:
    """Imitation x same-class candidate distances of one feature set."""
    extractor_id: str
    rows: List[DistanceRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[DistanceRow]:
        return iter(self.rows)

    def lookup(self) -> Dict[Tuple[str, str], DistanceRow]:
        return {(r.imitation_id, r.candidate_id): r for r in self.rows}

    def distances(self) -> np.ndarray:
        return np.array([r.distance for r in self.rows])

    def normalized(self) -> np.ndarray:
        return np.array([r.normalized for r in self.rows])


def normalize_distances(table: DistanceTable) -> DistanceTable:
    """Min-max scale all distances of the table onto [0, 1]; a constant table maps to 0."""
    if not table.rows:
        raise QueryError(f"cannot normalise an empty {table.extractor_id} distance table")
    d = table.distances()
    lo, hi = float(d.min()), float(d.max())
    span = hi - lo
    rows = [
        r.model_copy(update={"normalized": (r.distance - lo) / span if span > 0 else 0.0})
        for r in table.rows
    ]
    return DistanceTable(extractor_id=table.extractor_id, rows=rows)


def within_class_table(
    features: Mapping[str, Union[FeatureVector, Barkgram]],
    manifest: Manifest,
    extractor_id: str,
    distance: Optional[Callable] = None,
) -> DistanceTable:
    """One row per (imitation, same-class sample) pair, in manifest order."""
    distance = distance or feature_distance
    missing = [cid for cid in manifest.ids() if cid not in features]
    if missing:
        raise QueryError(f"{extractor_id}: missing features for manifest ids {missing}")

    by_class: Dict[ClassLabel, List[str]] = {}
    for entry in manifest.samples():
        by_class.setdefault(entry.class_label, []).append(entry.id)

    rows: List[DistanceRow] = []
    for imitation in manifest.imitations():
        candidates = by_class.get(imitation.class_label)
        if not candidates:
            raise QueryError(
                f"imitation '{imitation.id}' is of class '{imitation.class_label.value}', which has no samples"
            )
        for candidate in candidates:
            rows.append(DistanceRow(
                imitation_id=imitation.id,
                candidate_id=candidate,
                class_label=imitation.class_label,
                extractor_id=extractor_id,
                distance=distance(features[imitation.id], features[candidate]),
            ))
    logger.debug(f"📏 {extractor_id}: {len(rows)} within-class distances")
    return DistanceTable(extractor_id=extractor_id, rows=rows)


def rank_query(
    query: AudioClip,
    library: Mapping[str, Union[FeatureVector, Barkgram]],
    extractor: BaseExtractor,
) -> List[Tuple[str, float]]:
    """Library ids by ascending distance to the query; ties broken by id."""
    if not library:
        raise QueryError("empty library")
    q = extractor.extract(query)
    ranked = [(cid, extractor.distance(q, feature)) for cid, feature in library.items()]
    return sorted(ranked, key=lambda item: (item[1], item[0]))


def imitated_sound_ranks(table: DistanceTable, manifest: Manifest) -> Dict[str, int]:
    """1-based rank of each imitation's imitated sound among its candidates."""
    grouped: Dict[str, List[DistanceRow]] = {}
    for row in table.rows:
        grouped.setdefault(row.imitation_id, []).append(row)
    ranks: Dict[str, int] = {}
    for imitation_id, rows in grouped.items():
        target = manifest.imitated_sound(imitation_id)
        if target is None:
            continue
        ordered = sorted(rows, key=lambda r: (r.distance, r.candidate_id))
        for position, row in enumerate(ordered, start=1):
            if row.candidate_id == target:
                ranks[imitation_id] = position
                break
    return ranks


def retrieval_summary(table: DistanceTable, manifest: Manifest) -> RetrievalSummary:
    """Top-1/top-2 retrieval rate and mean reciprocal rank of the imitated sounds."""
    ranks = np.array(list(imitated_sound_ranks(table, manifest).values()), dtype=float)
    if ranks.size == 0:
        return RetrievalSummary(extractor_id=table.extractor_id, n_queries=0,
                                top1_rate=0.0, top2_rate=0.0, mean_reciprocal_rank=0.0)
    return RetrievalSummary(
        extractor_id=table.extractor_id,
        n_queries=int(ranks.size),
        top1_rate=float(np.mean(ranks == 1)),
        top2_rate=float(np.mean(ranks <= 2)),
        mean_reciprocal_rank=float(np.mean(1.0 / ranks)),
    )


def write_distance_csv(table: DistanceTable, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(DISTANCE_HEADER)
        for r in table.rows:
            writer.writerow([r.imitation_id, r.candidate_id, r.class_label.value, r.extractor_id,
                             repr(r.distance), repr(r.normalized)])
    tmp.replace(path)


def read_distance_csv(path: Union[str, Path]) -> DistanceTable:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != DISTANCE_HEADER:
                raise QueryError(f"{path}: header must be {','.join(DISTANCE_HEADER)}")
            rows = []
            for row_number, row in enumerate(reader, start=2):
                try:
                    rows.append(DistanceRow(**dict(zip(DISTANCE_HEADER, row))))
                except ValidationError as e:
                    raise QueryError(f"{path}: row {row_number}: {e.errors()[0]['msg']}")
    except OSError as e:
        raise QueryError(f"cannot read distance file {path}: {e}")
    extractor_id = rows[0].extractor_id if rows else path.stem
    return DistanceTable(extractor_id=extractor_id, rows=rows)
