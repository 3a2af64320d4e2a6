"""
Rank statistics and listener screening for the similarity ratings.
"""

import csv
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union
import numpy as np
from pydantic import ValidationError
from scipy.stats import rankdata
from .corpus import Manifest
from .models import ListenerScreening, RatingRecord, ScreeningResult
from .logging import get_logger


RATINGS_HEADER = ["listener_id", "test_page", "imitation_id", "candidate_id", "rating", "is_duplicate"]
RHO_THRESHOLD = 0.5
EXPECTED_DUPLICATES = 2

logger = get_logger("stats")


class StatsError(Exception):
    """Custom exception for rating statistics errors."""
    pass


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of mid-ranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise StatsError(f"spearman_rho needs two equal-length sequences, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise StatsError("spearman_rho needs at least 2 paired values")
    rx, ry = rankdata(x), rankdata(y)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    denom = np.sqrt(np.sum(dx * dx) * np.sum(dy * dy))
    if denom == 0:
        raise StatsError("zero rank variance: one sequence is constant")
    return float(np.clip(np.sum(dx * dy) / denom, -1.0, 1.0))


def kendalls_w(ratings: np.ndarray) -> float:
    """Tie-corrected coefficient of concordance of an m raters x n items matrix.

    Each rater's row is converted to mid-ranks, so raw scores may be passed.
    """
    ratings = np.asarray(ratings, dtype=float)
    if ratings.ndim != 2:
        raise StatsError(f"kendalls_w expects a 2-D raters x items matrix, got shape {ratings.shape}")
    m, n = ratings.shape
    if m < 2 or n < 2:
        raise StatsError(f"kendalls_w needs at least 2 raters and 2 items, got {m} x {n}")

    ranks = np.vstack([rankdata(row) for row in ratings])
    rank_sums = ranks.sum(axis=0)
    s = float(np.sum((rank_sums - rank_sums.mean()) ** 2))
    ties = 0.0
    for row in ranks:
        _, counts = np.unique(row, return_counts=True)
        ties += float(np.sum(counts ** 3 - counts))
    denom = m * m * (n ** 3 - n) - m * ties
    if denom <= 0:
        raise StatsError("degenerate input: every rater ties all items")
    return 12.0 * s / denom


def _pages(records: Iterable[RatingRecord]) -> Dict[Tuple[str, str], List[RatingRecord]]:
    pages: Dict[Tuple[str, str], List[RatingRecord]] = defaultdict(list)
    for r in records:
        pages[(r.listener_id, r.test_page)].append(r)
    return pages


def _page_vector(page: List[RatingRecord]) -> Dict[str, float]:
    return {r.candidate_id: r.rating for r in page}


def duplicate_pairs(records: Sequence[RatingRecord]) -> Dict[str, List[Tuple[Dict[str, float], Dict[str, float]]]]:
    """Per listener, (original page, duplicate page) rating maps for the same imitation."""
    originals: Dict[Tuple[str, str], List[RatingRecord]] = {}
    duplicates: List[Tuple[str, List[RatingRecord]]] = []
    for (listener, _), page in sorted(_pages(records).items()):
        if page[0].is_duplicate:
            duplicates.append((listener, page))
        else:
            originals.setdefault((listener, page[0].imitation_id), page)

    pairs: Dict[str, List[Tuple[Dict[str, float], Dict[str, float]]]] = defaultdict(list)
    for listener, page in duplicates:
        original = originals.get((listener, page[0].imitation_id))
        if original is None:
            logger.warning(f"⚠️ Listener {listener}: duplicate page of {page[0].imitation_id} has no original page")
            continue
        pairs[listener].append((_page_vector(original), _page_vector(page)))
    return dict(pairs)


def screen_listeners(records: Sequence[RatingRecord], threshold: float = RHO_THRESHOLD) -> ScreeningResult:
    """Keep listeners who reproduce at least one duplicate page with rho >= threshold."""
    pairs = duplicate_pairs(records)
    listeners: Dict[str, ListenerScreening] = {}
    for listener in sorted({r.listener_id for r in records}):
        listener_pairs = pairs.get(listener, [])
        if not listener_pairs:
            listeners[listener] = ListenerScreening(listener_id=listener, reason="no duplicate pages")
            logger.warning(f"⚠️ Listener {listener} has no duplicate pages; excluded")
            continue
        if len(listener_pairs) < EXPECTED_DUPLICATES:
            logger.warning(f"⚠️ Listener {listener} has {len(listener_pairs)} duplicate page pair(s), expected {EXPECTED_DUPLICATES}")

        rhos = []
        for original, duplicate in listener_pairs:
            common = sorted(set(original) & set(duplicate))
            try:
                rhos.append(spearman_rho([original[c] for c in common], [duplicate[c] for c in common]))
            except StatsError as e:
                logger.debug(f"Listener {listener}: duplicate pair skipped ({e})")
        retained = bool(rhos) and max(rhos) >= threshold
        reason = None
        if not rhos:
            reason = "no usable duplicate pair"
        elif not retained:
            reason = f"max rho {max(rhos):.3f} < {threshold}"
        listeners[listener] = ListenerScreening(listener_id=listener, rhos=rhos, retained=retained, reason=reason)

    result = ScreeningResult(listeners=listeners, threshold=threshold)
    logger.info(f"🎧 Screening: {len(result.reliable)} of {len(listeners)} listeners retained")
    return result


def prepare_ratings(records: Sequence[RatingRecord], screening: ScreeningResult) -> List[RatingRecord]:
    """Ratings of retained listeners, duplicate pages removed."""
    reliable = set(screening.reliable)
    return [r for r in records if r.listener_id in reliable and not r.is_duplicate]


def screening_summary(records: Sequence[RatingRecord], screening: ScreeningResult) -> Dict[str, float]:
    """Retained listener and response counts plus mean/SE of duplicate-page rho."""
    summary = screening.rho_summary()
    return {
        "listeners": len(screening.listeners),
        "retained_listeners": len(screening.reliable),
        "responses": len(prepare_ratings(records, screening)),
        "rho_mean": summary["mean"],
        "rho_se": summary["se"],
    }


def concordance_by_imitation(records: Sequence[RatingRecord]) -> Dict[str, object]:
    """Kendall's W per imitation across the listeners who rated it, with mean and SE."""
    by_imitation: Dict[str, Dict[str, Dict[str, float]]] = defaultdict(dict)
    for (listener, _), page in sorted(_pages(r for r in records if not r.is_duplicate).items()):
        by_imitation[page[0].imitation_id].setdefault(listener, _page_vector(page))

    values: Dict[str, float] = {}
    for imitation, pages in sorted(by_imitation.items()):
        if len(pages) < 2:
            continue
        common = sorted(set.intersection(*(set(p) for p in pages.values())))
        if len(common) < 2:
            continue
        matrix = np.array([[p[c] for c in common] for p in pages.values()])
        try:
            values[imitation] = kendalls_w(matrix)
        except StatsError as e:
            logger.debug(f"Concordance of {imitation} skipped ({e})")

    w = np.array(list(values.values()))
    mean = float(w.mean()) if w.size else float("nan")
    se = float(w.std(ddof=1) / np.sqrt(w.size)) if w.size > 1 else float("nan")
    return {"per_imitation": values, "mean": mean, "se": se, "n": int(w.size)}


def listener_identification(records: Sequence[RatingRecord], manifest: Manifest) -> Dict[str, float]:
    """How often listeners rated the imitated sound most (or second most) similar."""
    tests = top1 = top2 = 0
    chance = []
    for _, page in sorted(_pages(r for r in records if not r.is_duplicate).items()):
        target = manifest.imitated_sound(page[0].imitation_id) if page[0].imitation_id in manifest else None
        ratings = _page_vector(page)
        if target is None or target not in ratings:
            continue
        better = sum(1 for c, v in ratings.items() if c != target and v > ratings[target])
        tests += 1
        top1 += better == 0
        top2 += better <= 1
        chance.append(1.0 / len(ratings))
    if tests == 0:
        return {"tests": 0, "top1": float("nan"), "top2": float("nan"), "chance": float("nan")}
    return {"tests": tests, "top1": top1 / tests, "top2": top2 / tests, "chance": float(np.mean(chance))}


def read_ratings_csv(path: Union[str, Path]) -> List[RatingRecord]:
    """Read and validate a ratings file; (listener, page, candidate) must be unique."""
    path = Path(path)
    if not path.exists():
        raise StatsError(f"ratings file not found: {path}")
    records: List[RatingRecord] = []
    seen: Dict[Tuple[str, str, str], int] = {}
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = [h.strip() for h in next(reader, [])]
            if header != RATINGS_HEADER:
                raise StatsError(f"{path}: header must be {','.join(RATINGS_HEADER)}")
            for row_number, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    record = RatingRecord(**dict(zip(RATINGS_HEADER, (c.strip() for c in row))))
                except ValidationError as e:
                    problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
                    raise StatsError(f"{path}: row {row_number}: {problems}")
                key = (record.listener_id, record.test_page, record.candidate_id)
                if key in seen:
                    raise StatsError(f"{path}: row {row_number}: repeats the rating of row {seen[key]}")
                seen[key] = row_number
                records.append(record)
    except OSError as e:
        raise StatsError(f"cannot read ratings file {path}: {e}")
    logger.debug(f"📋 Loaded {len(records)} ratings from {path}")
    return records


def write_ratings_csv(records: Iterable[RatingRecord], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RATINGS_HEADER)
        for r in records:
            writer.writerow([r.listener_id, r.test_page, r.imitation_id, r.candidate_id,
                             repr(r.rating), int(r.is_duplicate)])
