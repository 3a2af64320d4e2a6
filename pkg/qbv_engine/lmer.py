"""
Linear mixed-effects regression of ratings on feature distances.

    rating = nu_j + beta_j * distance + gamma_k + eps

with one intercept and one slope per imitated sound j (cell-means coding) and
a random intercept per listener k. Fitted by maximum likelihood through the
profiled deviance, a function of theta = sigma_gamma / sigma_eps only.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union
import numpy as np
from pydantic import ValidationError
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize_scalar
from scipy.stats import norm
from .corpus import Manifest
from .models import ClassLabel, FeatureSetResult, RatingRecord, SlopeRow
from .query import DistanceTable
from .logging import get_logger


LOG_THETA_MIN = -14.0
LOG_THETA_MAX = 7.0
GRID_POINTS = 43
Z_95 = 1.959964
SLOPE_HEADER = ["sound_id", "class", "slope", "lower", "upper", "significant"]
RESULTS_HEADER = ["extractor_id", "aic", "accuracy", "n_significant", "n_sounds"]

logger = get_logger("lmer")


class LmerError(Exception):
    """Custom exception for mixed-model fitting errors."""
    pass


@dataclass
class LmerDesign:
    """Ratings joined to distances, with the sufficient statistics of the fit."""
    sounds: List[str]
    listeners: List[str]
    y: np.ndarray
    x: np.ndarray
    sound_index: np.ndarray
    listener_index: np.ndarray
    class_labels: Dict[str, ClassLabel]

    def __post_init__(self):
        n_sounds, n_listeners = len(self.sounds), len(self.listeners)
        p = 2 * n_sounds
        cols_nu = self.sound_index
        cols_beta = self.sound_index + n_sounds

        xtx = np.zeros((p, p))
        np.add.at(xtx, (cols_nu, cols_nu), 1.0)
        np.add.at(xtx, (cols_nu, cols_beta), self.x)
        np.add.at(xtx, (cols_beta, cols_nu), self.x)
        np.add.at(xtx, (cols_beta, cols_beta), self.x ** 2)
        xty = np.zeros(p)
        np.add.at(xty, cols_nu, self.y)
        np.add.at(xty, cols_beta, self.x * self.y)
        ztx = np.zeros((n_listeners, p))
        np.add.at(ztx, (self.listener_index, cols_nu), 1.0)
        np.add.at(ztx, (self.listener_index, cols_beta), self.x)

        self.xtx = xtx
        self.xty = xty
        self.ztx = ztx
        self.zty = np.bincount(self.listener_index, weights=self.y, minlength=n_listeners)
        self.counts = np.bincount(self.listener_index, minlength=n_listeners).astype(float)

    @property
    def n_obs(self) -> int:
        return int(self.y.size)

    @property
    def n_fixed(self) -> int:
        return 2 * len(self.sounds)

    def residuals(self, beta: np.ndarray) -> np.ndarray:
        n_sounds = len(self.sounds)
        return self.y - beta[self.sound_index] - beta[self.sound_index + n_sounds] * self.x


@dataclass
class ProfiledSolution:
    theta: float
    deviance: float
    beta: np.ndarray
    penalized_rss: float
    factor: Tuple[np.ndarray, bool]
    listener_sums: np.ndarray


@dataclass
class LmerFit:
    """Maximum-likelihood fit of the per-sound slope model."""
    extractor_id: str
    sounds: List[str]
    class_labels: Dict[str, ClassLabel]
    intercepts: np.ndarray
    slopes: np.ndarray
    sigma_gamma2: float
    sigma_eps2: float
    covariance: np.ndarray
    log_likelihood: float
    n_params: int
    theta: float
    deviance: float
    n_obs: int
    listener_effects: Dict[str, float] = field(default_factory=dict)
    evaluations: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def aic(self) -> float:
        return aic(self)

    def slope_se(self) -> np.ndarray:
        n = len(self.sounds)
        return np.sqrt(np.maximum(np.diag(self.covariance)[n:], 0.0))


def build_design(
    records: Sequence[RatingRecord],
    distances: DistanceTable,
    manifest: Manifest,
) -> LmerDesign:
    """Join every rating to its normalised distance and to its imitated sound."""
    lookup = distances.lookup()
    missing = sorted({(r.imitation_id, r.candidate_id) for r in records
                      if (r.imitation_id, r.candidate_id) not in lookup})
    if missing:
        shown = ", ".join(f"({i}, {c})" for i, c in missing[:20])
        more = f" and {len(missing) - 20} more" if len(missing) > 20 else ""
        raise LmerError(f"{len(missing)} rating pair(s) have no {distances.extractor_id} distance: {shown}{more}")

    imitated: Dict[str, str] = {}
    for imitation_id in sorted({r.imitation_id for r in records}):
        if imitation_id not in manifest:
            raise LmerError(f"rated imitation '{imitation_id}' is not in the manifest")
        target = manifest.imitated_sound(imitation_id)
        if target is None:
            raise LmerError(f"rated imitation '{imitation_id}' has no imitated sound in the manifest")
        imitated[imitation_id] = target

    sounds = sorted(set(imitated.values()))
    listeners = sorted({r.listener_id for r in records})
    if len(listeners) < 2:
        raise LmerError(f"need at least 2 listeners, got {len(listeners)}")
    sound_pos = {s: i for i, s in enumerate(sounds)}
    listener_pos = {k: i for i, k in enumerate(listeners)}

    y = np.array([r.rating for r in records], dtype=float)
    x = np.array([lookup[(r.imitation_id, r.candidate_id)].normalized for r in records], dtype=float)
    sound_index = np.array([sound_pos[imitated[r.imitation_id]] for r in records], dtype=np.int64)
    listener_index = np.array([listener_pos[r.listener_id] for r in records], dtype=np.int64)

    for j, sound in enumerate(sounds):
        xs = x[sound_index == j]
        if xs.size < 2:
            raise LmerError(f"sound '{sound}' has {xs.size} rating(s); at least 2 are needed")
        if np.ptp(xs) == 0:
            raise LmerError(f"rank-deficient design: every distance of sound '{sound}' is {xs[0]!r}")

    class_labels = {s: manifest.get(s).class_label for s in sounds}
    return LmerDesign(sounds, listeners, y, x, sound_index, listener_index, class_labels)


def profiled_solution(design: LmerDesign, theta: float) -> ProfiledSolution:
    """Solve the penalised least-squares problem at theta and return the ML deviance."""
    theta2 = theta * theta
    lz2 = theta2 * design.counts + 1.0
    lz = np.sqrt(lz2)
    rzx = (theta / lz)[:, None] * design.ztx
    cu = theta * design.zty / lz
    rxtrx = design.xtx - rzx.T @ rzx
    try:
        factor = cho_factor(rxtrx, lower=True, check_finite=False)
    except LinAlgError:
        raise LmerError(f"fixed-effect system is not positive definite at theta={theta:.3g}")
    beta = cho_solve(factor, design.xty - rzx.T @ cu, check_finite=False)

    resid = design.residuals(beta)
    sums = np.bincount(design.listener_index, weights=resid, minlength=len(design.listeners))
    prss = float(resid @ resid - np.sum(theta2 * sums ** 2 / lz2))
    if not prss > 0:
        raise LmerError("degenerate fit: penalised residual sum of squares is not positive")
    n = design.n_obs
    deviance = float(np.sum(np.log(lz2)) + n * (1.0 + math.log(2.0 * math.pi * prss / n)))
    return ProfiledSolution(theta, deviance, beta, prss, factor, sums)


def _optimise_theta(design: LmerDesign) -> Tuple[ProfiledSolution, List[Tuple[float, float]]]:
    """Grid over log theta, golden-section refinement, boundary theta = 0 included."""
    evaluations: List[Tuple[float, float]] = []
    solutions: Dict[float, ProfiledSolution] = {}

    def evaluate(theta: float) -> float:
        if theta not in solutions:
            solutions[theta] = profiled_solution(design, theta)
            evaluations.append((theta, solutions[theta].deviance))
        return solutions[theta].deviance

    evaluate(0.0)
    grid = np.linspace(LOG_THETA_MIN, LOG_THETA_MAX, GRID_POINTS)
    values = np.array([evaluate(math.exp(t)) for t in grid])
    best = int(np.argmin(values))

    def objective(log_theta: float) -> float:
        return evaluate(math.exp(log_theta))

    lo, hi = grid[max(best - 1, 0)], grid[min(best + 1, GRID_POINTS - 1)]
    try:
        if 0 < best < GRID_POINTS - 1:
            result = minimize_scalar(objective, bracket=(lo, grid[best], hi),
                                     method="golden", options={"xtol": 1e-10})
        else:
            raise ValueError("minimum on the edge of the grid")
    except ValueError:
        # flat neighbourhood or grid edge: no valid bracket
        result = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    if not getattr(result, "success", True):
        raise LmerError(f"profiled-deviance search did not converge: {getattr(result, 'message', '')}")

    best_theta = min(solutions, key=lambda t: (solutions[t].deviance, t))
    best_solution = solutions[best_theta]
    worst_gap = min(d - best_solution.deviance for t, d in evaluations if t != best_theta) if len(evaluations) > 1 else 0.0
    logger.debug(
        f"θ̂={best_theta:.6g} deviance={best_solution.deviance:.6f}: below all {len(evaluations) - 1} other evaluations "
        f"(smallest margin {worst_gap:.3g})"
    )
    return best_solution, evaluations


def fit_lmer(
    records: Sequence[RatingRecord],
    distances: DistanceTable,
    manifest: Manifest,
) -> LmerFit:
    """Maximum-likelihood fit of ratings against normalised distances."""
    design = build_design(records, distances, manifest)
    solution, evaluations = _optimise_theta(design)

    n = design.n_obs
    sigma_eps2 = solution.penalized_rss / n
    theta2 = solution.theta ** 2
    identity = np.eye(design.n_fixed)
    covariance = sigma_eps2 * cho_solve(solution.factor, identity, check_finite=False)
    covariance = 0.5 * (covariance + covariance.T)
    effects = theta2 * solution.listener_sums / (1.0 + theta2 * design.counts)

    n_sounds = len(design.sounds)
    log_likelihood = -0.5 * solution.deviance
    fit = LmerFit(
        extractor_id=distances.extractor_id,
        sounds=design.sounds,
        class_labels=design.class_labels,
        intercepts=solution.beta[:n_sounds].copy(),
        slopes=solution.beta[n_sounds:].copy(),
        sigma_gamma2=theta2 * sigma_eps2,
        sigma_eps2=sigma_eps2,
        covariance=covariance,
        log_likelihood=log_likelihood,
        n_params=2 * n_sounds + 2,
        theta=solution.theta,
        deviance=solution.deviance,
        n_obs=n,
        listener_effects=dict(zip(design.listeners, effects.tolist())),
        evaluations=evaluations,
    )
    logger.info(
        f"📐 {fit.extractor_id}: {n} ratings, {n_sounds} sounds, ℓ={log_likelihood:.2f}, "
        f"AIC={fit.aic:.2f}, σγ²={fit.sigma_gamma2:.4g}, σε²={sigma_eps2:.4g}"
    )
    return fit


def aic(fit: LmerFit) -> float:
    return -2.0 * fit.log_likelihood + 2.0 * fit.n_params


def z_quantile(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise LmerError(f"confidence level must lie in (0, 1), got {level}")
    if level == 0.95:
        return Z_95
    return float(norm.ppf(0.5 + level / 2.0))


def wald_ci(fit: LmerFit, level: float = 0.95) -> Dict[str, Tuple[float, float]]:
    """Per-sound slope +- z * se."""
    z = z_quantile(level)
    se = fit.slope_se()
    return {
        sound: (float(fit.slopes[j] - z * se[j]), float(fit.slopes[j] + z * se[j]))
        for j, sound in enumerate(fit.sounds)
    }


def accuracy(cis: Dict[str, Tuple[float, float]]) -> float:
    """Percentage of sounds whose slope is significantly below zero."""
    if not cis:
        return 0.0
    return 100.0 * sum(1 for _, upper in cis.values() if upper < 0) / len(cis)


def slope_report(fit: LmerFit, cis: Dict[str, Tuple[float, float]]) -> List[SlopeRow]:
    """Slope rows sorted by class, then slope."""
    rows = [
        SlopeRow(
            sound_id=sound,
            class_label=fit.class_labels[sound],
            slope=float(fit.slopes[j]),
            lower=cis[sound][0],
            upper=cis[sound][1],
            significant=cis[sound][1] < 0,
        )
        for j, sound in enumerate(fit.sounds)
    ]
    return sorted(rows, key=lambda r: (r.class_label.value, r.slope, r.sound_id))


def summarize(fit: LmerFit, cis: Dict[str, Tuple[float, float]]) -> FeatureSetResult:
    return FeatureSetResult(
        extractor_id=fit.extractor_id,
        aic=fit.aic,
        accuracy=accuracy(cis),
        n_significant=sum(1 for _, upper in cis.values() if upper < 0),
        n_sounds=len(cis),
    )


def _atomic_csv(path: Union[str, Path], header: List[str], rows: List[List[object]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    tmp.replace(path)


def write_slope_report(rows: Sequence[SlopeRow], path: Union[str, Path]) -> None:
    _atomic_csv(path, SLOPE_HEADER, [
        [r.sound_id, r.class_label.value, repr(r.slope), repr(r.lower), repr(r.upper), int(r.significant)]
        for r in rows
    ])


def read_slope_report(path: Union[str, Path]) -> List[SlopeRow]:
    rows: List[SlopeRow] = []
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            if next(reader, None) != SLOPE_HEADER:
                raise LmerError(f"{path}: header must be {','.join(SLOPE_HEADER)}")
            for row_number, row in enumerate(reader, start=2):
                try:
                    rows.append(SlopeRow(
                        sound_id=row[0], class_label=row[1], slope=float(row[2]),
                        lower=float(row[3]), upper=float(row[4]), significant=row[5] == "1",
                    ))
                except (IndexError, ValueError, ValidationError) as e:
                    raise LmerError(f"{path}: row {row_number}: {e}")
    except OSError as e:
        raise LmerError(f"cannot read slope report {path}: {e}")
    return rows


def write_results_csv(results: Sequence[FeatureSetResult], path: Union[str, Path]) -> None:
    _atomic_csv(path, RESULTS_HEADER, [
        [r.extractor_id, repr(r.aic), repr(r.accuracy), r.n_significant, r.n_sounds] for r in results
    ])


def read_results_csv(path: Union[str, Path]) -> List[FeatureSetResult]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            return [FeatureSetResult(**row) for row in reader]
    except (OSError, ValidationError) as e:
        raise LmerError(f"cannot read results file {path}: {e}")
