"""Multi-objective evaluation: dominance, non-dominated filtering, exact 2-D
hypervolume with a Monte-Carlo oracle, preference sampling, and inference
sweeps over preference grids.

Both objectives are minimized throughout.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .data import TabularDataset
from .errors import ConfigurationError, UsageError
from .models import CommunicatedModel, Hypernetwork, infer_with_preference
from .objectives import (
    EPS_LAMBDA,
    ObjectivePoint,
    PointKind,
    PreferenceVector,
    dp_disparity_hard,
    error_rate,
)

log = logging.getLogger(__name__)

PREDICTION_THRESHOLD = 0.5


@dataclass(frozen=True)
class SolutionSet:
    """Evaluated objective points, optionally tagged with the preference
    vector each was inferred under."""

    points: list[ObjectivePoint]
    provenance: list[PreferenceVector] | None = None

    def __post_init__(self) -> None:
        kinds = {p.kind for p in self.points}
        if len(kinds) > 1:
            raise UsageError("solution sets must hold points of a single kind")
        if self.provenance is not None and len(self.provenance) != len(self.points):
            raise UsageError("provenance must align one-to-one with points")

    def __len__(self) -> int:
        return len(self.points)

    def as_array(self) -> np.ndarray:
        return np.array([p.as_tuple() for p in self.points]).reshape(len(self.points), 2)


@dataclass(frozen=True)
class ReferencePoint:
    r1: float
    r2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.r1, self.r2])


class Dominance(enum.Enum):
    NONE = "none"
    DOMINATES = "dominates"
    STRICTLY_DOMINATES = "strictly_dominates"


def dominates(a: ObjectivePoint, b: ObjectivePoint) -> Dominance:
    """Componentwise dominance of a over b (both objectives minimized)."""
    if a.kind is not b.kind:
        raise UsageError("cannot compare points of different kinds")
    a1, a2 = a.as_tuple()
    b1, b2 = b.as_tuple()
    if a1 < b1 and a2 < b2:
        return Dominance.STRICTLY_DOMINATES
    if a1 <= b1 and a2 <= b2 and (a1 < b1 or a2 < b2):
        return Dominance.DOMINATES
    return Dominance.NONE


def _nondominated_mask(values: np.ndarray) -> np.ndarray:
    """Boolean mask of points not (weakly) dominated by any other.

    Sort-and-sweep over the first coordinate; duplicates of a retained
    point stay retained only at their first occurrence.
    """
    n = values.shape[0]
    keep = np.zeros(n, dtype=bool)
    order = np.lexsort((values[:, 1], values[:, 0]))
    best_second = np.inf
    i = 0
    while i < n:
        j = i
        first = values[order[i], 0]
        while j < n and values[order[j], 0] == first:
            j += 1
        group = order[i:j]
        group_min = values[group, 1].min()
        if group_min < best_second:
            survivors = group[values[group, 1] == group_min]
            keep[survivors.min()] = True  # first occurrence in input order
            best_second = group_min
        i = j
    return keep


def nondominated_filter(solutions: SolutionSet) -> SolutionSet:
    values = solutions.as_array()
    if values.shape[0] == 0:
        return solutions
    keep = _nondominated_mask(values)
    points = [p for p, k in zip(solutions.points, keep) if k]
    provenance = None
    if solutions.provenance is not None:
        provenance = [p for p, k in zip(solutions.provenance, keep) if k]
    return SolutionSet(points, provenance)


def hypervolume_2d(solutions: SolutionSet, ref: ReferencePoint) -> float:
    """Exact area dominated by the set and bounded by the reference point.

    Points at or beyond the reference contribute nothing; they are dropped
    with a warning. Sort-and-sweep over the first coordinate.
    """
    values = solutions.as_array()
    if values.shape[0] == 0:
        return 0.0
    inside = (values[:, 0] < ref.r1) & (values[:, 1] < ref.r2)
    if not inside.all():
        log.warning(
            "%d of %d points lie outside the reference box and contribute no hypervolume",
            int((~inside).sum()),
            values.shape[0],
        )
    values = values[inside]
    if values.shape[0] == 0:
        return 0.0
    values = values[_nondominated_mask(values)]
    order = np.argsort(values[:, 0], kind="stable")
    values = values[order]
    area = 0.0
    for i in range(values.shape[0]):
        right = values[i + 1, 0] if i + 1 < values.shape[0] else ref.r1
        area += (right - values[i, 0]) * (ref.r2 - values[i, 1])
    return float(area)


def hypervolume_mc_oracle(solutions: SolutionSet, ref: ReferencePoint, samples: int, seed: int) -> float:
    """Monte-Carlo estimate of the dominated area inside [min-corner, ref]."""
    if samples < 1:
        raise ConfigurationError("samples must be >= 1")
    values = solutions.as_array()
    if values.shape[0] == 0:
        return 0.0
    inside = (values[:, 0] < ref.r1) & (values[:, 1] < ref.r2)
    values = values[inside]
    if values.shape[0] == 0:
        return 0.0
    lo = values.min(axis=0)
    hi = ref.as_array()
    box = float(np.prod(hi - lo))
    rng = np.random.default_rng(seed)
    hits = 0
    remaining = samples
    while remaining > 0:
        chunk = min(remaining, 262_144)
        draws = rng.uniform(lo, hi, size=(chunk, 2))
        dominated = (draws[:, None, :] >= values[None, :, :]).all(axis=2).any(axis=1)
        hits += int(dominated.sum())
        remaining -= chunk
    return box * hits / samples


def sample_preference_uniform(rng: np.random.Generator) -> PreferenceVector:
    """One preference drawn uniformly over the feasible simplex segment."""
    lambda1 = rng.uniform(EPS_LAMBDA, 1.0 - EPS_LAMBDA)
    return PreferenceVector.from_performance_weight(lambda1)


def sweep_grid(count: int) -> list[PreferenceVector]:
    """Evenly spaced preferences with endpoints at the positivity floor."""
    if count < 2:
        raise ConfigurationError("sweep grids need at least 2 preferences")
    grid = np.linspace(EPS_LAMBDA, 1.0 - EPS_LAMBDA, count)
    return [PreferenceVector.from_performance_weight(v) for v in grid]


def threshold_predictions(probs: np.ndarray) -> np.ndarray:
    return (np.asarray(probs) >= PREDICTION_THRESHOLD).astype(np.int64)


def sweep_with_predictor(predict_fn, dataset: TabularDataset, prefs: list[PreferenceVector]) -> SolutionSet:
    """Evaluate (error rate, hard disparity) for each preference in order.

    ``predict_fn(features, pref)`` must return probabilities for the rows.
    """
    points = []
    for pref in prefs:
        probs = predict_fn(dataset.features, pref)
        predictions = threshold_predictions(probs)
        points.append(
            ObjectivePoint(
                error_rate(predictions, dataset.labels),
                dp_disparity_hard(predictions, dataset.sensitive),
                PointKind.EVAL_METRIC,
            )
        )
    return SolutionSet(points, provenance=list(prefs))


def evaluate_sweep(
    cm: CommunicatedModel,
    hn: Hypernetwork,
    dataset: TabularDataset,
    prefs: list[PreferenceVector],
) -> SolutionSet:
    """Preference-to-objective mapping of a trained client model."""
    return sweep_with_predictor(
        lambda features, pref: infer_with_preference(cm, hn, pref, features), dataset, prefs
    )
