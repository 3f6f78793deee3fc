"""Losses, fairness metrics, and the two scalarizers.

Performance is mean binary cross-entropy over predicted probabilities;
fairness is demographic-parity disparity, either the hard thresholded form
used for evaluation or the differentiable relaxation on probabilities used
during training. Both scalarizers (weighted sum and weighted Tchebycheff)
accept taped values, so they can sit at the top of a training graph.

``probs`` arguments may be plain float arrays or autodiff Vars; the hard
metrics take plain binary prediction arrays only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, EvaluationError, IdealPointViolationError, UsageError

# Strict-positivity floor for preference weights: keeps the Tchebycheff
# division bounded. Probabilities are clamped inside log terms.
EPS_LAMBDA = 1e-3
PROB_EPS = 1e-7


@dataclass(frozen=True)
class PreferenceVector:
    """A strictly positive 2-simplex point: (performance weight, fairness weight)."""

    lambda1: float
    lambda2: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.lambda1) and np.isfinite(self.lambda2)):
            raise ConfigurationError("preference weights must be finite")
        if abs(self.lambda1 + self.lambda2 - 1.0) > 1e-12:
            raise ConfigurationError(
                f"preference weights must sum to 1, got {self.lambda1 + self.lambda2}"
            )
        if min(self.lambda1, self.lambda2) < EPS_LAMBDA:
            raise ConfigurationError(f"preference weights must be >= {EPS_LAMBDA}")

    @classmethod
    def from_performance_weight(cls, lambda1: float) -> "PreferenceVector":
        return cls(float(lambda1), 1.0 - float(lambda1))

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda1, self.lambda2])


class PointKind(enum.Enum):
    TRAIN_LOSS = "train_loss"
    EVAL_METRIC = "eval_metric"


@dataclass(frozen=True)
class ObjectivePoint:
    """A (performance, fairness) objective pair.

    Components may be autodiff Vars when the point sits inside a training
    graph; invariants are checked on the current values either way.
    """

    l1: object
    l2: object
    kind: PointKind = PointKind.EVAL_METRIC

    def __post_init__(self) -> None:
        v1, v2 = float(self.l1), float(self.l2)
        if not (np.isfinite(v1) and np.isfinite(v2)):
            raise ConfigurationError("objective components must be finite")
        if v1 < 0.0 or v2 < 0.0:
            raise ConfigurationError("objective components must be non-negative")
        if self.kind is PointKind.EVAL_METRIC and (v1 > 1.0 or v2 > 1.0):
            raise ConfigurationError("evaluation metrics must lie in [0, 1]")

    def as_tuple(self) -> tuple[float, float]:
        return (float(self.l1), float(self.l2))


@dataclass(frozen=True)
class IdealPoint:
    """Componentwise lower bound used to anchor the Tchebycheff scalarizer."""

    z1: float = 0.0
    z2: float = 0.0


IDEAL_ZERO = IdealPoint(0.0, 0.0)


def _check_lengths(a_len: int, b_len: int) -> None:
    if a_len != b_len:
        raise UsageError(f"length mismatch: {a_len} vs {b_len}")


def cross_entropy(probs, labels):
    """Mean negative log-likelihood of binary labels under probs.

    Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] inside the log
    terms so a saturated prediction cannot produce an infinite loss.
    """
    labels = np.asarray(labels, dtype=np.float64)
    values = probs.value if isinstance(probs, ad.Var) else np.asarray(probs, dtype=np.float64)
    if labels.ndim != 1 or values.ndim != 1:
        raise UsageError("cross_entropy expects 1-D probs and labels")
    _check_lengths(values.shape[0], labels.shape[0])
    if labels.shape[0] < 1:
        raise UsageError("cross_entropy needs at least one sample")
    p = ad.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    log_likelihood = labels * ad.log(p) + (1.0 - labels) * ad.log(1.0 - p)
    return ad.neg(ad.reduce_mean(log_likelihood))


def _group_masks(sensitive) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(sensitive)
    if not np.isin(s, (0, 1)).all():
        raise UsageError("sensitive attribute must be binary 0/1")
    mask0 = s == 0
    mask1 = s == 1
    if not mask0.any() or not mask1.any():
        missing = 0 if not mask0.any() else 1
        raise EvaluationError(f"sensitive group {missing} is empty; disparity is undefined")
    return mask0, mask1


def dp_disparity_hard(predictions, sensitive) -> float:
    """Absolute gap in positive-prediction rates between the two groups."""
    preds = np.asarray(predictions)
    if not np.isin(preds, (0, 1)).all():
        raise UsageError("predictions must be binary 0/1")
    mask0, mask1 = _group_masks(sensitive)
    _check_lengths(preds.shape[0], mask0.shape[0])
    return float(abs(preds[mask0].mean() - preds[mask1].mean()))


def dp_disparity_soft(probs, sensitive):
    """Differentiable disparity: gap between group means of probabilities.

    Coincides with :func:`dp_disparity_hard` when probs are saturated at 0/1.
    """
    mask0, mask1 = _group_masks(sensitive)
    values = probs.value if isinstance(probs, ad.Var) else np.asarray(probs, dtype=np.float64)
    _check_lengths(values.shape[0], mask0.shape[0])
    mean0 = ad.div(ad.reduce_sum(ad.mul(probs, mask0.astype(np.float64))), float(mask0.sum()))
    mean1 = ad.div(ad.reduce_sum(ad.mul(probs, mask1.astype(np.float64))), float(mask1.sum()))
    return ad.absolute(ad.sub(mean0, mean1))


def error_rate(predictions, labels) -> float:
    """Fraction of mismatched binary predictions."""
    preds = np.asarray(predictions)
    y = np.asarray(labels)
    _check_lengths(preds.shape[0], y.shape[0])
    return float(np.mean(preds != y))


def weighted_sum(point: ObjectivePoint, pref: PreferenceVector):
    """Linear scalarization: lambda1 * L1 + lambda2 * L2."""
    return ad.add(ad.mul(point.l1, pref.lambda1), ad.mul(point.l2, pref.lambda2))


def scalarizing_direction(pref: PreferenceVector) -> PreferenceVector:
    """Objective-space direction whose Tchebycheff minimizer honors the
    importance weights.

    The Tchebycheff minimizer lies where (L_i - z_i) is proportional to the
    divisor vector, so weighting an objective as MORE important means
    dividing it by a SMALLER number: importance (w1, w2) maps to the
    direction (1/w1, 1/w2), which normalized on the 2-simplex is exactly
    (w2, w1).
    """
    return PreferenceVector(pref.lambda2, pref.lambda1)


def tchebycheff(point: ObjectivePoint, pref: PreferenceVector, ideal: IdealPoint = IDEAL_ZERO):
    """Weighted Tchebycheff scalarization: max_i (L_i - z_i) / lambda_i.

    Returns (value, active_index) where active_index in {1, 2} names the
    maximizing branch; ties break toward index 1, and the gradient flows
    through the active branch only.
    """
    v1, v2 = float(point.l1), float(point.l2)
    if v1 < ideal.z1 or v2 < ideal.z2:
        raise IdealPointViolationError(
            f"objective point ({v1}, {v2}) falls below ideal ({ideal.z1}, {ideal.z2})"
        )
    term1 = ad.div(ad.sub(point.l1, ideal.z1), pref.lambda1)
    term2 = ad.div(ad.sub(point.l2, ideal.z2), pref.lambda2)
    active = 1 if float(term1) >= float(term2) else 2
    return ad.maximum(term1, term2), active
