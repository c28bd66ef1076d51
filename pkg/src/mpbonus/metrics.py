"""Learning curves, the AUC-100 score and residual-trend summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError


@dataclass(frozen=True)
class LearningCurve:
    """Test scores indexed by epoch (epochs strictly increasing, starting at >= 1)."""

    epochs: tuple
    scores: tuple

    def __post_init__(self):
        epochs = tuple(int(e) for e in self.epochs)
        scores = tuple(float(s) for s in self.scores)
        object.__setattr__(self, "epochs", epochs)
        object.__setattr__(self, "scores", scores)
        if len(epochs) != len(scores):
            raise ValueError("epochs and scores differ in length")
        if epochs and epochs[0] < 1:
            raise ValueError("epochs start at 1")
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("epochs must be strictly increasing")
        if not all(np.isfinite(scores)):
            raise ValueError("scores must be finite")

    @classmethod
    def from_scores(cls, scores):
        return cls(tuple(range(1, len(scores) + 1)), tuple(scores))

    @property
    def is_contiguous(self):
        return all(e == k + 1 for k, e in enumerate(self.epochs))

    def __len__(self):
        return len(self.epochs)


@dataclass(frozen=True)
class Auc100Result:
    raw_area: float
    ref_max: float
    value: float


def trapezoid_area(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def auc100(curve, ref_max):
    """Trapezoid area under the curve divided by ``100 * ref_max``.

    The value exceeds 1 when the curve stays above ``ref_max`` long enough.
    """
    if len(curve) < 2:
        raise InsufficientDataError("AUC-100 needs at least two curve points")
    if not ref_max > 0:
        raise ValueError("ref_max must be positive")
    area = trapezoid_area(curve.epochs, curve.scores)
    return Auc100Result(area, float(ref_max), area / (100.0 * ref_max))


@dataclass(frozen=True)
class ResidualSummary:
    peak_epoch: int
    peak_mean: float
    final_mean: float
    final_over_peak: float


def residual_summary(per_epoch):
    """Locate the epoch with the largest mean normalised residual.

    ``per_epoch`` holds ``(mean_e_bar, cv_e_bar)`` pairs for epochs 1, 2, ...;
    ties resolve to the earliest epoch.
    """
    if not per_epoch:
        raise InsufficientDataError("no residual records")
    means = np.array([m for m, _ in per_epoch], dtype=np.float64)
    k = int(np.argmax(means))
    peak, final = float(means[k]), float(means[-1])
    ratio = final / peak if peak > 0 else float("nan")
    return ResidualSummary(k + 1, peak, final, ratio)


def aggregate_trials(curves):
    """Pointwise mean of curves that share the same epochs."""
    curves = list(curves)
    if not curves:
        raise InsufficientDataError("no curves to aggregate")
    epochs = curves[0].epochs
    for c in curves[1:]:
        if c.epochs != epochs:
            raise ValueError("curves cover different epoch ranges")
    scores = np.mean(np.array([c.scores for c in curves], dtype=np.float64), axis=0)
    return LearningCurve(epochs, tuple(scores))


def coefficient_of_variation(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return float("nan")
    mean = values.mean()
    return float(values.std() / mean) if mean > 0 else 0.0
