"""
A-posteriori choice of one solution from the known Pareto front: keep the
members supporting the most represented ROI, then take the elbow of a
B-spline through the remaining (f0, f1) points.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from exceptions import NoActiveSolutionError, ParameterError
from moea_core import Individual
from objectives import DEFAULT_L0_EPSILON, active_mask
from scipy.interpolate import make_interp_spline

SPLINE_SAMPLES = 200
# A cubic B-spline needs four distinct points.
SPLINE_MIN_POINTS = 4
FLAT_TOL = 1e-9


@dataclass(frozen=True)
class FrontPoint:
    index: int
    objectives: tuple[float, float]
    roi_hits: frozenset[int]


@dataclass(frozen=True)
class DecisionTrace:
    roi: int
    counts: tuple[int, ...]
    knee: tuple[float, float]
    index: int
    candidates: int

    def to_json(self) -> dict:
        return {
            "roi": self.roi,
            "counts": list(self.counts),
            "knee": {"f0": self.knee[0], "f1": self.knee[1]},
            "index": self.index,
            "candidates": self.candidates,
        }


def roi_hits(
    individual: Individual,
    roi_labels: np.ndarray,
    l0_epsilon: float = DEFAULT_L0_EPSILON,
) -> frozenset[int]:
    """ROIs holding at least one active coefficient of the individual."""
    mask = active_mask(individual.coeffs, l0_epsilon)
    return frozenset(int(roi) for roi in np.unique(roi_labels[mask]))


def front_points(
    front: Sequence[Individual],
    roi_labels: np.ndarray,
    l0_epsilon: float = DEFAULT_L0_EPSILON,
) -> list[FrontPoint]:
    points = []
    for index, member in enumerate(front):
        if not member.evaluated:
            raise ParameterError(f"Front member {index} is not evaluated")
        points.append(
            FrontPoint(
                index=index,
                objectives=(member.objectives[0], member.objectives[1]),
                roi_hits=roi_hits(member, roi_labels, l0_epsilon),
            )
        )
    return points


def cant_rep(points: Sequence[FrontPoint], roi: int) -> int:
    return sum(1 for point in points if roi in point.roi_hits)


def roi_counts(points: Sequence[FrontPoint], n_rois: int) -> tuple[int, ...]:
    return tuple(cant_rep(points, roi) for roi in range(n_rois))


def select_roi(points: Sequence[FrontPoint], n_rois: int) -> int:
    """Most represented ROI, ties to the lowest index."""
    if not points:
        raise ParameterError("Empty front")
    counts = roi_counts(points, n_rois)
    if not any(counts):
        raise NoActiveSolutionError("No front member has an active coefficient")
    return int(np.argmax(counts))


def filter_by_roi(points: Sequence[FrontPoint], roi: int) -> list[FrontPoint]:
    """Members touching roi, by ascending f0."""
    selected = [point for point in points if roi in point.roi_hits]
    if not selected:
        raise NoActiveSolutionError(f"No front member is active in ROI {roi}")
    return sorted(selected, key=lambda point: point.objectives[0])


def _normalize(values: np.ndarray) -> np.ndarray:
    low = values.min(axis=0)
    span = values.max(axis=0) - low
    span[span == 0] = 1.0
    return (values - low) / span


def knee_select(points: Sequence[tuple[float, float]]) -> int:
    """
    Index of the elbow: the input point nearest to the spline sample farthest
    from the chord between the curve endpoints. Ties go to the lower f0.
    With fewer than four distinct points the points themselves stand in for
    the curve samples.
    """
    values = np.asarray(points, dtype=float).reshape(-1, 2)
    count = values.shape[0]
    if count == 0:
        raise ParameterError("knee_select needs at least one point")
    order = np.lexsort((values[:, 1], values[:, 0]))
    if count <= 2:
        return int(order[0])

    normalized = _normalize(values)[order]
    keep = np.ones(count, dtype=bool)
    keep[1:] = np.any(np.diff(normalized, axis=0) != 0, axis=1)
    unique = normalized[keep]
    if unique.shape[0] < 2:
        return int(order[0])

    if unique.shape[0] < SPLINE_MIN_POINTS:
        curve = unique
    else:
        steps = np.linalg.norm(np.diff(unique, axis=0), axis=1)
        parameter = np.concatenate(([0.0], np.cumsum(steps)))
        spline = make_interp_spline(parameter / parameter[-1], unique, k=3)
        curve = spline(np.linspace(0.0, 1.0, SPLINE_SAMPLES))

    start, chord = curve[0], curve[-1] - curve[0]
    length = float(np.linalg.norm(chord))
    offsets = curve - start
    if length == 0.0:
        distances = np.linalg.norm(offsets, axis=1)
    else:
        distances = np.abs(chord[0] * offsets[:, 1] - chord[1] * offsets[:, 0]) / length
    if distances.max() < FLAT_TOL:
        return int(order[0])

    elbow = curve[int(np.argmax(distances))]
    gaps = np.linalg.norm(normalized - elbow, axis=1)
    nearest = int(np.flatnonzero(gaps == gaps.min())[0])  # sorted: lowest f0 first
    return int(order[nearest])


def decide(
    front: Sequence[Individual],
    roi_labels: np.ndarray,
    l0_epsilon: float = DEFAULT_L0_EPSILON,
) -> tuple[Individual, DecisionTrace]:
    """select_roi, filter_by_roi and knee_select over the known front."""
    if not front:
        raise ParameterError("Cannot decide on an empty front")
    n_rois = int(np.max(roi_labels)) + 1
    points = front_points(front, roi_labels, l0_epsilon)
    counts = roi_counts(points, n_rois)

    if len(points) == 1:
        only = points[0]
        hits = sorted(only.roi_hits)
        roi = hits[0] if hits else front[0].roi
        return front[0], DecisionTrace(roi, counts, only.objectives, 0, 1)

    roi = select_roi(points, n_rois)
    candidates = filter_by_roi(points, roi)
    knee = knee_select([point.objectives for point in candidates])
    chosen = candidates[knee]
    trace = DecisionTrace(
        roi=roi,
        counts=counts,
        knee=chosen.objectives,
        index=chosen.index,
        candidates=len(candidates),
    )
    return front[chosen.index], trace
