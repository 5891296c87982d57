"""
Quality indicators of an estimated current density against ground truth.
All scores are normalized to [0, 1] with 1 meaning a perfect match; a zero
estimate scores 0 everywhere.
"""

from dataclasses import asdict, dataclass

import numpy as np
from exceptions import ShapeError, UndefinedTruthError
from head_model import SourceSpace
from simulator import Scenario

HALF_MAX = 0.5


@dataclass(frozen=True)
class MetricsReport:
    localization_score: float
    visibility_score: float
    spatial_resolution_score: float
    raw_distance: float

    def to_json(self) -> dict:
        return asdict(self)


def _check(j_true: np.ndarray, j_est: np.ndarray) -> None:
    if j_true.shape != j_est.shape:
        raise ShapeError(f"Truth has shape {j_true.shape}, estimate {j_est.shape}")
    if not np.any(j_true):
        raise UndefinedTruthError("Ground truth is identically zero")


def localization_error(
    j_true: np.ndarray, j_est: np.ndarray, space: SourceSpace
) -> tuple[float, float]:
    """(d, 1 - d / diameter) between the positions of both peaks."""
    j_true, j_est = np.asarray(j_true, float), np.asarray(j_est, float)
    _check(j_true, j_est)
    if not np.any(j_est):
        return space.diameter, 0.0
    true_peak = space.position(int(np.argmax(np.abs(j_true))))
    est_peak = space.position(int(np.argmax(np.abs(j_est))))
    distance = float(np.linalg.norm(true_peak - est_peak))
    if space.diameter == 0:
        return distance, 1.0
    return distance, float(np.clip(1.0 - distance / space.diameter, 0.0, 1.0))


def visibility(j_true: np.ndarray, j_est: np.ndarray) -> float:
    """Estimated magnitude at the true peak relative to the estimate's peak."""
    j_true, j_est = np.asarray(j_true, float), np.asarray(j_est, float)
    _check(j_true, j_est)
    peak = float(np.abs(j_est).max())
    if peak == 0:
        return 0.0
    return float(abs(j_est[int(np.argmax(np.abs(j_true)))]) / peak)


def half_max_support(values: np.ndarray) -> np.ndarray:
    magnitude = np.abs(values)
    return magnitude >= HALF_MAX * magnitude.max()


def spatial_resolution(j_true: np.ndarray, j_est: np.ndarray) -> float:
    """Jaccard index of the half-maximum supports."""
    j_true, j_est = np.asarray(j_true, float), np.asarray(j_est, float)
    _check(j_true, j_est)
    if not np.any(j_est):
        return 0.0
    truth, estimate = half_max_support(j_true), half_max_support(j_est)
    overlap = np.count_nonzero(truth & estimate)
    return float(overlap / np.count_nonzero(truth | estimate))


def evaluate_all(
    scenario: Scenario, j_est: np.ndarray, space: SourceSpace
) -> MetricsReport:
    j_true = scenario.j_true.values
    distance, score = localization_error(j_true, j_est, space)
    return MetricsReport(
        localization_score=score,
        visibility_score=visibility(j_true, j_est),
        spatial_resolution_score=spatial_resolution(j_true, j_est),
        raw_distance=distance,
    )
