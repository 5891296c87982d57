"""
Penalty family and objective vectors shared by the classic solvers and the
evolutionary search. A PenaltyModel lists (transform, structural operator,
weight) terms; with weights it defines a regularized objective, without them
the multi-objective vector (residual, penalty_1, ..., penalty_R).
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from exceptions import NumericError, ParameterError, ShapeError
from head_model import LaplacianOperator

DEFAULT_L0_EPSILON = 1e-6
# Residuals below this fraction of ||V||^2 are round-off; they count as exact fits.
EXACT_FIT_RTOL = 1e-20


class Transform(Enum):
    """Scalar transform g applied to |theta_i|."""

    ABS = "abs"
    SQUARE = "square"
    L0 = "l0"


class ModelName(Enum):
    """Penalty models known to the run configuration."""

    L0 = "l0"
    L1 = "l1"
    L2L = "l2L"
    ENETL = "enetL"


@dataclass(frozen=True)
class PenaltyTerm:
    transform: Transform
    operator: Optional[LaplacianOperator] = None  # None -> identity
    weight: Optional[float] = None

    def __post_init__(self):
        if self.weight is not None and self.weight < 0:
            raise ParameterError(f"Penalty weight must be >= 0, got {self.weight}")


@dataclass(frozen=True)
class PenaltyModel:
    terms: tuple[PenaltyTerm, ...]
    l0_epsilon: float = DEFAULT_L0_EPSILON
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise ParameterError("A penalty model needs at least one term")
        if not 0.0 < self.l0_epsilon <= 1e-2:
            raise ParameterError(f"l0_epsilon {self.l0_epsilon} outside (0, 1e-2]")
        weighted = [term.weight is not None for term in self.terms]
        if any(weighted) and not all(weighted):
            raise ParameterError("Either every penalty term has a weight or none")

    @property
    def size(self) -> int:
        return len(self.terms)

    @property
    def regularized(self) -> bool:
        return self.terms[0].weight is not None


@dataclass(frozen=True)
class ObjectiveVector:
    """(f0, f1, ..., fR): squared residual followed by the penalty values."""

    f0: float
    penalties: tuple[float, ...]

    @property
    def values(self) -> np.ndarray:
        return np.array((self.f0, *self.penalties))

    def __len__(self) -> int:
        return 1 + len(self.penalties)

    def __getitem__(self, index: int) -> float:
        return self.f0 if index == 0 else self.penalties[index - 1]


def _check_shapes(K: np.ndarray, V: np.ndarray, J: np.ndarray) -> None:
    if K.ndim != 2 or V.shape != (K.shape[0],) or J.shape != (K.shape[1],):
        raise ShapeError(
            f"Shapes do not agree: K {K.shape}, V {V.shape}, J {J.shape}"
        )


def residual_ss(K: np.ndarray, V: np.ndarray, J: np.ndarray) -> float:
    """||V - KJ||_2^2."""
    _check_shapes(K, V, J)
    residual = V - K @ J
    return float(residual @ residual)


def active_mask(
    values: np.ndarray, l0_epsilon: float = DEFAULT_L0_EPSILON
) -> np.ndarray:
    """Entries counted as nonzero: |x_i| > eps * max|x|."""
    magnitude = np.abs(values)
    peak = magnitude.max(initial=0.0)
    if peak == 0.0:
        return np.zeros(values.shape, dtype=bool)
    return magnitude > l0_epsilon * peak


def penalty(
    J: np.ndarray, term: PenaltyTerm, l0_epsilon: float = DEFAULT_L0_EPSILON
) -> float:
    """p(theta) = sum_i g(|theta_i|) with theta = L J."""
    theta = J if term.operator is None else term.operator.apply(J)
    if term.transform is Transform.ABS:
        return float(np.abs(theta).sum())
    if term.transform is Transform.SQUARE:
        return float(theta @ theta)
    return float(np.count_nonzero(active_mask(theta, l0_epsilon)))


def evaluate(
    K: np.ndarray, V: np.ndarray, J: np.ndarray, model: PenaltyModel
) -> ObjectiveVector:
    """Multi-objective vector; weights are ignored."""
    f0 = residual_ss(K, V, J)
    if np.isfinite(f0) and f0 <= EXACT_FIT_RTOL * float(V @ V):
        f0 = 0.0
    objectives = ObjectiveVector(
        f0=f0,
        penalties=tuple(penalty(J, term, model.l0_epsilon) for term in model.terms),
    )
    if not np.all(np.isfinite(objectives.values)):
        raise NumericError(f"Non-finite objective vector {objectives.values}")
    return objectives


def weighted_objective(
    K: np.ndarray, V: np.ndarray, J: np.ndarray, model: PenaltyModel
) -> float:
    """||V - KJ||^2 + sum_r lambda_r p_r(J) of a regularized model."""
    if not model.regularized:
        raise ParameterError("Weighted objective needs a model with weights")
    objectives = evaluate(K, V, J, model)
    weights = np.array([term.weight for term in model.terms])
    return objectives.f0 + float(weights @ np.array(objectives.penalties))


def penalty_model(
    name: str,
    laplacian: Optional[LaplacianOperator] = None,
    lambdas: Optional[Sequence[float]] = None,
    l0_epsilon: float = DEFAULT_L0_EPSILON,
) -> PenaltyModel:
    """Build one of the named models: l0 | l1 | l2L | enetL."""
    try:
        model_name = ModelName(name)
    except ValueError:
        raise ParameterError(f"Unknown penalty model '{name}'") from None

    if model_name in (ModelName.L2L, ModelName.ENETL) and laplacian is None:
        raise ParameterError(f"Model '{name}' needs the source-space Laplacian")

    specs = {
        ModelName.L0: [(Transform.L0, None)],
        ModelName.L1: [(Transform.ABS, None)],
        ModelName.L2L: [(Transform.SQUARE, laplacian)],
        ModelName.ENETL: [(Transform.ABS, None), (Transform.SQUARE, laplacian)],
    }[model_name]

    if lambdas is not None and len(lambdas) != len(specs):
        raise ParameterError(f"Model '{name}' takes {len(specs)} weights")
    weights = lambdas if lambdas is not None else [None] * len(specs)
    terms = tuple(
        PenaltyTerm(transform=transform, operator=operator, weight=weight)
        for (transform, operator), weight in zip(specs, weights)
    )
    return PenaltyModel(terms=terms, l0_epsilon=l0_epsilon, name=model_name.value)
