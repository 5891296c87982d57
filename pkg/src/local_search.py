"""
Local Smooth Threshold Search: proximal descent on f(J) = ||V - KJ||^2 with a
Barzilai-Borwein curvature estimate and the threshold operator matching the
penalty (hard for L0, soft for L1, linear-system prox for L2 with the
Laplacian). A backtracking safeguard keeps the composite
F(J) = f(J) + lambda_hat p(J) from increasing. A greedy support path gives
the hard-threshold search one least-squares fit per support size.
"""

from dataclasses import dataclass
from enum import Enum
from multiprocessing.pool import ThreadPool
from typing import Optional, Sequence

import numpy as np
from common_utils import fit_lipschitz, soft_threshold
from exceptions import NumericError, ParameterError, ShapeError, UndefinedLambdaError
from head_model import LaplacianOperator
from moea_core import Individual, Population, PopulationRole
from moeaar_logger import get_logger
from objectives import PenaltyModel, Transform, evaluate, penalty, residual_ss
from scipy import sparse
from scipy.linalg import lstsq
from scipy.sparse.linalg import cg

log = get_logger("moeaar")

BETA_MIN = 1e-8
BETA_MAX = 1e12
CG_RTOL = 1e-10
MAX_BACKTRACKS = 20
DEFAULT_MAX_ITER = 25
DEFAULT_TOL = 1e-8
GREEDY_RTOL = 1e-10


class ThresholdMode(Enum):
    L0 = "l0"
    L1 = "l1"
    L2L = "l2L"

    @classmethod
    def for_model(cls, model: PenaltyModel) -> "ThresholdMode":
        """Mode matching the first term of a penalty model."""
        transform = model.terms[0].transform
        if transform is Transform.L0:
            return cls.L0
        if transform is Transform.ABS:
            return cls.L1
        return cls.L2L


@dataclass
class LstsState:
    j_current: np.ndarray
    grad_current: np.ndarray
    beta: float
    lambda_hat: float
    j_previous: Optional[np.ndarray] = None
    grad_previous: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class LstsOutcome:
    j: np.ndarray
    iterations: int
    skipped: bool
    trace: tuple[float, ...] = ()


def gradient_fit(K: np.ndarray, V: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Gradient of ||V - KJ||^2: 2 K^T (KJ - V)."""
    if V.shape != (K.shape[0],) or J.shape != (K.shape[1],):
        raise ShapeError(f"K {K.shape}, V {V.shape} and J {J.shape} do not agree")
    return 2.0 * (K.T @ (K @ J - V))


def bb_beta(state: LstsState, lipschitz: Optional[float] = None) -> float:
    """
    BB1 curvature s'y / s's, clamped; Lipschitz estimate when there is no
    history yet, previous beta when the iterate did not move.
    """
    if state.j_previous is None or state.grad_previous is None:
        return state.beta if lipschitz is None else float(lipschitz)
    step = state.j_current - state.j_previous
    curvature = state.grad_current - state.grad_previous
    denominator = float(step @ step)
    if denominator == 0.0:
        return state.beta
    return float(np.clip((step @ curvature) / denominator, BETA_MIN, BETA_MAX))


def lambda_hat(K: np.ndarray, V: np.ndarray, J: np.ndarray) -> float:
    """||V - KJ||^2 / ||J||_1, the weight balancing both objectives at J."""
    l1 = float(np.abs(J).sum())
    if l1 == 0.0:
        raise UndefinedLambdaError("Balance weight undefined for J = 0")
    return residual_ss(K, V, J) / l1


def prox_threshold(
    v: np.ndarray,
    a: float,
    mode: ThresholdMode,
    operator=None,
) -> np.ndarray:
    """
    argmin_x 1/2 ||x - v||^2 + a p(x) for the mode's penalty p.
    operator is the structural matrix of the l2L mode (LaplacianOperator or
    any sparse/dense square matrix).
    """
    if a < 0:
        raise ParameterError(f"Threshold must be >= 0, got {a}")
    v = np.asarray(v, dtype=float)
    if mode is ThresholdMode.L1:
        return soft_threshold(v, a)
    if mode is ThresholdMode.L0:
        return np.where(v * v > 2.0 * a, v, 0.0)

    if operator is None:
        raise ParameterError("The l2L threshold needs a structural operator")
    if a == 0.0 or not np.any(v):
        return v.copy()
    matrix = operator.matrix if isinstance(operator, LaplacianOperator) else operator
    matrix = sparse.csr_matrix(matrix)
    system = sparse.identity(v.size, format="csr") + 2.0 * a * (matrix.T @ matrix)
    solution, info = cg(system, v, rtol=CG_RTOL, atol=0.0, maxiter=10 * v.size)
    if info != 0:
        raise NumericError(f"Conjugate gradient did not converge (info={info})")
    return solution


def surrogate(
    K: np.ndarray,
    V: np.ndarray,
    J: np.ndarray,
    weight: float,
    model: PenaltyModel,
) -> float:
    """F(J) = ||V - KJ||^2 + weight p(J), p the model's first penalty."""
    return residual_ss(K, V, J) + weight * penalty(J, model.terms[0], model.l0_epsilon)


def lsts_descend(
    J0: np.ndarray,
    K: np.ndarray,
    V: np.ndarray,
    model: PenaltyModel,
    weight: Optional[float] = None,
    free: Optional[np.ndarray] = None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    lipschitz: Optional[float] = None,
) -> LstsOutcome:
    """
    Safeguarded LSTS from J0. weight is lambda_hat (computed from J0 when not
    given); coordinates outside the free mask stay at their J0 values.
    """
    J0 = np.asarray(J0, dtype=float)
    if weight is None:
        try:
            weight = lambda_hat(K, V, J0)
        except UndefinedLambdaError:
            return LstsOutcome(j=J0.copy(), iterations=0, skipped=True)
    mode = ThresholdMode.for_model(model)
    operator = model.terms[0].operator
    free = np.ones(J0.size, dtype=bool) if free is None else np.asarray(free, bool)
    frozen = ~free
    if lipschitz is None:
        lipschitz = fit_lipschitz(K)

    j = J0.copy()
    state = LstsState(
        j_current=j,
        grad_current=gradient_fit(K, V, j),
        beta=max(lipschitz, BETA_MIN),
        lambda_hat=weight,
    )
    value = surrogate(K, V, j, weight, model)
    trace = [value]
    iterations = 0
    for iterations in range(1, max_iter + 1):  # noqa: B007
        beta = max(bb_beta(state, lipschitz), BETA_MIN)
        accepted = None
        for _ in range(MAX_BACKTRACKS + 1):
            candidate = prox_threshold(
                j - state.grad_current / beta, weight / beta, mode, operator
            )
            candidate[frozen] = J0[frozen]
            candidate_value = surrogate(K, V, candidate, weight, model)
            if candidate_value <= value:
                accepted = candidate
                break
            beta *= 2.0
        if accepted is None:
            break

        change = float(np.abs(accepted - j).max(initial=0.0))
        state.j_previous, state.grad_previous = j, state.grad_current
        state.j_current, state.grad_current = accepted, gradient_fit(K, V, accepted)
        state.beta = beta
        j, value = accepted, candidate_value
        trace.append(value)
        if change < tol:
            break

    return LstsOutcome(j=j, iterations=iterations, skipped=False, trace=tuple(trace))


def greedy_support_path(
    K: np.ndarray,
    V: np.ndarray,
    max_support: int,
    rtol: float = GREEDY_RTOL,
) -> list[np.ndarray]:
    """
    Orthogonal matching pursuit. Entry s of the result is the least-squares fit
    on s + 1 columns, each step adding the column (norm-scaled) best correlated
    with the residual. Stops once ||V - KJ|| <= rtol ||V||.
    """
    if max_support < 0:
        raise ParameterError(f"max_support must be >= 0, got {max_support}")
    if K.ndim != 2 or V.shape != (K.shape[0],):
        raise ShapeError(f"K {K.shape} and V {V.shape} do not agree")
    norms = np.linalg.norm(K, axis=0)
    usable = norms > 0
    scale = np.where(usable, norms, 1.0)
    target = rtol * float(np.linalg.norm(V))

    residual = np.asarray(V, dtype=float)
    support: list[int] = []
    path = []
    for _ in range(min(max_support, K.shape[0], int(usable.sum()))):
        if float(np.linalg.norm(residual)) <= target:
            break
        score = np.abs(K.T @ residual) / scale
        score[~usable] = -1.0
        score[support] = -1.0
        support.append(int(np.argmax(score)))
        coeffs = lstsq(K[:, support], V)[0]
        j = np.zeros(K.shape[1])
        j[support] = coeffs
        residual = V - K @ j
        path.append(j)
    log.debug("Greedy support path of %d fits.", len(path))
    return path


def local_search_population(
    pop_cc: Population,
    K: np.ndarray,
    V: np.ndarray,
    model: PenaltyModel,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    workers: Optional[int] = 1,
    lipschitz: Optional[float] = None,
) -> Population:
    """
    One LSTS descent per member of Pop_CC. lambda_hat comes from the best-fit
    nonzero member; coordinates outside each member's own support stay frozen.
    """
    members: Sequence[Individual] = pop_cc.members
    if any(not member.evaluated for member in members):
        log.debug("Evaluating unevaluated Pop_CC members before local search.")
        for member in members:
            if not member.evaluated:
                member.objectives = evaluate(K, V, member.coeffs, model)

    active = [member for member in members if np.any(member.coeffs)]
    if not active:
        log.warning("Every Pop_CC member is zero; local search skipped this cycle.")
        return Population(
            members=[member.copy() for member in members],
            generation=pop_cc.generation,
            role=PopulationRole.LS,
        )

    best_fit = min(active, key=lambda member: member.objectives.f0)
    weight = lambda_hat(K, V, best_fit.coeffs)
    if lipschitz is None:
        lipschitz = fit_lipschitz(K)

    def refine(member: Individual) -> Individual:
        outcome = lsts_descend(
            member.coeffs,
            K,
            V,
            model,
            weight=weight,
            free=member.coeffs != 0,
            max_iter=max_iter,
            tol=tol,
            lipschitz=lipschitz,
        )
        refined = Individual(coeffs=outcome.j, roi=member.roi, parent=member.parent)
        refined.objectives = evaluate(K, V, refined.coeffs, model)
        return refined

    if workers == 1:
        refined = [refine(member) for member in members]
    else:
        with ThreadPool(workers) as pool:
            refined = pool.map(refine, members)
    return Population(
        members=refined, generation=pop_cc.generation, role=PopulationRole.LS
    )
