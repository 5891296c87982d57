"""
Baseline regularized solvers: Ridge-L in closed form, LASSO and ENET-L by
accelerated proximal gradient (soft thresholding) finished with an exact
support solve, GCV selection of the weight, and the pseudoinverse solution
that seeds the evolutionary search.
"""

import math
from dataclasses import dataclass, replace
from enum import Enum
from multiprocessing.pool import ThreadPool
from typing import Optional, Sequence

import numpy as np
from common_utils import fit_lipschitz, soft_threshold
from exceptions import DegenerateGcvError, ParameterError, ShapeError
from head_model import LaplacianOperator
from moeaar_logger import get_logger
from scipy import linalg, sparse

log = get_logger("moeaar")

PINV_RTOL = 1e-10
RIDGE_JITTER = 1e-12
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 5000
DEFAULT_GRID_POINTS = 30
DEFAULT_GRID_MIN_RATIO = 1e-4
DEFAULT_ENET_MIX = 0.5
POLISH_EVERY = 25
# Optimality tolerance relative to the largest useful weight 2 ||K^T V||_inf.
KKT_RTOL = 1e-10


class ClassicMethod(Enum):
    RIDGE_L = "ridge-l"
    LASSO = "lasso"
    ENET_L = "enet-l"


@dataclass(frozen=True, eq=False)
class RegularizedSolution:
    j: np.ndarray
    lambdas: tuple[float, ...]
    gcv_curve: tuple[tuple[float, float], ...] = ()
    iterations: int = 0
    converged: bool = True
    jittered: bool = False
    dof: float = 0.0


def _check_system(K: np.ndarray, V: np.ndarray) -> None:
    if K.ndim != 2 or V.shape != (K.shape[0],):
        raise ShapeError(f"K {K.shape} and V {V.shape} do not agree")
    if not (np.all(np.isfinite(K)) and np.all(np.isfinite(V))):
        raise ParameterError("K and V must be finite")


def _structure_gram(laplacian: Optional[LaplacianOperator], n: int):
    """L^T L, identity when no structural operator is given."""
    if laplacian is None:
        return sparse.identity(n, format="csr")
    if laplacian.n != n:
        raise ShapeError(f"Operator is {laplacian.n} x {laplacian.n}, need {n}")
    return laplacian.gram


def pseudoinverse_solution(K: np.ndarray, V: np.ndarray) -> np.ndarray:
    """J = K^+ V through the SVD, relative singular-value cutoff 1e-10."""
    _check_system(K, V)
    return linalg.pinv(K, atol=0.0, rtol=PINV_RTOL) @ V


def solve_ridge_l(
    K: np.ndarray,
    V: np.ndarray,
    laplacian: Optional[LaplacianOperator],
    lam: float,
) -> RegularizedSolution:
    """Solve (K^T K + lam L^T L) J = K^T V."""
    _check_system(K, V)
    if lam < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")

    m, n = K.shape
    system = K.T @ K + lam * _structure_gram(laplacian, n).toarray()
    rhs = K.T @ V

    jittered = lam == 0 and m < n
    factor = None
    if not jittered:
        try:
            factor = linalg.cho_factor(system)
        except linalg.LinAlgError:
            jittered = True
    if jittered:
        scale = max(1.0, float(np.mean(np.diag(system))))
        system = system + RIDGE_JITTER * scale * np.eye(n)
        factor = linalg.cho_factor(system)
        log.warning("Ridge-L system singular at lambda=%g; added jitter.", lam)

    j = linalg.cho_solve(factor, rhs)
    dof = float(np.trace(linalg.cho_solve(factor, K.T @ K)))
    return RegularizedSolution(
        j=j, lambdas=(float(lam),), iterations=1, jittered=jittered, dof=dof
    )


def _smooth_gradient(K, V, lam2, gram, j):
    grad = 2.0 * (K.T @ (K @ j - V))
    if lam2:
        grad += 2.0 * lam2 * (gram @ j)
    return grad


def kkt_violation(
    K: np.ndarray,
    V: np.ndarray,
    j: np.ndarray,
    lam1: float,
    lam2: float = 0.0,
    gram=None,
) -> float:
    """
    Largest departure of j from the optimality conditions of
    ||V - KJ||^2 + lam2 J^T G J + lam1 ||J||_1, in gradient units: g_i = -lam1
    sgn(j_i) on the support, |g_i| <= lam1 elsewhere.
    """
    grad = _smooth_gradient(K, V, lam2, gram, j)
    active = j != 0
    on = np.abs(grad[active] + lam1 * np.sign(j[active]))
    off = np.maximum(np.abs(grad[~active]) - lam1, 0.0)
    return float(max(on.max(initial=0.0), off.max(initial=0.0)))


def _polish_support(K, V, lam1, lam2, gram, j, tol) -> Optional[np.ndarray]:
    """
    Exact minimizer when the support and signs of j are the optimal ones;
    None when the stationarity system disagrees with them.
    """
    support = np.flatnonzero(j)
    candidate = np.zeros(K.shape[1])
    if support.size:
        if lam2 == 0 and support.size > K.shape[0]:
            return None
        signs = np.sign(j[support])
        columns = K[:, support]
        system = columns.T @ columns
        if lam2:
            system = system + lam2 * gram[support][:, support].toarray()
        rhs = columns.T @ V - 0.5 * lam1 * signs
        try:
            values = linalg.solve(system, rhs, assume_a="sym")
        except linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(values)) or np.any(np.sign(values) != signs):
            return None
        candidate[support] = values
    if kkt_violation(K, V, candidate, lam1, lam2, gram) > tol:
        return None
    return candidate


def _proximal_gradient(
    K: np.ndarray,
    V: np.ndarray,
    lam1: float,
    lam2: float,
    gram,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, int, bool]:
    """
    Minimize ||V - KJ||^2 + lam2 ||LJ||^2 + lam1 ||J||_1: accelerated proximal
    gradient with adaptive restart and step 1/Lipschitz of the smooth part.
    Every POLISH_EVERY iterations, and on a step below tol, the current
    support is solved exactly and kept if it meets the optimality conditions.
    """
    n = K.shape[1]
    lipschitz = fit_lipschitz(K)
    if lam2:
        # Gershgorin: largest absolute row sum of G.
        lipschitz += 2.0 * lam2 * float(np.max(abs(gram).sum(axis=1)))
    if lipschitz <= 0:
        return np.zeros(n), 0, True
    step = 1.0 / lipschitz
    kkt_tol = KKT_RTOL * max(2.0 * float(np.abs(K.T @ V).max(initial=0.0)), lam1)

    def objective(j):
        residual = V - K @ j
        value = residual @ residual + lam1 * np.abs(j).sum()
        if lam2:
            value += lam2 * float(j @ (gram @ j))
        return value

    j = np.zeros(n)
    momentum, t = j, 1.0
    best, best_value = j, objective(j)
    for iteration in range(1, max_iter + 1):
        grad = _smooth_gradient(K, V, lam2, gram, momentum)
        new = soft_threshold(momentum - step * grad, lam1 * step)
        change = float(np.abs(new - j).max(initial=0.0))
        if float((momentum - new) @ (new - j)) > 0:
            momentum, t = new, 1.0
        else:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            momentum = new + ((t - 1.0) / t_next) * (new - j)
            t = t_next
        j = new
        if change < tol or iteration % POLISH_EVERY == 0:
            polished = _polish_support(K, V, lam1, lam2, gram, j, kkt_tol)
            if polished is not None:
                return polished, iteration, True
        if change < tol:
            return j, iteration, True
        value = objective(j)
        if value <= best_value:
            best, best_value = j, value

    log.warning("Proximal gradient stopped after %d iterations.", max_iter)
    return best, max_iter, False


def solve_lasso(
    K: np.ndarray,
    V: np.ndarray,
    lam: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> RegularizedSolution:
    """Accelerated soft thresholding for min ||V - KJ||^2 + lam ||J||_1."""
    _check_system(K, V)
    if lam < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")
    j, iterations, converged = _proximal_gradient(
        K, V, lam, 0.0, None, tol, max_iter
    )
    return RegularizedSolution(
        j=j,
        lambdas=(float(lam),),
        iterations=iterations,
        converged=converged,
        dof=float(np.count_nonzero(j)),
    )


def solve_enet_l(
    K: np.ndarray,
    V: np.ndarray,
    laplacian: Optional[LaplacianOperator],
    lam1: float,
    lam2: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> RegularizedSolution:
    """min ||V - KJ||^2 + lam1 ||J||_1 + lam2 ||LJ||^2."""
    _check_system(K, V)
    if lam1 < 0 or lam2 < 0:
        raise ParameterError(f"lambdas must be >= 0, got ({lam1}, {lam2})")
    gram = _structure_gram(laplacian, K.shape[1])
    j, iterations, converged = _proximal_gradient(
        K, V, lam1, lam2, gram, tol, max_iter
    )
    return RegularizedSolution(
        j=j,
        lambdas=(float(lam1), float(lam2)),
        iterations=iterations,
        converged=converged,
        dof=float(np.count_nonzero(j)),
    )


def default_lambda_grid(
    K: np.ndarray,
    V: np.ndarray,
    points: int = DEFAULT_GRID_POINTS,
    min_ratio: float = DEFAULT_GRID_MIN_RATIO,
) -> np.ndarray:
    """Log-spaced weights over [min_ratio, 1] * 2 ||K^T V||_inf."""
    scale = 2.0 * float(np.abs(K.T @ V).max(initial=0.0))
    if scale == 0.0:
        raise ParameterError("Data carry no signal; cannot scale the lambda grid")
    return np.logspace(math.log10(min_ratio), 0.0, points) * scale


def solve_at(
    method: ClassicMethod,
    K: np.ndarray,
    V: np.ndarray,
    lam: float,
    laplacian: Optional[LaplacianOperator] = None,
    enet_mix: float = DEFAULT_ENET_MIX,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> RegularizedSolution:
    """Run one classic method at a single grid weight."""
    if method is ClassicMethod.RIDGE_L:
        return solve_ridge_l(K, V, laplacian, lam)
    if method is ClassicMethod.LASSO:
        return solve_lasso(K, V, lam, tol, max_iter)
    return solve_enet_l(
        K, V, laplacian, enet_mix * lam, (1.0 - enet_mix) * lam, tol, max_iter
    )


def gcv_score(K: np.ndarray, V: np.ndarray, solution: RegularizedSolution) -> float:
    """m ||V - K J||^2 / (m - df)^2; +inf when df uses up all m."""
    m = K.shape[0]
    if m - solution.dof <= 0:
        return math.inf
    residual = V - K @ solution.j
    return m * float(residual @ residual) / (m - solution.dof) ** 2


def gcv_select(
    method: ClassicMethod,
    K: np.ndarray,
    V: np.ndarray,
    lambda_grid: Sequence[float],
    laplacian: Optional[LaplacianOperator] = None,
    enet_mix: float = DEFAULT_ENET_MIX,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    workers: Optional[int] = 1,
) -> RegularizedSolution:
    """
    Solve at every grid weight and keep the GCV minimizer; ties go to the
    larger weight.
    """
    grid = [float(lam) for lam in lambda_grid]
    if not grid:
        raise ParameterError("Empty lambda grid")
    if any(lam < 0 for lam in grid):
        raise ParameterError("Grid weights must be >= 0")

    def run(lam):
        solution = solve_at(method, K, V, lam, laplacian, enet_mix, tol, max_iter)
        return lam, solution, gcv_score(K, V, solution)

    if workers == 1:
        results = [run(lam) for lam in grid]
    else:
        with ThreadPool(workers) as pool:
            results = pool.map(run, grid)

    finite = [result for result in results if math.isfinite(result[2])]
    if not finite:
        raise DegenerateGcvError(
            f"Degrees of freedom reach m={K.shape[0]} for every grid weight"
        )
    lam, best, score = min(finite, key=lambda result: (result[2], -result[0]))
    curve = tuple(sorted((lam_, gcv) for lam_, _, gcv in results))
    log.debug("GCV picked lambda=%g (score %g) for %s.", lam, score, method.value)
    return replace(best, gcv_curve=curve)
