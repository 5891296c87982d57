import numpy as np
import pytest
from classic_solvers import (
    DEFAULT_MAX_ITER,
    ClassicMethod,
    default_lambda_grid,
    gcv_score,
    gcv_select,
    kkt_violation,
    pseudoinverse_solution,
    solve_enet_l,
    solve_lasso,
    solve_ridge_l,
)
from common_utils import fit_lipschitz, soft_threshold
from exceptions import DegenerateGcvError, ParameterError, ShapeError
from head_model import build_source_space, graph_laplacian
from objectives import penalty_model, weighted_objective

TIGHT = {"tol": 1e-12, "max_iter": 100000}


@pytest.fixture
def wide_system(rng):
    K = rng.standard_normal((8, 20)) / np.sqrt(20)
    V = rng.standard_normal(8)
    return K, V


@pytest.fixture
def tall_system(rng):
    K = rng.standard_normal((20, 8)) / np.sqrt(20)
    V = rng.standard_normal(20)
    return K, V


@pytest.fixture(scope="module")
def grid_laplacian():
    """Laplacian of an 8-point mesh, matching tall_system."""
    return graph_laplacian(build_source_space(n=8, r_cortex=0.8, k=1, seed=0))


@pytest.fixture
def square_system(rng):
    K = 3.0 * np.eye(3) + 0.3 * rng.standard_normal((3, 3))
    V = rng.standard_normal(3)
    return K, V


def test_pinv_orthonormal_rows(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((6, 4)))
    K = Q.T
    V = rng.standard_normal(4)
    np.testing.assert_allclose(pseudoinverse_solution(K, V), K.T @ V, atol=1e-12)


def test_pinv_square_invertible(square_system):
    K, V = square_system
    expected = np.linalg.solve(K, V)
    np.testing.assert_allclose(pseudoinverse_solution(K, V), expected, atol=1e-9)


def test_pinv_moore_penrose(rng):
    K = rng.standard_normal((5, 9))
    K[4] = K[0] + K[1]
    for column in K.T:
        fitted = K @ pseudoinverse_solution(K, column)
        np.testing.assert_allclose(fitted, column, atol=1e-8)


def test_pinv_shape_mismatch():
    with pytest.raises(ShapeError):
        pseudoinverse_solution(np.ones((3, 4)), np.ones(4))


def test_ridge_without_weight(square_system, path_laplacian):
    K, V = square_system
    solution = solve_ridge_l(K, V, path_laplacian, 0.0)
    np.testing.assert_allclose(solution.j, np.linalg.solve(K, V), atol=1e-9)
    assert not solution.jittered


def test_ridge_large_weight_shrinks_roughness(square_system, path_laplacian):
    K, V = square_system
    least_squares = np.linalg.solve(K, V)
    heavy = solve_ridge_l(K, V, path_laplacian, 1e8)
    assert np.linalg.norm(path_laplacian.apply(heavy.j)) <= 1e-3 * np.linalg.norm(
        path_laplacian.apply(least_squares)
    )


def test_ridge_normal_equations(tall_system, grid_laplacian):
    K, V = tall_system
    lam = 0.05
    solution = solve_ridge_l(K, V, grid_laplacian, lam)
    dense = grid_laplacian.dense()
    residual = (K.T @ K + lam * dense.T @ dense) @ solution.j - K.T @ V
    assert np.linalg.norm(residual) < 1e-8


def test_ridge_underdetermined_jitter(wide_system):
    K, V = wide_system
    solution = solve_ridge_l(K, V, None, 0.0)
    assert solution.jittered
    assert np.all(np.isfinite(solution.j))


def test_negative_weight(square_system):
    K, V = square_system
    with pytest.raises(ParameterError):
        solve_ridge_l(K, V, None, -1.0)
    with pytest.raises(ParameterError):
        solve_lasso(K, V, -1.0)


def test_lasso_identity_is_soft_threshold(rng):
    V = rng.standard_normal(10)
    lam = 0.8
    solution = solve_lasso(np.eye(10), V, lam)
    np.testing.assert_allclose(solution.j, soft_threshold(V, lam / 2.0), atol=1e-10)
    assert solution.converged


def test_lasso_without_weight_is_least_squares(tall_system):
    K, V = tall_system
    solution = solve_lasso(K, V, 0.0, **TIGHT)
    pinv_residual = np.sum((V - K @ pseudoinverse_solution(K, V)) ** 2)
    assert np.sum((V - K @ solution.j) ** 2) <= pinv_residual + 1e-6


def test_lasso_kkt(wide_system):
    K, V = wide_system
    lam = 0.2 * 2.0 * np.abs(K.T @ V).max()
    solution = solve_lasso(K, V, lam, **TIGHT)
    assert solution.converged
    correlation = 2.0 * K.T @ (V - K @ solution.j)
    for value, j in zip(correlation, solution.j):
        if j == 0:
            assert abs(value) <= lam + 1e-6
        else:
            assert value == pytest.approx(lam * np.sign(j), abs=1e-6)


@pytest.mark.parametrize("seed", range(100))
def test_lasso_kkt_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    K = rng.standard_normal((8, 20)) / np.sqrt(20)
    V = rng.standard_normal(8)
    lam = rng.uniform(0.05, 0.9) * 2.0 * np.abs(K.T @ V).max()
    solution = solve_lasso(K, V, lam, **TIGHT)
    assert solution.converged
    assert kkt_violation(K, V, solution.j, lam) <= 1e-6


def test_lasso_converges_at_gcv_weight(rng, small_lead_field):
    K = small_lead_field.matrix
    truth = np.zeros(K.shape[1])
    truth[11] = 4.0
    clean = K @ truth
    noise = rng.standard_normal(K.shape[0])
    V = clean + noise * np.linalg.norm(clean) / (3.0 * np.linalg.norm(noise))
    chosen = gcv_select(ClassicMethod.LASSO, K, V, default_lambda_grid(K, V))
    lam = chosen.lambdas[0]
    assert chosen.converged
    assert kkt_violation(K, V, chosen.j, lam) <= 1e-6 * lam
    assert chosen.iterations < DEFAULT_MAX_ITER


def test_exact_lipschitz_constant(rng):
    K = rng.standard_normal((6, 15))
    expected = 2.0 * np.linalg.norm(K, 2) ** 2
    assert fit_lipschitz(K) == pytest.approx(expected, rel=1e-12)
    assert fit_lipschitz(np.zeros((3, 0))) == 0.0


def test_lasso_iteration_cap(wide_system):
    K, V = wide_system
    solution = solve_lasso(K, V, 0.01, tol=0.0, max_iter=3)
    assert not solution.converged
    assert solution.iterations == 3


def test_enet_reduces_to_ridge(tall_system, grid_laplacian):
    K, V = tall_system
    enet = solve_enet_l(K, V, grid_laplacian, 0.0, 0.3, **TIGHT)
    ridge = solve_ridge_l(K, V, grid_laplacian, 0.3)
    np.testing.assert_allclose(enet.j, ridge.j, atol=1e-6)


def test_enet_reduces_to_lasso(wide_system):
    K, V = wide_system
    enet = solve_enet_l(K, V, None, 0.1, 0.0, **TIGHT)
    lasso = solve_lasso(K, V, 0.1, **TIGHT)
    np.testing.assert_allclose(enet.j, lasso.j, atol=1e-6)


def test_enet_beats_its_reductions(tall_system, grid_laplacian):
    K, V = tall_system
    lam1, lam2 = 0.1, 0.2
    model = penalty_model("enetL", laplacian=grid_laplacian, lambdas=(lam1, lam2))
    enet = solve_enet_l(K, V, grid_laplacian, lam1, lam2, **TIGHT)
    best = weighted_objective(K, V, enet.j, model)
    for other in (
        solve_ridge_l(K, V, grid_laplacian, lam2).j,
        solve_lasso(K, V, lam1, **TIGHT).j,
    ):
        assert best <= weighted_objective(K, V, other, model) + 1e-8


def test_lambda_grid(wide_system):
    K, V = wide_system
    grid = default_lambda_grid(K, V, points=5, min_ratio=1e-2)
    top = 2.0 * np.abs(K.T @ V).max()
    assert grid.size == 5
    assert grid[-1] == pytest.approx(top)
    assert grid[0] == pytest.approx(1e-2 * top)
    with pytest.raises(ParameterError):
        default_lambda_grid(K, np.zeros(8))


def test_gcv_single_weight(square_system):
    K, V = square_system
    solution = gcv_select(ClassicMethod.RIDGE_L, K, V, [0.5])
    assert solution.lambdas == (0.5,)
    assert len(solution.gcv_curve) == 1


def test_gcv_matches_brute_force(rng, small_lead_field, small_laplacian):
    K = small_lead_field.matrix
    truth = np.zeros(K.shape[1])
    truth[5] = 3.0
    clean = K @ truth
    V = clean + 0.1 * np.linalg.norm(clean) / np.sqrt(K.shape[0]) * rng.standard_normal(
        K.shape[0]
    )
    grid = default_lambda_grid(K, V, points=8)
    scores = [
        gcv_score(K, V, solve_ridge_l(K, V, small_laplacian, lam)) for lam in grid
    ]
    chosen = gcv_select(
        ClassicMethod.RIDGE_L, K, V, grid, laplacian=small_laplacian, workers=2
    )
    assert chosen.lambdas[0] == pytest.approx(grid[int(np.argmin(scores))])


def test_gcv_tie_prefers_larger_weight(square_system):
    K, _ = square_system
    solution = gcv_select(ClassicMethod.RIDGE_L, K, np.zeros(3), [0.1, 1.0])
    assert solution.lambdas == (1.0,)


def test_gcv_empty_grid(square_system):
    K, V = square_system
    with pytest.raises(ParameterError):
        gcv_select(ClassicMethod.LASSO, K, V, [])


def test_gcv_degenerate(rng):
    K = rng.standard_normal((4, 8))
    V = rng.standard_normal(4)
    with pytest.raises(DegenerateGcvError):
        gcv_select(ClassicMethod.LASSO, K, V, [0.0], max_iter=50)
