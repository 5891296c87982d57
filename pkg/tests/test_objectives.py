import numpy as np
import pytest
from exceptions import NumericError, ParameterError, ShapeError
from objectives import (
    PenaltyModel,
    PenaltyTerm,
    Transform,
    active_mask,
    evaluate,
    penalty,
    penalty_model,
    residual_ss,
    weighted_objective,
)
from simulator import SourceKind, SourceSpec, forward, roi_center, synthesize_current

J_SMALL = np.array([1.0, -2.0, 0.0])


def test_residual_of_exact_solution(rng):
    K = rng.standard_normal((5, 7))
    J = rng.standard_normal(7)
    assert residual_ss(K, K @ J, J) == pytest.approx(0.0, abs=1e-20)


def test_residual_of_zero(rng):
    K = rng.standard_normal((5, 7))
    V = rng.standard_normal(5)
    assert residual_ss(K, V, np.zeros(7)) == pytest.approx(float(V @ V), rel=1e-15)


def test_residual_matches_naive_sum(rng):
    K = rng.standard_normal((6, 4))
    V = rng.standard_normal(6)
    J = rng.standard_normal(4)
    naive = 0.0
    for i in range(6):
        fitted = sum(K[i, k] * J[k] for k in range(4))
        naive += (V[i] - fitted) ** 2
    assert residual_ss(K, V, J) == pytest.approx(naive, abs=1e-12)


def test_residual_shape_mismatch():
    with pytest.raises(ShapeError):
        residual_ss(np.ones((3, 4)), np.ones(3), np.ones(5))


def test_abs_penalty():
    assert penalty(J_SMALL, PenaltyTerm(Transform.ABS)) == 3.0


def test_l0_penalty():
    assert penalty(J_SMALL, PenaltyTerm(Transform.L0)) == 2.0
    assert penalty(np.zeros(4), PenaltyTerm(Transform.L0)) == 0.0


def test_l0_relative_threshold():
    values = np.array([1.0, 1e-9, 5e-7, 2e-6])
    np.testing.assert_array_equal(active_mask(values, 1e-6), [True, False, False, True])


def test_square_laplacian_penalty(rng, path_laplacian):
    J = rng.standard_normal(3)
    dense = path_laplacian.dense()
    theta = [sum(dense[i, k] * J[k] for k in range(3)) for i in range(3)]
    expected = sum(value * value for value in theta)
    term = PenaltyTerm(Transform.SQUARE, operator=path_laplacian)
    assert penalty(J, term) == pytest.approx(expected, rel=1e-12)


def test_lasso_model_at_zero(rng):
    K = rng.standard_normal((4, 6))
    V = rng.standard_normal(4)
    objectives = evaluate(K, V, np.zeros(6), penalty_model("l1"))
    assert objectives.f0 == pytest.approx(float(V @ V))
    assert objectives[1] == 0.0


def test_l0_model_on_punctual_truth(small_space, small_lead_field):
    spec = SourceSpec(
        roi=1,
        center=roi_center(small_space, 1),
        kind=SourceKind.PUNCTUAL,
        amplitude=2.0,
    )
    j_true = synthesize_current(spec, small_space)
    V = forward(small_lead_field, j_true).values
    model = penalty_model("l0")
    objectives = evaluate(small_lead_field.matrix, V, j_true.values, model)
    assert objectives.f0 == pytest.approx(0.0, abs=1e-20)
    assert objectives.penalties == (1.0,)


def test_round_off_residual_counts_as_exact():
    V = np.array([1.0, 2.0, 3.0])
    model = penalty_model("l0")
    near = evaluate(np.eye(3), V, V * (1.0 + 1e-14), model)
    assert near.f0 == 0.0
    assert residual_ss(np.eye(3), V, V * (1.0 + 1e-14)) > 0.0
    off = evaluate(np.eye(3), V, V * (1.0 + 1e-6), model)
    assert off.f0 == pytest.approx(14e-12)


def test_composite_model_length(path_laplacian):
    model = penalty_model("enetL", laplacian=path_laplacian)
    objectives = evaluate(np.eye(3), np.ones(3), J_SMALL, model)
    assert len(objectives) == 3
    assert objectives.values.shape == (3,)


def test_weighted_objective(path_laplacian):
    model = penalty_model("enetL", laplacian=path_laplacian, lambdas=(0.5, 2.0))
    V = np.zeros(3)
    l2 = float(np.sum((path_laplacian.dense() @ J_SMALL) ** 2))
    expected = 5.0 + 0.5 * 3.0 + 2.0 * l2
    assert weighted_objective(np.eye(3), V, J_SMALL, model) == pytest.approx(expected)


def test_weighted_objective_needs_weights():
    with pytest.raises(ParameterError):
        weighted_objective(np.eye(3), np.zeros(3), J_SMALL, penalty_model("l1"))


def test_model_validation(path_laplacian):
    with pytest.raises(ParameterError):
        penalty_model("l2L")
    with pytest.raises(ParameterError):
        penalty_model("ridge")
    with pytest.raises(ParameterError):
        penalty_model("l1", lambdas=(1.0, 2.0))
    with pytest.raises(ParameterError):
        PenaltyModel(
            terms=(PenaltyTerm(Transform.ABS, weight=1.0), PenaltyTerm(Transform.L0))
        )
    with pytest.raises(ParameterError):
        PenaltyTerm(Transform.ABS, weight=-1.0)
    with pytest.raises(ParameterError):
        PenaltyModel(terms=(PenaltyTerm(Transform.L0),), l0_epsilon=0.5)


def test_non_finite_objective():
    with pytest.raises(NumericError):
        evaluate(np.eye(2), np.array([np.inf, 0.0]), np.zeros(2), penalty_model("l1"))
