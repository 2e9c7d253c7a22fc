"""Moment systems, reconstruction weights, and their exactness guarantees."""

import numpy as np
import pytest

from pdpinn.errors import (InvalidArgumentError, SingularMomentMatrixError,
                           UnsupportedOrderError)
from pdpinn.mesh import PointFamily, build_families, build_grid, weight_of
from pdpinn.pddo import (TAGS, apply_operator, assemble_moment_matrix,
                         build_operator_set, check_tag, evaluate_g_weights,
                         load_operator_table, monomial_basis,
                         orthogonality_residual, right_hand_side,
                         save_operator_set, solve_pd_coefficients,
                         worst_orthogonality_residual)

from _oracles import rel_err


def brute_force_moments(family, areas):
    """Oracle: the 6x6 moment matrix from explicit monomial loops."""
    terms = [
        lambda x, y: 1.0,
        lambda x, y: x,
        lambda x, y: y,
        lambda x, y: x * x,
        lambda x, y: y * y,
        lambda x, y: x * y,
    ]
    a = np.zeros((6, 6))
    for j, (x, y) in enumerate(family.xi):
        w = family.weights[j] * areas[j]
        for r in range(6):
            for c in range(6):
                a[r, c] += w * terms[r](x, y) * terms[c](x, y)
    return a


@pytest.fixture(scope="module")
def small_grid():
    cloud = build_grid(21, 21, 1.0, 1.0)
    fams = build_families(cloud)
    return cloud, fams


@pytest.fixture(scope="module")
def opset(small_grid):
    cloud, fams = small_grid
    return build_operator_set(cloud, fams)


def test_moment_matrix_matches_brute_force(small_grid):
    cloud, fams = small_grid
    for idx in (0, 5, 10 * 21 + 10):
        fam = fams[idx]
        areas = cloud.areas[fam.member_indices]
        got = assemble_moment_matrix(fam, areas)
        assert rel_err(got, brute_force_moments(fam, areas)) < 1e-13
        assert np.allclose(got, got.T)


def test_right_hand_side_is_factorial_diagonal():
    b = right_hand_side()
    assert np.array_equal(b, np.diag([1.0, 1.0, 1.0, 2.0, 2.0, 1.0]))
    assert b[3][3] == 2.0


def test_solve_satisfies_moment_system(small_grid):
    cloud, fams = small_grid
    fam = fams[10 * 21 + 10]
    a_mat = assemble_moment_matrix(fam, cloud.areas[fam.member_indices])
    coeffs = solve_pd_coefficients(a_mat)
    assert np.abs(a_mat @ coeffs - right_hand_side()).max() <= 1e-9


def test_orthogonality_residual_small_everywhere(opset):
    assert worst_orthogonality_residual(opset) <= 1e-9


def test_unsolved_rhs_is_not_a_solution():
    # use b's columns as if they were the coefficients: residual is O(1)
    cloud = build_grid(21, 21, 20.0, 20.0)   # unit spacing
    fams = build_families(cloud)
    fam = fams[10 * 21 + 10]
    areas = cloud.areas[fam.member_indices]
    g = evaluate_g_weights(fam, right_hand_side(), areas)
    bad = build_operator_set(cloud, fams)
    bad.g_weights[fam.center_index] = g
    assert orthogonality_residual(bad, fam.center_index) >= 0.5


def test_coefficient_perturbation_is_detected():
    cloud = build_grid(21, 21, 20.0, 20.0)   # unit spacing
    fams = build_families(cloud)
    fam = fams[10 * 21 + 10]
    areas = cloud.areas[fam.member_indices]
    a_mat = assemble_moment_matrix(fam, areas)
    coeffs = solve_pd_coefficients(a_mat) + 1e-3
    opset = build_operator_set(cloud, fams)
    opset.g_weights[fam.center_index] = evaluate_g_weights(fam, coeffs, areas)
    assert orthogonality_residual(opset, fam.center_index) >= 1e-4


def quadratic(points):
    x, y = points[:, 0], points[:, 1]
    return 2.0 + 3.0 * x - 1.5 * y + 0.5 * x * x + 0.25 * y * y - 0.75 * x * y


QUADRATIC_DERIVS = {
    (0, 0): lambda x, y: 2.0 + 3.0 * x - 1.5 * y + 0.5 * x * x + 0.25 * y * y - 0.75 * x * y,
    (1, 0): lambda x, y: 3.0 + x - 0.75 * y,
    (0, 1): lambda x, y: -1.5 + 0.5 * y - 0.75 * x,
    (2, 0): lambda x, y: np.full_like(x, 1.0),
    (0, 2): lambda x, y: np.full_like(x, 0.5),
    (1, 1): lambda x, y: np.full_like(x, -0.75),
}


@pytest.mark.parametrize("tag", TAGS)
def test_exact_on_quadratics_everywhere(opset, tag):
    cloud = opset.cloud
    field = quadratic(cloud.points)
    got = apply_operator(opset, field, tag)
    want = QUADRATIC_DERIVS[tag](cloud.points[:, 0], cloud.points[:, 1])
    assert rel_err(got, want) < 1e-8


def test_reconstruction_error_shrinks_with_spacing():
    errors = []
    for n in (11, 21, 41):
        cloud = build_grid(n, n, 1.0, 1.0)
        opset = build_operator_set(cloud, build_families(cloud))
        field = np.sin(np.pi * cloud.points[:, 0]) * np.sin(np.pi * cloud.points[:, 1])
        worst = 0.0
        for tag in TAGS:
            deriv = apply_operator(opset, field, tag)
            worst = max(worst, _sine_error(cloud, deriv, tag))
        errors.append(worst)
    assert errors[0] > errors[1] > errors[2]


def _sine_error(cloud, got, tag):
    x, y = cloud.points[:, 0], cloud.points[:, 1]
    sx, cx = np.sin(np.pi * x), np.cos(np.pi * x)
    sy, cy = np.sin(np.pi * y), np.cos(np.pi * y)
    exact = {
        (0, 0): sx * sy,
        (1, 0): np.pi * cx * sy,
        (0, 1): np.pi * sx * cy,
        (2, 0): -np.pi ** 2 * sx * sy,
        (0, 2): -np.pi ** 2 * sx * sy,
        (1, 1): np.pi ** 2 * cx * cy,
    }[tag]
    return rel_err(got, exact, floor=1.0)


def test_local_limit_center_weight_approaches_one():
    cloud = build_grid(21, 21, 1.0, 1.0)
    gaps, leakages = [], []
    for factor in (3.5, 2.5, 1.5, 1.0):
        fams = build_families(cloud, delta_factor=factor)
        opset = build_operator_set(cloud, fams)
        k = 10 * 21 + 10
        g00 = opset.g_weights[k][0]
        center_slot = 0   # member 0 is the center
        gaps.append(abs(g00[center_slot] - 1.0))
        leakages.append(np.abs(np.delete(g00, center_slot)).sum())
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert all(a > b for a, b in zip(leakages, leakages[1:]))


def test_singular_family_raises_with_point_and_condition():
    # all members on one line: second-order moments are rank deficient
    xi = np.column_stack([np.linspace(-3.0, 3.0, 7), np.zeros(7)])
    fam = PointFamily(center_index=42,
                      member_indices=np.arange(7, dtype=np.int64),
                      xi=xi, weights=weight_of(xi, 3.5),
                      horizon=3.5,
                      slot_members=np.arange(7, dtype=np.int64))
    a_mat = assemble_moment_matrix(fam, np.ones(7))
    with pytest.raises(SingularMomentMatrixError, match="point 42"):
        solve_pd_coefficients(a_mat, point_index=42)
    with pytest.raises(SingularMomentMatrixError, match="condition"):
        solve_pd_coefficients(a_mat, point_index=42)


def test_scale_invariance_of_pivot_threshold():
    # a tiny but well-conditioned system must still solve
    cloud = build_grid(9, 9, 1.0, 1.0)
    fams = build_families(cloud)
    fam = fams[4 * 9 + 4]
    a_mat = assemble_moment_matrix(fam, cloud.areas[fam.member_indices])
    coeffs = solve_pd_coefficients(a_mat * 1e-30)
    assert np.allclose(a_mat @ (coeffs * 1e-30), right_hand_side(), atol=1e-9)


def test_small_family_rejected_by_assembly():
    xi = np.zeros((3, 2))
    fam = PointFamily(center_index=0, member_indices=np.arange(3),
                      xi=xi, weights=np.ones(3), horizon=1.0,
                      slot_members=np.arange(3))
    with pytest.raises(InvalidArgumentError):
        assemble_moment_matrix(fam, np.ones(3))


def test_unknown_tag_rejected():
    with pytest.raises(UnsupportedOrderError):
        check_tag((3, 0))
    with pytest.raises(UnsupportedOrderError):
        check_tag((2, 1))


def test_apply_operator_validates_field_length(opset):
    with pytest.raises(InvalidArgumentError):
        apply_operator(opset, np.ones(10), (0, 0))


def test_monomial_basis_columns():
    xi = np.array([[2.0, 3.0]])
    assert np.allclose(monomial_basis(xi), [[1.0, 2.0, 3.0, 4.0, 9.0, 6.0]])


def test_operator_table_round_trip(tmp_path, opset):
    path = tmp_path / "operators.txt"
    save_operator_set(opset, path)
    records = load_operator_table(path)
    assert len(records) == len(opset.families) * 6
    point, tag, members, weights = records[6 * 13 + 2]
    fam = opset.families[13]
    assert point == fam.center_index
    assert tag == (0, 1)
    assert np.array_equal(members, fam.member_indices)
    assert np.array_equal(weights, opset.g_weights[13][2])


def test_padded_weights_match_family_tables(opset):
    fam = opset.families[0]
    padded = opset.padded((1, 0))
    present = fam.slot_members >= 0
    assert np.array_equal(padded[0][present], opset.g_weights[0][1])
    assert np.all(padded[0][~present] == 0.0)
