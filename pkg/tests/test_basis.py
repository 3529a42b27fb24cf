"""Basis systems: Gram oracles, exact reproduction, and round trips."""

import numpy as np
import pytest
from scipy.integrate import quad

from funknock.basis import (CurvePanel, evaluate, make_basis, project_curve,
                            project_panel, read_curves_csv, read_panel_csv,
                            write_curves_csv, write_panel_csv)


def test_hat_gram_closed_form():
    # degree-1 splines without interior knots are the two hat functions
    # 1 - t and t, whose Gram matrix is [[1/3, 1/6], [1/6, 1/3]]
    basis = make_basis("bspline", k_interior=0, degree=1)
    expected = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    assert np.allclose(basis.gram, expected, atol=1e-10)


def test_three_hat_gram_closed_form():
    # one interior knot at 1/2 gives three tents; entries worked out by hand
    basis = make_basis("bspline", k_interior=1, degree=1)
    expected = np.array([[1 / 6, 1 / 12, 0.0],
                         [1 / 12, 1 / 3, 1 / 12],
                         [0.0, 1 / 12, 1 / 6]])
    assert np.allclose(basis.gram, expected, atol=1e-10)


def test_cubic_gram_against_adaptive_quadrature():
    """Compare the Simpson-rule Gram to scipy.integrate.quad per entry."""
    basis = make_basis("bspline", k_interior=3, degree=3)
    k = basis.k_n
    breakpoints = np.r_[0.0, basis.knots, 1.0]

    def prod(i, j):
        f = lambda t: (basis.design_matrix(np.array([t]))[0, i]
                       * basis.design_matrix(np.array([t]))[0, j])
        val, _ = quad(f, 0.0, 1.0, points=breakpoints, limit=200)
        return val

    oracle = np.array([[prod(i, j) for j in range(k)] for i in range(k)])
    assert np.allclose(basis.gram, oracle, atol=1e-8)


def test_partition_of_unity():
    for k_interior, degree in [(0, 1), (3, 3), (5, 2)]:
        basis = make_basis("bspline", k_interior=k_interior, degree=degree)
        t = np.linspace(0.0, 1.0, 73)
        rows = basis.design_matrix(t).sum(axis=1)
        assert np.allclose(rows, 1.0, atol=1e-12)


def test_gram_roots_consistent():
    basis = make_basis("bspline", k_interior=3, degree=3)
    assert np.allclose(basis.gram_sqrt @ basis.gram_sqrt, basis.gram,
                       atol=1e-10)
    # the spline Gram has full rank, so G^{+1/2} inverts G^{1/2}
    assert np.allclose(basis.gram_pinv_sqrt @ basis.gram_sqrt,
                       np.eye(basis.k_n), atol=1e-8)


def test_fourier_orthonormal_by_quadrature():
    basis = make_basis("fourier", k_n=5, domain=(0.0, 2.0))
    assert np.array_equal(basis.gram, np.eye(5))
    for i in range(5):
        for j in range(i, 5):
            f = lambda t: (basis.design_matrix(np.array([t]))[0, i]
                           * basis.design_matrix(np.array([t]))[0, j])
            val, _ = quad(f, 0.0, 2.0, limit=100)
            assert val == pytest.approx(1.0 if i == j else 0.0, abs=1e-9)


def test_cubic_polynomial_reproduced_exactly():
    # every global cubic lies in the span of cubic splines
    basis = make_basis("bspline", k_interior=3, degree=3)
    t = np.linspace(0.0, 1.0, 101)
    poly = lambda x: 2.0 * x ** 3 - x ** 2 + 0.5 * x - 0.25
    coords = project_curve(np.column_stack([t, poly(t)]), basis)
    probe = np.array([0.0, 0.123, 0.5, 0.777, 1.0])
    assert np.allclose(evaluate(coords, basis, probe), poly(probe), atol=1e-8)


def test_project_evaluate_round_trip():
    rng = np.random.default_rng(5)
    basis = make_basis("bspline", k_interior=3, degree=3)
    coords = rng.normal(size=basis.k_n)
    t = np.linspace(0.0, 1.0, 50)
    recovered = project_curve(np.column_stack([t, evaluate(coords, basis, t)]),
                              basis)
    assert np.allclose(recovered, coords, atol=1e-8)


def test_project_panel_matches_per_curve():
    rng = np.random.default_rng(9)
    basis = make_basis("bspline", k_interior=3, degree=3)
    t = np.linspace(0.0, 1.0, 40)
    values = rng.normal(size=(4, 3, 40))
    panel_coords = project_panel(t, values, basis)
    assert panel_coords.shape == (4, 3, basis.k_n)
    single = project_curve(np.column_stack([t, values[2, 1]]), basis)
    assert np.allclose(panel_coords[2, 1], single, atol=1e-10)


def test_evaluate_batches_and_scalars():
    basis = make_basis("fourier", k_n=3)
    coords = np.arange(2 * 3 * 3, dtype=float).reshape(2, 3, 3)
    t = np.linspace(0.0, 1.0, 7)
    out = evaluate(coords, basis, t)
    assert out.shape == (2, 3, 7)
    scalar = evaluate(coords[0, 0], basis, 0.4)
    assert np.ndim(scalar) == 0
    assert scalar == pytest.approx(evaluate(coords[0, 0], basis,
                                            np.array([0.4]))[0])
    with pytest.raises(ValueError):
        evaluate(np.zeros(4), basis, t)


def test_domain_violations_raise():
    basis = make_basis("bspline", k_interior=3, degree=3)
    with pytest.raises(ValueError):
        basis.design_matrix(np.array([-0.5]))
    with pytest.raises(ValueError):
        basis.design_matrix(np.array([1.5]))
    # the right endpoint itself is fine
    assert basis.design_matrix(np.array([1.0])).sum() == pytest.approx(1.0)


def test_make_basis_validation():
    with pytest.raises(ValueError):
        make_basis("wavelet")
    with pytest.raises(ValueError):
        make_basis("bspline", domain=(1.0, 0.0))
    with pytest.raises(ValueError):
        make_basis("fourier")  # k_n required
    with pytest.raises(ValueError):
        make_basis("bspline", k_interior=30, degree=3, quadrature_points=40)


def test_project_curve_validation_and_ridge():
    basis = make_basis("bspline", k_interior=3, degree=3)
    with pytest.raises(ValueError):
        project_curve(np.zeros((5, 3)), basis)
    with pytest.raises(ValueError):
        project_curve(np.zeros((3, 2)), basis)  # fewer points than k_n
    # enough rows but too few distinct times: ridge fallback with a warning
    t = np.repeat(np.linspace(0.0, 1.0, 4), 3)
    vals = np.sin(t)
    with pytest.warns(RuntimeWarning):
        coords = project_curve(np.column_stack([t, vals]), basis)
    assert np.all(np.isfinite(coords))


def test_curves_csv_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    t_grid = np.linspace(0.0, 1.0, 11)
    values = rng.normal(size=(2, 3, 11))
    path = tmp_path / "curves.csv"
    write_curves_csv(path, t_grid, values)
    table = read_curves_csv(path)
    assert set(table) == {(i, j) for i in range(2) for j in range(3)}
    t, v = table[(1, 2)]
    assert np.allclose(t, t_grid)
    assert np.allclose(v, values[1, 2])


def test_panel_csv_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    basis = make_basis("bspline", k_interior=3, degree=3)
    panel = CurvePanel.from_coords(rng.normal(size=(3, 2, basis.k_n)), basis)
    path = tmp_path / "panel.csv"
    write_panel_csv(panel, path)
    loaded = read_panel_csv(path, basis)
    assert np.allclose(loaded.coords, panel.coords)
    assert np.allclose(loaded.means, panel.means)


def test_centered_removes_means():
    rng = np.random.default_rng(8)
    basis = make_basis("fourier", k_n=4)
    panel = CurvePanel.from_coords(rng.normal(size=(20, 3, 4)) + 5.0, basis)
    centered = panel.centered()
    assert np.allclose(centered.mean(axis=0), 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        CurvePanel.from_coords(np.zeros((5, 2, 7)), basis)
