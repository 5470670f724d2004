import numpy as np
import pytest

from pertrl.errors import DegreeExplosionError, DimensionError
from pertrl.exact import (
    CostToGoLadder,
    build_transfer,
    exact_backward,
    galerkin_recursion,
    monomial_ladder_rows,
    projected_transfer,
)
from pertrl.poly import Polynomial
from pertrl.systems import cubic_benchmark


def test_one_step_ladder():
    b = cubic_benchmark()
    L = exact_backward(b.f, b.cost, b.terminal, 3)
    np.testing.assert_allclose(L[2].coeffs, [0, 0, 18.1, 0, 1.8, 0, 0.1], atol=1e-13)
    assert L.basis_counts == (54, 18, 6, 2)


def test_identity_dynamics_keeps_terminal():
    g = Polynomial([0, 1.0, 2.0])
    L = exact_backward(Polynomial.identity(), Polynomial([0.0]), g, 4)
    assert all(L[t] == g for t in range(5))


def test_degree_guard():
    b = cubic_benchmark()
    with pytest.raises(DegreeExplosionError) as ei:
        exact_backward(b.f, b.cost, b.terminal, 8, degree_limit=1000)
    assert ei.value.degree > 1000


def test_ladder_json_roundtrip():
    b = cubic_benchmark()
    L = exact_backward(b.f, b.cost, b.terminal, 2)
    L2 = CostToGoLadder.from_json(L.to_json())
    assert all(L[t] == L2[t] for t in range(3))


def test_transfer_examples():
    a = 0.7
    np.testing.assert_allclose(build_transfer(Polynomial([0, a]), 2, 2).entries, [[a, 0], [0, a * a]])
    B = build_transfer(Polynomial([0, 0.9, 0, 0.1]), 2, 6).entries
    np.testing.assert_allclose(B[0], [0.9, 0, 0.1, 0, 0, 0])
    np.testing.assert_allclose(B[1], [0, 0.81, 0, 0.18, 0, 0.01], atol=1e-15)


def test_transfer_too_small_names_row():
    with pytest.raises(DimensionError, match="row i=2"):
        build_transfer(Polynomial([0, 0.9, 0, 0.1]), 2, 5)


def test_projected_transfer_equals_exact_when_large_enough():
    f = Polynomial([0, 0.9, 0, 0.1])
    np.testing.assert_allclose(projected_transfer(f, 2, 6, 1.0).entries, build_transfer(f, 2, 6).entries, atol=1e-10)


def test_galerkin_examples():
    b = cubic_benchmark()
    B = build_transfer(b.f, 2, 6)
    out = galerkin_recursion([np.array([0, 10.0])], np.array([0, 10.0]), [B])
    np.testing.assert_allclose(out[0], [0, 18.1, 0, 1.8, 0, 0.1], atol=1e-13)
    I = build_transfer(Polynomial.identity(), 3, 3)
    out = galerkin_recursion([np.zeros(3)] * 4, np.array([1.0, 2.0, 3.0]), [I] * 4)
    assert all(np.array_equal(o, out[-1]) for o in out)
    a = 0.6
    L = build_transfer(Polynomial([0, a]), 2, 2)
    out = galerkin_recursion([np.zeros(2)] * 2, np.array([0, 1.0]), [L, L])
    np.testing.assert_allclose(out[0], [0, a**4])


def test_galerkin_matches_ladder():
    b = cubic_benchmark()
    L = exact_backward(b.f, b.cost, b.terminal, 3)
    c_rows, g_row, transfers, sizes = monomial_ladder_rows(b.f, b.cost, b.terminal, 3)
    assert sizes == [54, 18, 6, 2]
    rows = galerkin_recursion(c_rows, g_row, transfers)
    for t in range(4):
        np.testing.assert_allclose(rows[t], L.row(t), rtol=1e-12, atol=1e-12)
