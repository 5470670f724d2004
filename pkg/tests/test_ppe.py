import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pertrl.errors import StationarityError
from pertrl.exact import exact_backward
from pertrl.poly import hermite_matrix
from pertrl.ppe import (
    build_ppe_transfer,
    hermite_conjugate,
    ppe_backward,
    ppe_discounted,
    ppe_inputs,
    run_ppe,
    stochastic_closure,
    stochastic_ppe_backward,
)
from pertrl.systems import cubic_benchmark, rollout_nominal


def test_transfer_examples():
    np.testing.assert_allclose(build_ppe_transfer([0.9, 0, 0.1], 3).B, [[0.9, 0, 0.1], [0, 0.81, 0], [0, 0, 0.729]], atol=1e-15)
    a = 0.8
    np.testing.assert_allclose(build_ppe_transfer([a], 4).B, np.diag([a, a**2, a**3, a**4]))
    np.testing.assert_allclose(build_ppe_transfer([1.0, 1.0], 2).B, [[1, 1], [0, 1]])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=5), st.integers(1, 6))
def test_transfer_upper_triangular(F, M):
    B = build_ppe_transfer(F, M).B
    assert np.all(np.tril(B, -1) == 0)


def test_cubic_origin_ladder():
    b = cubic_benchmark()
    zeros = np.zeros(4)
    for M, want in [(3, [0, 18.1, 0]), (6, [0, 18.1, 0, 1.8, 0, 0.1])]:
        lad = run_ppe(b.f, b.cost, b.terminal, zeros, M)
        np.testing.assert_allclose(lad.K_rows[2], want, atol=1e-13)


def test_identity_transfer_keeps_terminal():
    tr = build_ppe_transfer([1.0], 3)
    KT = np.array([1.0, -2.0, 0.5])
    lad = ppe_backward([np.zeros(3)] * 5, KT, [tr] * 5)
    assert all(np.array_equal(k, KT) for k in lad.K_rows)


@pytest.mark.parametrize("x0", [0.0, 0.5])
def test_full_order_matches_exact_taylor(x0):
    b = cubic_benchmark()
    nom = rollout_nominal(b.dynamics, x0)
    lad = run_ppe(b.f, b.cost, b.terminal, nom.states, 54)
    L = exact_backward(b.f, b.cost, b.terminal, 3)
    for t in range(4):
        truth = L[t].taylor(float(nom.states[t]), 54)
        np.testing.assert_allclose(lad.K_rows[t], truth, rtol=1e-9, atol=1e-9 * np.abs(truth).max())
        assert lad.Jbar[t] == pytest.approx(L[t](nom.states[t]), rel=1e-12)


def test_discounted_linear_fixed_point():
    a, q, beta = 0.7, 2.0, 0.8
    lad = ppe_discounted([0.0, q], build_ppe_transfer([a], 2), beta)
    assert lad.K_rows[0][1] == pytest.approx(q / (1 - beta * a * a), rel=1e-10)
    assert lad.transient_index > 0
    assert all(np.allclose(lad.K_rows[t], lad.K_rows[0], atol=1e-8) for t in range(lad.transient_index))


def test_discounted_small_beta():
    C = np.array([0.0, 3.0, 0.0])
    lad = ppe_discounted(C, build_ppe_transfer([0.9, 0, 0.1], 3), 1e-12, T=5)
    np.testing.assert_allclose(lad.K_rows[0], C, atol=1e-10)


def test_discounted_cubic():
    lad = ppe_discounted([0.0, 10.0, 0, 0, 0, 0], build_ppe_transfer([0.9, 0, 0.1], 6), 0.9)
    assert lad.K_rows[0][1] == pytest.approx(10 / (1 - 0.9 * 0.81), rel=1e-8)


def test_discounted_short_horizon_raises():
    with pytest.raises(StationarityError) as ei:
        ppe_discounted([0.0, 10.0], build_ppe_transfer([0.9], 2), 0.99, T=5)
    assert ei.value.residual > 0


def test_discounted_bad_beta():
    with pytest.raises(ValueError, match=r"beta out of \(0,1\)"):
        ppe_discounted([1.0], build_ppe_transfer([0.5], 1), 1.2)


def test_hermite_conjugate_loses_triangularity():
    tr = build_ppe_transfer([0.9, 0, 0.1], 3)
    out = hermite_conjugate(tr, hermite_matrix(3, 1.0))
    assert np.max(np.abs(np.tril(out, -1))) > 1e-6
    ident = (np.eye(4), np.eye(4))
    np.testing.assert_array_equal(hermite_conjugate(tr, ident, strip_constant=True), tr.B)


def test_stochastic_closure_examples():
    a, K1, K2, s, J = 0.7, 1.5, 2.0, 0.3, 4.0
    G = stochastic_closure([a], [K1, K2], J, s, 2).G
    np.testing.assert_allclose(G, [J + K2 * s, K1 * a, K2 * a * a])
    K = [1.0, 2.0, 3.0]
    G = stochastic_closure([a], K, 0.0, 1.0, 3).G
    assert G[1] == pytest.approx(K[0] * a + 3 * K[2] * a)
    G0 = stochastic_closure([0.9, 0, 0.1], [1.0, 2.0, 0.5], 3.0, 0.0, 3).G
    np.testing.assert_array_equal(G0[1:], np.array([1.0, 2.0, 0.5]) @ build_ppe_transfer([0.9, 0, 0.1], 3).B)
    assert G0[0] == 3.0


def test_stochastic_ppe_zero_noise_bit_identical():
    b = cubic_benchmark()
    nom = rollout_nominal(b.dynamics, 0.5)
    inp = ppe_inputs(b.f, b.cost, b.terminal, nom.states, 6)
    det = ppe_backward(inp.C_rows, inp.K_terminal, inp.transfers(), inp.cbar, inp.Jbar_terminal)
    sto = stochastic_ppe_backward(inp.C_rows, inp.K_terminal, inp.F_rows, 0.0, 6, 3, inp.cbar, inp.Jbar_terminal)
    for t in range(4):
        np.testing.assert_array_equal(det.K_rows[t], sto.K_rows[t])
        assert det.Jbar[t] == sto.Jbar[t]


def test_stochastic_lq_matches_riccati():
    a, q, s, T = 0.9, 1.0, 0.04, 6
    lad = stochastic_ppe_backward([[0.0, q]] * T, [0.0, q], [[a]] * T, s, 2, T, [0.0] * T, 0.0)
    P, Jb = [0.0] * (T + 1), [0.0] * (T + 1)
    P[T] = q
    for t in range(T - 1, -1, -1):
        P[t] = q + a * a * P[t + 1]
        Jb[t] = Jb[t + 1] + P[t + 1] * s
    for t in range(T + 1):
        assert lad.K_rows[t][1] == pytest.approx(P[t], rel=1e-14)
        assert lad.Jbar[t] == pytest.approx(Jb[t], rel=1e-14, abs=1e-15)


def test_stochastic_cubic_first_step():
    b = cubic_benchmark()
    inp = ppe_inputs(b.f, b.cost, b.terminal, np.zeros(4), 6)
    lad = stochastic_ppe_backward(inp.C_rows, inp.K_terminal, inp.F_rows, 0.01, 6, 3, inp.cbar, inp.Jbar_terminal)
    assert lad.Jbar[2] - lad.Jbar[3] == pytest.approx(10 * 0.01, rel=1e-14)


def test_ladder_evaluate_and_json():
    b = cubic_benchmark()
    lad = run_ppe(b.f, b.cost, b.terminal, np.zeros(4), 6)
    assert lad.evaluate(2, 0.1) == pytest.approx(exact_backward(b.f, b.cost, b.terminal, 3)[2](0.1), rel=1e-12)
    assert '"order": 6' in lad.to_json()
