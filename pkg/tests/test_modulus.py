import numpy as np
import pytest
from scipy import integrate

from fracflow.kernel import FlowParams
from fracflow.modulus import (SWEEP_CSV_HEADER, ModulusFamily, assumption_checks,
                              combined_constant, default_c, modulus_sweep,
                              negative_branch_integral, positive_branch_integral,
                              random_touching_pair, rearrangement_check, rearrangement_constant,
                              regularization_expression, regularization_time,
                              time_derivative_check)
from fracflow.prng import Xorshift64Star


def reference_omega(t, r, T, c, s, L):
    """Direct transcription of the three-branch modulus with a C^1 quadratic cap."""
    d = (T - t) / T
    r0 = c * d * d
    if r >= 2:
        return d + 1 + L * r
    if r > r0:
        return d + (1 + L) * r - (r / 2) ** (1 + s)
    # match value and slope of the middle branch at r0
    slope = (1 + L) - (1 + s) / 2 * (r0 / 2) ** s
    A = slope / (2 * r0)
    B = (1 + L) * r0 - (r0 / 2) ** (1 + s) - A * r0 * r0
    return d + A * r * r + B


@pytest.mark.parametrize("L", [0.0, 1.0])
def test_values_match_reference_transcription(L):
    P = FlowParams(2, 0.5, L)
    M = ModulusFamily(P, None, 3.0)
    for t in (0.0, 0.7, 2.9):
        for r in (0.0, 1e-4, 0.01, 0.3, 1.0, 1.99, 2.0, 5.0):
            assert M.omega(t, r) == pytest.approx(reference_omega(t, r, 3.0, M.c, 0.5, L),
                                                  rel=1e-12, abs=1e-14)


def test_cap_is_c1_and_terminal_modulus():
    P = FlowParams(2, 0.5, 1.0)
    M = ModulusFamily(P, None, 1.0)
    t = 0.3
    _, _, r0 = M.coefficients(t)
    e = 1e-10
    assert M.omega(t, r0 - e) == pytest.approx(M.omega(t, r0 + e), abs=1e-8)
    # the curvature on each side is O(1/r0), so the slope jump over 2e is O(e/r0)
    assert M.omega_dr(t, r0 - e) == pytest.approx(M.omega_dr(t, r0 + e), abs=1e-7)
    assert M.omega(t, 2 - e) == pytest.approx(M.omega(t, 2 + e), abs=1e-8)
    assert M.omega(1.0, 0.0) == 0.0
    assert M.omega_dr(0.5, [0.0, 2.0], flag=True)[1].tolist() == [False, True]


def test_derivatives_against_finite_differences():
    P = FlowParams(2, 0.5, 0.5)
    M = ModulusFamily(P, None, 2.0)
    r = np.array([0.001, 0.02, 0.5, 1.5, 3.0])
    t, e = 0.8, 1e-6
    fd_r = (M.omega(t, r + e) - M.omega(t, r - e)) / (2 * e)
    np.testing.assert_allclose(M.omega_dr(t, r), fd_r, rtol=1e-6, atol=1e-8)
    fd_t = (M.omega(t + e, r) - M.omega(t - e, r)) / (2 * e)
    np.testing.assert_allclose(M.omega_dt(t, r), fd_t, rtol=1e-5, atol=1e-8)


def test_family_argument_checks():
    P = FlowParams(2, 0.5)
    with pytest.raises(ValueError):
        ModulusFamily(P, 0.5)
    with pytest.raises(ValueError):
        ModulusFamily(P, None, 0.0)
    M = ModulusFamily(P)
    with pytest.raises(ValueError):
        M.omega(1.5, 0.1)
    with pytest.raises(ValueError):
        M.omega_dt(1.0, 0.1)
    with pytest.raises(ValueError):
        M.omega(0.5, -1.0)
    with pytest.raises(ValueError):
        positive_branch_integral(0.1, 2.5, M)
    assert default_c(FlowParams(2, 0.5, 1.0)) == pytest.approx(0.025)


def test_constants():
    assert regularization_expression(FlowParams(2, 0.5, 0.0)) == pytest.approx(8.0)
    assert regularization_expression(FlowParams(2, 0.5, 1.0)) == pytest.approx(2 ** 2.5 * 8.0)
    assert rearrangement_constant(2, 0.3) == 1.0
    for d, s in ((3, 0.5), (4, 0.2)):
        ref = integrate.quad(lambda t: t ** (d - 3) * (1 + t * t) ** (-(d + s) / 2), 0, np.inf)[0]
        assert rearrangement_constant(d, s) == pytest.approx(ref, rel=1e-9)
    P = FlowParams(2, 0.5, 1.0)
    assert combined_constant(P) == pytest.approx(2 * 0.25 / 6 ** 2.5)


def _brute_branches(t, xi, M):
    s, L, T, c = M.params.s, M.params.L, M.T, M.c
    om = lambda r: reference_omega(t, abs(r), T, c, s, L)
    w0, wx = om(0.0), om(xi)
    K = lambda e: (e * e + w0 * w0) ** (-(2 + s) / 2)
    _, _, r0 = M.coefficients(t)
    pts = sorted({abs(b - xi) / 2 for b in (r0, 2.0)} | {w0})
    pos = integrate.quad(lambda e: (om(xi + 2 * e) + om(xi - 2 * e) - 2 * wx) * K(e), 0, xi / 2,
                         points=[p for p in pts if 0 < p < xi / 2] or None,
                         limit=500, epsabs=1e-13, epsrel=1e-11)[0]
    f = lambda e: (om(2 * e + xi) - om(2 * e - xi) - 2 * wx) * K(e)
    pts = sorted({(b - xi) / 2 for b in (r0, 2.0)} | {(b + xi) / 2 for b in (r0, 2.0)})
    neg = integrate.quad(f, xi / 2, 50, points=[p for p in pts if xi / 2 < p < 50] or None,
                         limit=500, epsabs=1e-13, epsrel=1e-11)[0]
    neg += integrate.quad(f, 50, np.inf, epsabs=1e-14, epsrel=1e-11)[0]
    return pos, neg


@pytest.mark.parametrize("t,xi", [(0.0, 0.5), (0.5, 1.0), (0.9, 1.9), (0.99, 0.05)])
def test_branch_integrals_against_brute_quadrature(t, xi):
    M = ModulusFamily(FlowParams(2, 0.5, 0.0), None, 1.0)
    pos, neg = _brute_branches(t, xi, M)
    assert positive_branch_integral(t, xi, M) == pytest.approx(pos, rel=1e-7, abs=1e-10)
    assert negative_branch_integral(t, xi, M) == pytest.approx(neg, rel=1e-7)


def test_small_sweep_certifies_and_serializes():
    res = modulus_sweep(FlowParams(2, 0.5, 0.0), nt=8, nxi=12)
    assert res.all_pass and res.K >= 1
    assert res.pos_max <= res.pos_bound and res.neg_max < 0
    text = res.to_csv().splitlines()
    assert text[0] == ",".join(SWEEP_CSV_HEADER)
    assert len(text) == 1 + 8 * 12
    assert res.summary().startswith(f"K={res.K} kappa=")
    assert res.summary().endswith("all_pass=True")


def test_time_derivative_inequality():
    M = ModulusFamily(FlowParams(2, 0.5, 1.0), None, 5.0)
    ok, margin = time_derivative_check(M, nt=20, nr=40)
    assert ok and margin > 0


def test_calibrated_regularization_time():
    # K = 8 is the smallest power of two certified on the default sweep grid
    assert regularization_time(FlowParams(2, 0.5, 0.0)) == pytest.approx(64.0)
    assert regularization_time(FlowParams(2, 0.5, 0.0), K=1) == pytest.approx(8.0)


@pytest.mark.parametrize("L", [0.0, 1.0])
def test_assumption_checks_hold(L):
    P = FlowParams(2, 0.5, L)
    M = ModulusFamily(P, None, 7.0)
    res = assumption_checks(M)
    assert all(ok for ok, _ in res.values()), res
    assert res["terminal_zero"] == (True, 0.0)


def test_rearrangement_on_random_pairs():
    P = FlowParams(2, 0.5)
    M = ModulusFamily(P, None, 1.0)
    rng = Xorshift64Star(11)
    for _ in range(5):
        t = rng.uniform(0.0, 0.9)
        om = M.at(t)
        B, touch = random_touching_pair(rng, om)
        _, _, r0 = M.coefficients(t)
        lhs, rhs, ok = rearrangement_check(B, om, touch, P, omega_breaks=(r0, 2.0))
        assert ok and lhs >= rhs - 1e-6


def test_rearrangement_rejects_non_touching_pair():
    P = FlowParams(2, 0.5)
    om = ModulusFamily(P).at(0.2)
    B, (xs, ys) = random_touching_pair(Xorshift64Star(2), om)
    with pytest.raises(ValueError):
        rearrangement_check(B, om, (xs + 0.37, ys), P)
    with pytest.raises(ValueError):
        rearrangement_check(B, om, (xs, ys), FlowParams(3, 0.5))
