import math

import numpy as np
import pytest
from scipy import integrate

from fracflow.kernel import (FlowParams, QuadratureConfig, graph_flux, graph_flux_derivative,
                             half_row_mass, kernel_weight, lambda_nonlinearity, line_tail_integral,
                             pv_sum, radial_tail_integral, row_mass, sphere_measure)


@pytest.mark.parametrize("d,s,L", [(1, 0.5, 0.0), (2, 0.0, 0.0), (2, 1.0, 0.0), (2, 0.5, -0.1),
                                   (2.5, 0.5, 0.0), (2, 0.5, math.inf)])
def test_flow_params_rejects_invalid(d, s, L):
    with pytest.raises(ValueError):
        FlowParams(d, s, L)


def test_flow_params_derived_fields():
    P = FlowParams(3, 0.25, 1.0)
    assert P.exponent == 3.25
    assert P.normalization == pytest.approx(0.25 * 0.75)


def test_quadrature_config_validation():
    with pytest.raises(ValueError):
        QuadratureConfig(inner_refinement=0)
    with pytest.raises(ValueError):
        QuadratureConfig(pv_cutoff=-1.0)
    with pytest.raises(ValueError):
        QuadratureConfig(pv_cutoff=0.5, truncation_radius=0.25)
    assert QuadratureConfig().cutoff(0.1) == pytest.approx(0.2)
    assert QuadratureConfig(pv_cutoff=0.3).cutoff(0.1) == 0.3


def test_kernel_weight_values_and_singularity():
    assert kernel_weight(2.0, 2.5) == pytest.approx(2.0 ** -2.5)
    np.testing.assert_allclose(kernel_weight([1.0, 4.0], 0.5), [1.0, 0.5])
    with pytest.raises(ValueError):
        kernel_weight([1.0, 0.0], 2.5)


def test_sphere_measure_low_dimensions():
    assert sphere_measure(1) == pytest.approx(2.0)
    assert sphere_measure(2) == pytest.approx(2.0 * math.pi)
    assert sphere_measure(3) == pytest.approx(4.0 * math.pi)


@pytest.mark.parametrize("n,s", [(1, 0.3), (2, 0.5), (3, 0.8)])
def test_radial_tail_matches_quadrature(n, s):
    R = 0.7
    ref = sphere_measure(n) * integrate.quad(lambda r: r ** (n - 1) * r ** (-(n + s)), R, np.inf)[0]
    assert radial_tail_integral(R, n, s) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("A,y", [(0.0, 1.0), (0.5, 0.3), (2.0, 0.0), (3.0, 4.0)])
def test_line_tail_matches_quadrature(A, y):
    a = 1.25
    ref = integrate.quad(lambda t: (t * t + y * y) ** (-a), A, np.inf, epsabs=0, epsrel=1e-12)[0]
    assert line_tail_integral(A, y, a) == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("s", [0.2, 0.5, 0.8])
def test_lambda_nonlinearity_matches_definition(s):
    P = FlowParams(2, s)
    for L in (1e-8, 1e-3, 0.5, 1.0, 3.0):
        ref = integrate.quad(lambda z: (1 + z * z) ** (-P.exponent / 2), -L, L,
                             epsabs=0, epsrel=1e-13)[0] / L
        assert lambda_nonlinearity(L, P) == pytest.approx(ref, rel=1e-9)
    assert lambda_nonlinearity(0.0, P) == 2.0
    with pytest.raises(ValueError):
        lambda_nonlinearity(-1.0, P)


def test_graph_flux_is_odd_with_matching_derivative():
    P = FlowParams(2, 0.5)
    q = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(graph_flux(q, P), -graph_flux(-q, P), atol=1e-15)
    step = 1e-6
    fd = (graph_flux(q + step, P) - graph_flux(q - step, P)) / (2 * step)
    np.testing.assert_allclose(fd, graph_flux_derivative(q, P), rtol=1e-7)


@pytest.mark.parametrize("A,y", [(1.0, 0.0), (0.25, 0.5), (0.5, 2.0)])
def test_half_row_mass_against_long_direct_sum(A, y):
    s = 0.5
    a = 1.0 + s / 2
    k = np.arange(2_000_000, dtype=float)
    direct = np.sum(((A + k) ** 2 + y * y) ** (-a))
    # remainder beyond the direct sum by the continuous tail
    direct += line_tail_integral(A + k[-1] + 0.5, y, a)
    assert half_row_mass(A, y, s) == pytest.approx(direct, rel=1e-10)


def test_half_row_mass_unit_offset_is_zeta():
    assert half_row_mass(1.0, 0.0, 0.5) == pytest.approx(1.3414872572509172, rel=1e-11)


def test_row_mass_is_periodic_in_offset():
    assert row_mass(0.7, 0.3, 0.5) == pytest.approx(row_mass(0.7, 1.3, 0.5), rel=1e-14)
    assert row_mass(0.7, 0.3, 0.5) == pytest.approx(row_mass(0.7, 0.7, 0.5), rel=1e-12)


def test_pv_sum_cancels_odd_configuration():
    Z = np.array([[1, 0], [-1, 0], [0, 1], [0, -1], [3, 0]], dtype=float)
    w = np.linalg.norm(Z, axis=1) ** -2.5
    v = np.array([1, -1, 1, -1, 1], dtype=float)
    assert pv_sum(Z, v, w, eps=2.0) == pytest.approx(w[-1])


def test_pv_sum_rejects_asymmetric_inner_set():
    Z = np.array([[1, 0], [0, 1]], dtype=float)
    with pytest.raises(ValueError):
        pv_sum(Z, np.ones(2), np.ones(2), eps=2.0)
