import math

import numpy as np
import pytest

from fracflow.curvature import (CURVATURE_CSV_HEADER, ball_curvature_constant, boundary_faces,
                                curvature_sweep_csv, fractional_mean_curvature,
                                fractional_perimeter, graph_curvature_rhs, sublevel_curvature)
from fracflow.geometry import IndicatorGrid
from fracflow.kernel import FlowParams, QuadratureConfig

# Unit-disc curvature from an independent slicing quadrature: for each
# horizontal offset the vertical kernel integral over the region between the
# tangent line and the disc is taken in closed form, then integrated with an
# algebraic endpoint weight.
BALL_ORACLE = {0.2: 5.124539739356838, 0.5: 3.708149354838582, 0.8: 2.601362276792258}

# Half-plane {z < 0} plus one cell [0,1]x[0,1], evaluated at the top-face
# midpoint, in lattice units: s(1-s) * 4 * int_{1/2}^inf int_0^1 (u^2+t^2)^-(1+s/2).
BUMP_ORACLE = {0.2: 0.9183880413129956, 0.5: 1.3124270064834787, 0.8: 0.8017917243829001}

# Speed of u = 0.3 cos x (s = 0.5) from adaptive quadrature of the flux
# integral over 200 periods plus the mean tail.
GRAPH_ORACLE = {0.0: -0.4981127555984849, math.pi / 4: -0.34840923811254837}

# 2s(1-s) * int_Q int_{Q^c} |x-y|^-2.5 for the unit square (triple quadrature).
SQUARE_PERIMETER = 13.605954148329877
# 2s(1-s) * int_B int_{B^c} |x-y|^-2.5 for the unit disc (polar quadrature).
DISC_PERIMETER = 0.5 * 62.1306387776558


def _halfspace(n, h, periodic=True):
    return IndicatorGrid.from_predicate(lambda x, z: z < 0, n, n, h, (0.0, 0.0), periodic)


@pytest.mark.parametrize("s", [0.2, 0.5, 0.8])
def test_ball_constant_against_slicing_oracle(s):
    assert ball_curvature_constant(FlowParams(2, s)) == pytest.approx(BALL_ORACLE[s], rel=1e-8)


@pytest.mark.parametrize("s", [0.2, 0.5, 0.8])
def test_bump_on_halfplane_against_strip_oracle(s):
    n, h = 64, 1.0 / 32
    E = _halfspace(n, h, periodic=False)
    occ = E.occupancy.copy()
    occ[n // 2, n // 2] = True
    E = IndicatorGrid(occ, h, (0.0, 0.0), False)
    H = fractional_mean_curvature(E, (float(E.x[n // 2]), h), FlowParams(2, s)).value
    # cells beyond the refinement radius use point weights (midpoint error ~1e-5)
    assert H == pytest.approx(BUMP_ORACLE[s] * h ** -s, rel=5e-5)


def test_halfspace_is_flat_and_complement_flips_sign():
    P = FlowParams(2, 0.5)
    E = _halfspace(32, 1.0 / 16)
    assert abs(fractional_mean_curvature(E, (0.03125, 0.0), P).value) < 1e-12
    D = IndicatorGrid.from_predicate(lambda x, z: x * x + z * z < 0.0625, 32, 32, 1 / 32,
                                     (0.0, -math.inf), False)
    X = tuple(boundary_faces(D)[5])
    H = fractional_mean_curvature(D, X, P).value
    assert H > 0
    assert fractional_mean_curvature(D.complement(), X, P).value == pytest.approx(-H, rel=1e-12)


def test_translation_by_whole_cells():
    P = FlowParams(2, 0.5)
    h = 1.0 / 32
    D0 = IndicatorGrid.from_predicate(lambda x, z: x * x + z * z < 0.0625, 40, 40, h,
                                      (0.0, -math.inf), False)
    D1 = IndicatorGrid.from_predicate(lambda x, z: (x - 3 * h) ** 2 + z * z < 0.0625, 40, 40, h,
                                      (0.0, -math.inf), False)
    X = boundary_faces(D0)[7]
    H0 = fractional_mean_curvature(D0, tuple(X), P).value
    H1 = fractional_mean_curvature(D1, (X[0] + 3 * h, X[1]), P).value
    assert H1 == pytest.approx(H0, rel=1e-9)


def test_truncation_radius_converges_to_exact_lattice_sum():
    P = FlowParams(2, 0.5)
    D = IndicatorGrid.from_predicate(lambda x, z: x * x + z * z < 0.0625, 64, 64, 1 / 64,
                                     (0.0, -math.inf), False)
    X = tuple(boundary_faces(D)[32])
    exact = fractional_mean_curvature(D, X, P).value
    far = fractional_mean_curvature(D, X, P, QuadratureConfig(truncation_radius=1.0)).value
    near = fractional_mean_curvature(D, X, P, QuadratureConfig(truncation_radius=0.2)).value
    assert abs(far - exact) < 1e-3 * abs(exact)
    assert abs(near - exact) > abs(far - exact)


def test_quadrature_controls_change_little():
    P = FlowParams(2, 0.5)
    D = IndicatorGrid.from_predicate(lambda x, z: x * x + z * z < 0.0625, 64, 64, 1 / 64,
                                     (0.0, -math.inf), False)
    X = tuple(boundary_faces(D)[32])
    ref = fractional_mean_curvature(D, X, P).value
    two = fractional_mean_curvature(D, X, P, QuadratureConfig(inner_refinement=2)).value
    assert two == pytest.approx(ref, rel=1e-9)
    # a wider pairing radius moves more cells from point weights to exact cell integrals
    wide = fractional_mean_curvature(D, X, P, QuadratureConfig(pv_cutoff=4 / 64)).value
    assert wide == pytest.approx(ref, rel=2e-4)


def test_curvature_rejects_points_off_the_boundary():
    E = _halfspace(16, 1 / 8)
    with pytest.raises(ValueError):
        fractional_mean_curvature(E, (0.0, -0.5), FlowParams(2, 0.5))
    with pytest.raises(ValueError):
        fractional_mean_curvature(E, (0.0625, 0.0), FlowParams(3, 0.5))


def test_sweep_csv_layout():
    E = _halfspace(16, 1 / 8)
    text = curvature_sweep_csv(E, boundary_faces(E)[:3], FlowParams(2, 0.5))
    lines = text.strip().splitlines()
    assert lines[0] == ",".join(CURVATURE_CSV_HEADER)
    assert len(lines) == 4 and all(len(l.split(",")) == 6 for l in lines)


@pytest.mark.parametrize("x0", sorted(GRAPH_ORACLE))
def test_graph_speed_against_flux_quadrature(x0):
    N = 128
    dx = 2 * math.pi / N
    x = np.arange(N) * dx
    v = graph_curvature_rhs(0.3 * np.cos(x), dx, FlowParams(2, 0.5))
    i = int(round(x0 / dx))
    assert v[i] == pytest.approx(GRAPH_ORACLE[x0], rel=2e-4)


def test_graph_speed_vanishes_on_lines():
    P = FlowParams(2, 0.5)
    N = 64
    dx = 0.1
    np.testing.assert_allclose(graph_curvature_rhs(np.zeros(N), dx, P), 0.0, atol=1e-12)
    u = 0.7 * np.arange(N) * dx
    np.testing.assert_allclose(graph_curvature_rhs(u, dx, P, slope=0.7), 0.0, atol=1e-10)


def test_single_cell_perimeter_against_triple_quadrature():
    E = IndicatorGrid(np.ones((1, 1), bool), 1.0, (0.0, -math.inf), False)
    assert fractional_perimeter(E, FlowParams(2, 0.5)) == pytest.approx(SQUARE_PERIMETER, rel=5e-5)
    # cell size enters as h^(2-s)
    E2 = IndicatorGrid(np.ones((1, 1), bool), 0.25, (0.0, -math.inf), False)
    assert fractional_perimeter(E2, FlowParams(2, 0.5)) == pytest.approx(
        SQUARE_PERIMETER * 0.25 ** 1.5, rel=5e-5)


def test_disc_perimeter_staircase_converges():
    P = FlowParams(2, 0.5)
    R = 0.25
    exact = DISC_PERIMETER * R ** 1.5
    errs = []
    for h in (1 / 64, 1 / 128):
        n = int(round(2 * R / h)) + 8
        E = IndicatorGrid.from_predicate(lambda x, z: x * x + z * z < R * R, n, n, h,
                                         (0.0, -math.inf), False)
        errs.append(abs(fractional_perimeter(E, P) / exact - 1))
    assert errs[1] < errs[0] < 0.035


def test_perimeter_invariances_and_errors():
    P = FlowParams(2, 0.5)
    rng = np.random.default_rng(0)
    occ = rng.random((12, 10)) < 0.4
    E = IndicatorGrid(occ, 0.1, (0.0, -math.inf), False)
    padded = IndicatorGrid(np.pad(occ, ((3, 1), (2, 5))), 0.1, (0.0, -math.inf), False)
    assert fractional_perimeter(padded, P) == pytest.approx(fractional_perimeter(E, P), rel=1e-12)
    assert fractional_perimeter(E.reflected(), P) == pytest.approx(fractional_perimeter(E, P),
                                                                   rel=1e-12)
    with pytest.raises(ValueError):
        fractional_perimeter(_halfspace(8, 0.1), P)


def test_sublevel_curvature_of_planar_field_is_zero():
    P = FlowParams(2, 0.5)
    n, h = 32, 1 / 16
    z = (np.arange(n) + 0.5 - 0.5 * n) * h
    U = np.repeat(np.clip(z, -1, 1)[:, None], n, axis=1)
    H = sublevel_curvature(U, h, P, periodic=True, exterior=(1.0, -1.0, 1.0))
    # rows within the refinement radius of the truncated top and bottom see
    # exact near weights on one side and lattice row sums on the other
    assert np.max(np.abs(H[10:n - 10])) < 1e-5


def test_sublevel_curvature_of_distance_field_matches_disc():
    s = 0.5
    P = FlowParams(2, s)
    h, R = 1 / 64, 0.5
    n = int(2 * (R + 0.5) / h)
    c = (np.arange(n) + 0.5 - 0.5 * n) * h
    X, Z = np.meshgrid(c, c)
    U = np.minimum(np.hypot(X, Z) - R, 0.25)
    j, i = int(np.argmin(np.abs(c - R))), n // 2
    act = np.zeros(U.shape, bool)
    act[j, i] = True
    H = sublevel_curvature(U, h, P, periodic=False, exterior=(0.25,) * 3, active=act)
    rho = math.hypot(X[j, i], Z[j, i])
    assert H[j, i] == pytest.approx(BALL_ORACLE[s] * rho ** -s, rel=0.01)
    assert np.count_nonzero(H) == 1


def test_truncated_kernel_periodic_window():
    # a radius below the period must not produce a shape error and keeps a plane flat
    P = FlowParams(2, 0.5)
    n, h = 8, 1 / 16
    nz = 96
    z = (np.arange(nz) + 0.5 - 0.5 * nz) * h
    U = np.repeat(np.clip(z, -1, 1)[:, None], n, axis=1)
    H = sublevel_curvature(U, h, P, periodic=True, kernel_radius=0.5)
    assert H.shape == U.shape
    # clamped rows carry no level information
    assert np.max(np.abs(H[np.abs(z) < 0.75])) < 1e-10


def test_face_at_window_edge_matches_larger_window():
    # the disc touches the window edge; faces there must pair against tail cells
    P = FlowParams(2, 0.5)
    disc = lambda x, z: x * x + z * z < 0.25
    E = IndicatorGrid.from_predicate(disc, 64, 64, 1 / 64, (0.0, -math.inf), False)
    F = IndicatorGrid.from_predicate(disc, 100, 100, 1 / 64, (0.0, -math.inf), False)
    for X in boundary_faces(E)[:3]:
        X = tuple(X)
        assert fractional_mean_curvature(E, X, P).value == pytest.approx(
            fractional_mean_curvature(F, X, P).value, rel=1e-9)
