import math

import numpy as np
import pytest

from fracflow.flow import (CFLViolation, GraphState, LevelSetState, MarginError, ball_exact_radius,
                           ball_extinction_time, ball_state, boundary_gap, graph_cfl,
                           graph_flow_step, levelset_cfl, levelset_flow_step, levelset_rate,
                           run_levelset, signed_distance_from_mask, sublevel_area,
                           time_holder_bound, time_holder_ratio, two_hyperplane_state,
                           zero_level_radius)
from fracflow.kernel import FlowParams

# unit-disc curvature constant for s = 0.5 (independent slicing quadrature)
BALL_CONSTANT = 3.708149354838582
P = FlowParams(2, 0.5)


def _graph(u, dx=0.1):
    return GraphState(0.0, np.asarray(u, float), dx, P)


def test_graph_step_rejects_large_steps():
    S = _graph(np.cos(np.arange(32) * 0.2))
    dt = graph_cfl(S)
    with pytest.raises(CFLViolation) as err:
        graph_flow_step(S, 1.5 * dt)
    assert err.value.suggested_dt == pytest.approx(dt)
    with pytest.raises(CFLViolation):
        graph_flow_step(S, 0.0)


def test_graph_state_validation():
    with pytest.raises(ValueError):
        GraphState(0.0, np.zeros(2), 0.1, P)
    with pytest.raises(ValueError):
        GraphState(0.0, np.zeros(8), 0.1, FlowParams(3, 0.5))
    S = GraphState(0.0, np.arange(4.0) * 0.1, 0.1, P, slope=1.0)
    assert S.lipschitz == pytest.approx(1.0)


def test_flat_graph_is_stationary_and_cosine_flattens():
    S = _graph(np.full(32, 0.3))
    T = graph_flow_step(S, graph_cfl(S))
    np.testing.assert_allclose(T.u, 0.3, atol=1e-13)
    N = 64
    dx = 2 * math.pi / N
    S = GraphState(0.0, 0.3 * np.cos(np.arange(N) * dx), dx, P)
    osc = [np.ptp(S.u)]
    for _ in range(20):
        S = graph_flow_step(S, graph_cfl(S))
        osc.append(np.ptp(S.u))
    assert all(b < a for a, b in zip(osc, osc[1:]))
    assert S.t > 0


def test_levelset_step_limit():
    S = ball_state(0.5, 32, 1.0, P)
    dt = levelset_cfl(S)
    assert dt == pytest.approx(0.5 * S.h ** 1.5 / levelset_rate(0.5))
    with pytest.raises(CFLViolation):
        levelset_flow_step(S, 2 * dt)


def test_halfspace_level_set_is_stationary():
    n, h = 16, 1 / 16
    z = (np.arange(48) + 0.5 - 24) * h
    U = np.repeat(np.clip(z, -1, 1)[:, None], n, axis=1)
    S = LevelSetState(0.0, U, h, P)
    T = run_levelset(S, 5 * levelset_cfl(S))[-1]
    # the zero level (between the two middle rows) does not move
    np.testing.assert_allclose(T.U[22:26], S.U[22:26], atol=1e-6)


def test_ball_exact_radius_closed_form():
    R0 = 0.8
    t = 0.05
    R, gone = ball_exact_radius(t, R0, P)
    assert not gone
    assert R == pytest.approx((R0 ** 1.5 - 1.5 * BALL_CONSTANT * t) ** (2 / 3), rel=1e-9)
    T = ball_extinction_time(R0, P)
    assert T == pytest.approx(R0 ** 1.5 / (1.5 * BALL_CONSTANT), rel=1e-9)
    assert ball_exact_radius(1.01 * T, R0, P) == (0.0, True)
    with pytest.raises(ValueError):
        ball_exact_radius(-1.0, R0, P)
    with pytest.raises(ValueError):
        ball_exact_radius(0.1, 0.0, P)


def test_short_ball_run_tracks_exact_radius():
    S = ball_state(0.8, 64, 2.0, P)
    assert zero_level_radius(S) == pytest.approx(0.8, rel=2e-3)
    states = run_levelset(S, 0.02, record_every=10)
    R, _ = ball_exact_radius(states[-1].t, 0.8, P)
    assert states[-1].t == pytest.approx(0.02)
    assert zero_level_radius(states[-1]) == pytest.approx(R, rel=0.02)
    assert zero_level_radius(states[-1]) < 0.8


def test_margin_error_near_window_edge():
    S = ball_state(0.9, 32, 1.0, P)
    with pytest.raises(MarginError):
        levelset_flow_step(S, levelset_cfl(S))


def _brute_signed_distance(mask, h):
    nz, nx = mask.shape
    J, I = np.mgrid[0:nz, 0:nx]
    out = np.empty(mask.shape)
    for j in range(nz):
        for i in range(nx):
            other = mask != mask[j, i]
            d = np.min(np.hypot(J[other] - j, I[other] - i))
            out[j, i] = (-(d - 0.5) if mask[j, i] else d - 0.5) * h
    return out


def test_signed_distance_against_brute_force():
    rng = np.random.default_rng(5)
    mask = rng.random((9, 11)) < 0.4
    np.testing.assert_allclose(signed_distance_from_mask(mask, 0.2, periodic=False),
                               _brute_signed_distance(mask, 0.2), atol=1e-12)
    # periodic in x: three tiled copies give the minimum image
    tiled = _brute_signed_distance(np.concatenate([mask] * 3, axis=1), 0.2)[:, 11:22]
    np.testing.assert_allclose(signed_distance_from_mask(mask, 0.2), tiled, atol=1e-12)


def test_two_hyperplane_gap_and_area():
    S = two_hyperplane_state(P, 1 / 16)
    gap, B = boundary_gap(S)
    assert gap == pytest.approx(2.0)
    np.testing.assert_allclose(B.ubar, 1.0)
    np.testing.assert_allclose(B.ulow, -1.0)
    # window area below zero: bottom slab (3 - 1) plus the unit slab, times width
    assert sublevel_area(S) == pytest.approx(3.0 * S.nx * S.h, rel=1e-9)


def test_time_holder_ratio_and_bound():
    assert time_holder_bound(P) == pytest.approx((1.5 * BALL_CONSTANT) ** (2 / 3), rel=1e-9)
    U = np.zeros((4, 4))
    states = [LevelSetState(t, U + 2.0 * t, 0.1, P) for t in (0.0, 0.25, 1.0)]
    # |dU| / dt^(2/3) = 2 dt^(1/3), largest on the widest pair
    assert time_holder_ratio(states, 0.5) == pytest.approx(2.0)
    assert time_holder_ratio(states[:1], 0.5) == 0.0
