"""Time stepping for graphs and level sets, exact ball solutions and run monitors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numba as nb
import numpy as np
from scipy import ndimage

from .curvature import (NEAR_BOX, _below_fraction, ball_curvature_constant, graph_curvature_rhs,
                        graph_kernel_mass, level_derivatives, sublevel_curvature)
from .geometry import BoundaryPair, IndicatorGrid, Modulus, discrete_lipschitz, extract_boundaries, has_modulus_boundary
from .kernel import FlowParams


class CFLViolation(ValueError):
    """A time step larger than the stability limit was requested."""

    def __init__(self, dt: float, dt_max: float):
        super().__init__(f"dt = {dt:.6g} exceeds the stability limit; use dt <= {dt_max:.6g}")
        self.dt = dt
        self.suggested_dt = dt_max


class MarginError(RuntimeError):
    """The zero level came too close to the edge of the computational window."""


# --------------------------------------------------------------------------
# graphs

@dataclass
class GraphState:
    """A periodic graph ``x_d = u(x)`` sampled at ``x_i = i dx``.

    ``slope`` lets the graph grow linearly across periods,
    ``u(x + period) = u(x) + slope * period``.
    """

    t: float
    u: np.ndarray
    dx: float
    params: FlowParams
    slope: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if self.u.ndim != 1 or self.u.size < 3:
            raise ValueError("u must be a 1-d array with at least 3 samples")
        if not np.all(np.isfinite(self.u)):
            raise ValueError("u must be finite")
        if not self.dx > 0:
            raise ValueError("dx must be positive")
        if self.params.d != 2:
            raise ValueError("graph flow is implemented for d = 2")

    @property
    def period(self) -> float:
        return self.u.size * self.dx

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.u.size) * self.dx

    @property
    def lipschitz(self) -> float:
        """Largest neighbour slope, the period jump included."""
        u = self.u
        du = np.diff(np.append(u, u[0] + self.slope * self.period))
        return float(np.max(np.abs(du)) / self.dx)


# Courant number of the explicit graph scheme, from a stability sweep
GRAPH_CFL = 0.4


def graph_cfl(S: GraphState, cfl: float = GRAPH_CFL) -> float:
    """Largest stable step ``cfl dx^(1+s) / (s(1-s) Lambda_max M sqrt(1+Lip^2))``.

    ``Lambda_max = 2`` is the supremum of the graph nonlinearity and ``M`` the
    diagonal mass of the discrete operator.
    """
    s = S.params.s
    lip = S.lipschitz
    return (cfl * S.dx ** (1.0 + s)
            / (S.params.normalization * 2.0 * graph_kernel_mass(s) * math.sqrt(1.0 + lip * lip)))


def graph_flow_step(S: GraphState, dt: float, cfl: float = GRAPH_CFL) -> GraphState:
    """One forward-Euler step of the graph equation.

    Raises
    ------
    CFLViolation
        If ``dt`` exceeds :func:`graph_cfl`.
    """
    dt_max = graph_cfl(S, cfl)
    if not (0 < dt <= dt_max * (1.0 + 1e-12)):
        raise CFLViolation(dt, dt_max)
    rhs = graph_curvature_rhs(S.u, S.dx, S.params, slope=S.slope)
    return replace(S, t=S.t + dt, u=S.u + dt * rhs)


# --------------------------------------------------------------------------
# level sets

@dataclass
class LevelSetState:
    """A level-set field on a centred window; the evolving set is ``{U < 0}``.

    Parameters
    ----------
    t : float
    U : (nz, nx) array
        Values at cell centres ``((i + 1/2 - nx/2) h, (j + 1/2 - nz/2) h)``.
    h : float
    params : FlowParams
    periodic : bool
        Periodic in ``x``.  Otherwise the field equals ``exterior[2]`` left
        and right of the window.
    exterior : (above, below, side)
        Constant values outside the window.
    kernel_radius : float, optional
        Use the kernel truncated to this radius (a local control flow).
    clamp : float
        ``U`` is kept in ``[-clamp, clamp]``.
    """

    t: float
    U: np.ndarray
    h: float
    params: FlowParams
    periodic: bool = True
    exterior: Tuple[float, float, float] = (1.0, -1.0, 1.0)
    kernel_radius: Optional[float] = None
    clamp: float = 1.0
    ties: int = 0

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float)
        if self.U.ndim != 2:
            raise ValueError("U must be 2-d (nz, nx)")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.params.d != 2:
            raise ValueError("level-set flow is implemented for d = 2")
        self.exterior = tuple(float(v) for v in self.exterior)

    @property
    def nz(self) -> int:
        return self.U.shape[0]

    @property
    def nx(self) -> int:
        return self.U.shape[1]

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5 - 0.5 * self.nx) * self.h

    @property
    def z(self) -> np.ndarray:
        return (np.arange(self.nz) + 0.5 - 0.5 * self.nz) * self.h

    def lipschitz(self) -> float:
        """Largest neighbour difference quotient along the grid axes."""
        U = self.U
        dz = np.abs(np.diff(U, axis=0))
        dx = np.abs(np.diff(U, axis=1))
        m = max(float(dz.max(initial=0.0)), float(dx.max(initial=0.0)))
        if self.periodic:
            m = max(m, float(np.max(np.abs(U[:, 0] - U[:, -1]))))
        return m / self.h

    def sublevel_set(self) -> IndicatorGrid:
        """Cell occupancy of ``{U < 0}`` with the matching tail descriptor."""
        above, below, _ = self.exterior
        if below < 0 and above >= 0:
            # the window is centred, so {x_d < 0} is full below it and empty above
            tail = (0.0, 0.0)
        elif below < 0 and above < 0:
            tail = (0.0, math.inf)
        else:
            tail = (0.0, -math.inf)
        return IndicatorGrid(self.U < 0, self.h, tail, self.periodic)


def clamped_field(distance: np.ndarray, clamp: float = 1.0) -> np.ndarray:
    """``max(-clamp, min(distance, clamp))`` for a signed distance (negative inside)."""
    return np.clip(distance, -clamp, clamp)


def signed_distance_from_mask(inside: np.ndarray, h: float, periodic: bool = True) -> np.ndarray:
    """Signed distance to the boundary of a cell mask, negative inside.

    Distances are measured between cell centres and shifted by half a cell so
    that the zero level sits on the cell faces.
    """
    inside = np.asarray(inside, dtype=bool)
    if periodic:
        pad = inside.shape[1]
        ext = np.concatenate([inside, inside, inside], axis=1)
        d_in = ndimage.distance_transform_edt(ext)[:, pad:2 * pad]
        d_out = ndimage.distance_transform_edt(~ext)[:, pad:2 * pad]
    else:
        d_in = ndimage.distance_transform_edt(inside)
        d_out = ndimage.distance_transform_edt(~inside)
    return h * (np.where(inside, -(d_in - 0.5), d_out - 0.5))


def _padded(U: np.ndarray, periodic: bool, exterior, w: int) -> np.ndarray:
    above, below, side = exterior
    if periodic:
        P = np.concatenate([U[:, -w:], U, U[:, :w]], axis=1)
    else:
        col = np.full((U.shape[0], w), side)
        P = np.concatenate([col, U, col], axis=1)
    return np.concatenate([np.full((w, P.shape[1]), below), P,
                           np.full((w, P.shape[1]), above)], axis=0)


def _weno(v1, v2, v3, v4, v5):
    # fifth-order WENO combination of the three ENO stencils (Jiang-Peng weights);
    # eps scales with the local data so that squeezed levels keep their upwinding
    eps = 1e-6 * np.max(np.square([v1, v2, v3, v4, v5]), axis=0) + 1e-100
    s1 = 13.0 / 12.0 * (v1 - 2 * v2 + v3) ** 2 + 0.25 * (v1 - 4 * v2 + 3 * v3) ** 2
    s2 = 13.0 / 12.0 * (v2 - 2 * v3 + v4) ** 2 + 0.25 * (v2 - v4) ** 2
    s3 = 13.0 / 12.0 * (v3 - 2 * v4 + v5) ** 2 + 0.25 * (3 * v3 - 4 * v4 + v5) ** 2
    a1 = 0.1 / (eps + s1) ** 2
    a2 = 0.6 / (eps + s2) ** 2
    a3 = 0.3 / (eps + s3) ** 2
    tot = a1 + a2 + a3
    return (a1 * (v1 / 3 - 7 * v2 / 6 + 11 * v3 / 6)
            + a2 * (-v2 / 6 + 5 * v3 / 6 + v4 / 3)
            + a3 * (v3 / 3 + 5 * v4 / 6 - v5 / 6)) / tot


def _one_sided(P: np.ndarray, h: float, axis: int, w: int, order: int):
    """Backward and forward derivative approximations along ``axis`` on the interior."""
    D = np.diff(P, axis=axis) / h           # D[k] = (P[k+1] - P[k]) / h
    n = P.shape[axis] - 2 * w

    def sl(a):
        idx = [slice(w, P.shape[0] - w), slice(w, P.shape[1] - w)]
        idx[axis] = slice(a, a + n)
        return D[tuple(idx)]

    # node k (padded index k+w) has backward difference D[k+w-1], forward D[k+w]
    if order == 1:
        return sl(w - 1), sl(w)
    minus = _weno(sl(w - 3), sl(w - 2), sl(w - 1), sl(w), sl(w + 1))
    plus = _weno(sl(w + 2), sl(w + 1), sl(w), sl(w - 1), sl(w - 2))
    # across a kink the reconstruction can flip sign and freeze an extremum;
    # keep the plain one-sided difference there
    m1, p1 = sl(w - 1), sl(w)
    minus = np.where(minus * m1 > 0, minus, m1)
    plus = np.where(plus * p1 > 0, plus, p1)
    return minus, plus


def upwind_gradients(U: np.ndarray, h: float, periodic: bool, exterior,
                     order: int = 5) -> Tuple[np.ndarray, np.ndarray]:
    """Godunov upwind gradient norms for outward and inward motion.

    Parameters
    ----------
    order : {1, 5}
        First-order one-sided differences or fifth-order WENO reconstructions
        of them.

    Returns
    -------
    grad_plus, grad_minus
        With ``U_t = F |grad U|`` the update uses ``grad_minus`` where
        ``F > 0`` and ``grad_plus`` where ``F < 0``.
    """
    if order not in (1, 5):
        raise ValueError("order must be 1 or 5")
    w = 3
    P = _padded(U, periodic, exterior, w)
    dxm, dxp = _one_sided(P, h, 1, w, order)
    dzm, dzp = _one_sided(P, h, 0, w, order)
    gp = np.sqrt(np.maximum(dxm, 0) ** 2 + np.minimum(dxp, 0) ** 2
                 + np.maximum(dzm, 0) ** 2 + np.minimum(dzp, 0) ** 2)
    gm = np.sqrt(np.minimum(dxm, 0) ** 2 + np.maximum(dxp, 0) ** 2
                 + np.minimum(dzm, 0) ** 2 + np.maximum(dzp, 0) ** 2)
    return gp, gm


# Courant number of the explicit level-set scheme, from a stability sweep
LEVELSET_CFL = 0.5


def levelset_rate(s: float) -> float:
    """Stiffness constant ``lambda`` of the level-set operator, ``dt = cfl h^(1+s) / lambda``.

    The excluded box contributes a curvature term acting like diffusion with
    coefficient ``2 s l^(1-s)``, ``l <= (m + 1/2) sqrt(2) h``; the lattice sum
    outside the box is bounded by its kernel mass.
    """
    m = NEAR_BOX + 0.5
    near = 8.0 * s * (m * math.sqrt(2.0)) ** (1.0 - s)
    far = 8.0 * s * (1.0 - s) * m ** (-(1.0 + s)) / (1.0 + s)
    return near + far


def levelset_cfl(S: LevelSetState, cfl: float = LEVELSET_CFL) -> float:
    """Largest stable step ``cfl h^(1+s) / lambda`` for the level-set update.

    The linearised update of ``U`` does not depend on ``|grad U|`` (the level
    spacing cancels), so neither does the limit.
    """
    return cfl * S.h ** (1.0 + S.params.s) / levelset_rate(S.params.s)


def active_nodes(U: np.ndarray, periodic: bool, exterior) -> np.ndarray:
    """Nodes whose value differs from at least one axis neighbour."""
    gp, gm = upwind_gradients(U, 1.0, periodic, exterior)
    return (gp > 0) | (gm > 0)


def _margin_check(S: LevelSetState, margin: int = 4) -> None:
    above, below, side = S.exterior
    neg = S.U < 0
    rows = []
    if above >= 0 and neg[-margin:, :].any():
        rows.append("top")
    if below < 0 and (~neg[:margin, :]).any():
        rows.append("bottom")
    if not S.periodic and side >= 0 and (neg[:, :margin].any() or neg[:, -margin:].any()):
        rows.append("side")
    if rows:
        raise MarginError(f"zero level within {margin} cells of the {', '.join(rows)} edge at "
                          f"t = {S.t:.6g}; enlarge the window")


def levelset_speed(S: LevelSetState) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Speed field ``F = -H_s(X, {U >= U(X)})`` together with the upwind gradient norms."""
    gp, gm = upwind_gradients(S.U, S.h, S.periodic, S.exterior)
    active = (gp > 0) | (gm > 0)
    F = sublevel_curvature(S.U, S.h, S.params, S.periodic, S.exterior, active,
                           kernel_radius=S.kernel_radius)
    return F, gp, gm


def levelset_flow_step(S: LevelSetState, dt: float, cfl: float = LEVELSET_CFL,
                       check_margin: bool = True) -> LevelSetState:
    """One explicit upwind step of ``U_t = -H_s(X, {U >= U(X)}) |grad U|``.

    The curvature of the closed superlevel set is minus that of the open
    sublevel set ``{U < U(X)}``; exact level ties count towards the closed
    superlevel set, and the number of active nodes tied with a flat cell is
    recorded in ``ties``.

    Raises
    ------
    CFLViolation
        If ``dt`` exceeds :func:`levelset_cfl`.
    MarginError
        If the zero level comes within four cells of a truncated edge.
    """
    dt_max = levelset_cfl(S, cfl)
    if not (0 < dt <= dt_max * (1.0 + 1e-12)):
        raise CFLViolation(dt, dt_max)
    F, gp, gm = levelset_speed(S)
    U = S.U + dt * (np.maximum(F, 0.0) * gm + np.minimum(F, 0.0) * gp)
    U = np.clip(U, -S.clamp, S.clamp)
    active = (gp > 0) | (gm > 0)
    flat = ~active
    ties = int(np.count_nonzero(np.isin(S.U[active], S.U[flat]))) if flat.any() else 0
    out = replace(S, t=S.t + dt, U=U, ties=ties)
    if check_margin:
        _margin_check(out)
    return out


def run_levelset(S: LevelSetState, t_end: float, dt: Optional[float] = None,
                 record_every: int = 1, stop: Optional[Callable[[LevelSetState], bool]] = None,
                 cfl: float = LEVELSET_CFL) -> List[LevelSetState]:
    """Advance to ``t_end`` (or until ``stop`` holds) and return the recorded states.

    The first and the last state are always recorded.  ``dt`` defaults to the
    stability limit of the initial state; the last step is shortened to land
    on ``t_end``.
    """
    if dt is None:
        dt = levelset_cfl(S, cfl)
    out = [S]
    k = 0
    while S.t < t_end - 1e-14 * max(1.0, t_end):
        step = min(dt, t_end - S.t)
        S = levelset_flow_step(S, step, cfl)
        k += 1
        done = stop is not None and stop(S)
        if k % record_every == 0 or done:
            out.append(S)
        if done:
            break
    if out[-1] is not S:
        out.append(S)
    return out


@nb.njit(cache=True)
def _area_below(U, A, B, level):
    tot = 0.0
    nz, nx = U.shape
    for j in range(nz):
        for i in range(nx):
            tot += _below_fraction(level - U[j, i], A[j, i], B[j, i])
    return tot


def sublevel_area(S: LevelSetState, level: float = 0.0) -> float:
    """Area of ``{U < level}`` inside the window from the linear cell reconstruction."""
    Ux, Uz, *_ = level_derivatives(S.U, S.h, S.periodic, S.exterior)
    return S.h ** 2 * _area_below(S.U, np.abs(Ux) * S.h, np.abs(Uz) * S.h, float(level))


def zero_level_radius(S: LevelSetState) -> float:
    """Radius of the disc with the area of ``{U < 0}``."""
    return math.sqrt(sublevel_area(S) / math.pi)


def ball_extinction_time(R0: float, params: FlowParams) -> float:
    """Extinction time ``R0^(1+s) / ((1+s) H_s(B_1))`` of a shrinking ball."""
    s = params.s
    return R0 ** (1.0 + s) / ((1.0 + s) * ball_curvature_constant(params))


def ball_exact_radius(t: float, R0: float, params: FlowParams) -> Tuple[float, bool]:
    """Radius of the exactly shrinking ball and an extinction flag.

    ``R(t) = (R0^(1+s) - (1+s) H_s(B_1) t)^(1/(1+s))``; past extinction the
    radius is 0 and the flag is true.
    """
    if not R0 > 0:
        raise ValueError("R0 must be positive")
    if t < 0:
        raise ValueError("t must be non-negative")
    s = params.s
    v = R0 ** (1.0 + s) - (1.0 + s) * ball_curvature_constant(params) * t
    if v <= 0:
        return 0.0, True
    return v ** (1.0 / (1.0 + s)), False


def ball_state(R0: float, n: int, half_width: float, params: FlowParams,
               clamp: float = 1.0) -> LevelSetState:
    """Clamped signed distance to a centred disc on an ``n x n`` non-periodic window."""
    h = 2.0 * half_width / n
    c = (np.arange(n) + 0.5 - 0.5 * n) * h
    X, Z = np.meshgrid(c, c)
    U = clamped_field(np.hypot(X, Z) - R0, clamp)
    return LevelSetState(0.0, U, h, params, periodic=False,
                         exterior=(clamp, clamp, clamp), clamp=clamp)


@dataclass
class BallRun:
    """Measured and exact radii of a shrinking-ball run."""

    times: np.ndarray
    measured: np.ndarray
    exact: np.ndarray
    h: float
    snapshots: List[LevelSetState] = field(repr=False, default_factory=list)

    def relative_errors(self, min_radius: Optional[float] = None) -> np.ndarray:
        if min_radius is None:
            min_radius = 4.0 * self.h
        keep = self.exact >= min_radius
        return np.abs(self.measured[keep] / self.exact[keep] - 1.0)


def ball_shrink_run(params: FlowParams, R0: float = 0.8, n: int = 128, half_width: float = 2.0,
                    record_every: int = 5, cfl: float = LEVELSET_CFL) -> BallRun:
    """Evolve a disc until its exact radius drops below ``4 h``.

    The clamped field reaches its plateau inside the window when
    ``R0 + clamp < half_width``, so the constant exterior is consistent.
    """
    S = ball_state(R0, n, half_width, params)
    # time at which the exact radius reaches 4h
    s = params.s
    r_min = 4.0 * S.h
    t_stop = (R0 ** (1.0 + s) - r_min ** (1.0 + s)) / ((1.0 + s) * ball_curvature_constant(params))
    states = run_levelset(S, t_stop, record_every=record_every, cfl=cfl)
    times = np.array([st.t for st in states])
    meas = np.array([zero_level_radius(st) for st in states])
    exact = np.array([ball_exact_radius(t, R0, params)[0] for t in times])
    return BallRun(times, meas, exact, S.h, states)


def time_holder_ratio(states: Sequence[LevelSetState], s: float, pairs: int = 2000,
                      rng=None, mask_margin: int = 0) -> float:
    """Largest ``|U(t,X) - U(t',X)| / |t - t'|^(1/(1+s))`` over sampled snapshot pairs.

    With ``rng=None`` every pair of snapshots is used, with the maximum over
    all nodes.
    """
    n = len(states)
    if n < 2:
        return 0.0
    if rng is None:
        idx = [(a, b) for a in range(n) for b in range(a + 1, n)]
    else:
        idx = []
        for _ in range(pairs):
            a = int(rng.uniform(0, n))
            b = int(rng.uniform(0, n))
            if a != b:
                idx.append((min(a, b), max(a, b)))
    best = 0.0
    for a, b in idx:
        dt = abs(states[b].t - states[a].t)
        if dt <= 0:
            continue
        dU = np.max(np.abs(states[b].U - states[a].U))
        best = max(best, float(dU) / dt ** (1.0 / (1.0 + s)))
    return best


def time_holder_bound(params: FlowParams) -> float:
    """``[(1+s) H_s(B_1)]^(1/(1+s))``."""
    s = params.s
    return ((1.0 + s) * ball_curvature_constant(params)) ** (1.0 / (1.0 + s))


# --------------------------------------------------------------------------
# two hyperplanes

@dataclass
class MergeResult:
    """Outcome of the two-hyperplane experiment."""

    merge_time: float
    merged: bool
    horizon: float
    steps: int
    final_gap: float
    boundary_height: float
    history: List[Tuple[float, float]] = field(repr=False, default_factory=list)


def two_hyperplane_state(params: FlowParams, h: float, nx: int = 8, half_height: float = 3.0,
                         kernel_radius: Optional[float] = None) -> LevelSetState:
    """Clamped distance field of ``{x_d < -1} u {0 < x_d < 1}`` (negative inside)."""
    nz = int(round(2.0 * half_height / h))
    z = (np.arange(nz) + 0.5 - 0.5 * nz) * h
    # signed distance, piece by piece
    d = np.where(z < -1.0, z + 1.0,
                 np.where(z < 0.0, np.minimum(z + 1.0, -z),
                          np.where(z < 1.0, -np.minimum(z, 1.0 - z), z - 1.0)))
    U = np.repeat(clamped_field(d)[:, None], nx, axis=1)
    return LevelSetState(0.0, U, h, params, periodic=True, exterior=(1.0, -1.0, 1.0),
                         kernel_radius=kernel_radius)


def boundary_gap(S: LevelSetState) -> Tuple[float, BoundaryPair]:
    """``max(ubar - ulow)`` over the columns of ``{U < 0}``."""
    B = extract_boundaries(S.sublevel_set())
    return float(np.max(B.gap())), B


def predicted_merge_scale(params: FlowParams) -> float:
    """Time scale ``1 / (s(1-s))`` of the merge."""
    return 1.0 / params.normalization


def two_hyperplane_experiment(params: FlowParams, h: float, nx: int = 8, half_height: float = 3.0,
                              kernel_radius: Optional[float] = None,
                              horizon: Optional[float] = None,
                              cfl: float = LEVELSET_CFL) -> MergeResult:
    """Run the slab-above-half-space configuration until the gap closes.

    The merge time is the first time at which every column of ``{U < 0}``
    has ``ubar - ulow <= h``.  The run stops at ``horizon`` (by default ten
    times :func:`predicted_merge_scale`) if that never happens.
    """
    S = two_hyperplane_state(params, h, nx, half_height, kernel_radius)
    if horizon is None:
        horizon = 10.0 * predicted_merge_scale(params)
    dt = levelset_cfl(S, cfl)
    history = []
    steps = 0
    gap, B = boundary_gap(S)
    history.append((S.t, gap))
    while S.t < horizon - 1e-12:
        S = levelset_flow_step(S, min(dt, horizon - S.t), cfl)
        steps += 1
        gap, B = boundary_gap(S)
        history.append((S.t, gap))
        if gap <= h + 1e-12:
            return MergeResult(S.t, True, horizon, steps, gap, float(np.mean(B.ubar)), history)
    return MergeResult(math.inf, False, horizon, steps, gap, float(np.mean(B.ubar)), history)


# --------------------------------------------------------------------------
# regularisation monitor

@dataclass
class RegularizationRow:
    t: float
    gap: float
    lipschitz: float
    modulus_pass: bool
    excess: float


@dataclass
class RegularizationReport:
    """Per-record gap, boundary Lipschitz constant and modulus verdict."""

    rows: List[RegularizationRow]
    h: float
    L: float

    @property
    def graphical_time(self) -> float:
        """First recorded time with ``gap <= h`` (``inf`` if never)."""
        for r in self.rows:
            if r.gap <= self.h + 1e-12:
                return r.t
        return math.inf

    def final_verdict(self, slack: Optional[float] = None) -> bool:
        """Graphical and ``(1+L)``-Lipschitz (plus ``slack``) at the last record."""
        if slack is None:
            slack = 3.0 * self.h
        r = self.rows[-1]
        return r.gap <= self.h + 1e-12 and r.lipschitz <= 1.0 + self.L + slack

    def to_csv(self) -> str:
        lines = ["t,gap,lipschitz,modulus_pass"]
        for r in self.rows:
            lines.append(f"{float(r.t)!r},{float(r.gap)!r},{float(r.lipschitz)!r},{'true' if r.modulus_pass else 'false'}")
        return "\n".join(lines) + "\n"


def boundary_lipschitz(B: BoundaryPair) -> float:
    """Discrete Lipschitz constant of the upper boundary samples."""
    return discrete_lipschitz(B.ubar, B.h, B.period is not None)


def regularization_monitor(run: Iterable[LevelSetState], M, R: float = 0.0,
                           slack: Optional[float] = None) -> RegularizationReport:
    """Gap, Lipschitz constant and modulus check for each recorded state.

    The modulus at time ``t`` is ``omega(t / (2 R^(1+s)), .)`` scaled by
    ``R`` (lengths) when ``R > 0``, and the constant ``R`` otherwise.  Times
    past the family's terminal time use the terminal modulus.
    """
    rows = []
    h = None
    L = M.params.L
    s = M.params.s
    for S in run:
        h = S.h
        gap, B = boundary_gap(S)
        lip = boundary_lipschitz(B)
        if R > 0:
            tau = min(S.t / (2.0 * R ** (1.0 + s)), M.T)
            base = M.at(tau)
            omega = Modulus(lambda r, base=base: R * base(np.asarray(r) / R), base.slope)
        else:
            omega = Modulus.affine(0.0, L)
        ok, _, excess = has_modulus_boundary(B, omega, slack)
        rows.append(RegularizationRow(S.t, gap, lip, bool(ok), float(excess)))
    return RegularizationReport(rows, h if h is not None else 0.0, L)


def sandwich_state(params: FlowParams, n: int = 128, half_height: float = 2.0, rng=None,
                   density: float = 0.5, clamp: float = 1.0) -> LevelSetState:
    """Noisy set squeezed between ``{x_d < -1}`` and ``{x_d < 1}`` on a periodic window.

    Cells strictly between the two planes are occupied independently with
    probability ``density``; the window is ``n x n`` with height
    ``2 * half_height`` and the same period.
    """
    h = 2.0 * half_height / n
    z = (np.arange(n) + 0.5 - 0.5 * n) * h
    inside = np.zeros((n, n), dtype=bool)
    inside[z < -1.0, :] = True
    band = np.flatnonzero((z > -1.0) & (z < 1.0))
    for j in band:
        for i in range(n):
            inside[j, i] = rng.uniform(0.0, 1.0) < density
    U = clamped_field(signed_distance_from_mask(inside, h, True), clamp)
    return LevelSetState(0.0, U, h, params, periodic=True, exterior=(clamp, -clamp, clamp),
                         clamp=clamp)


@dataclass
class SandwichResult:
    """Outcome of a regularization run started from sandwiched noise.

    ``t_star`` is the first step time with ``gap <= h``; the boundary there
    is summarized by its neighbour Lipschitz constant and by the largest
    ``ubar(x) - ulow(y) - |x - y|`` over all column pairs (``excess``).
    """

    t_star: float
    steps: int
    lipschitz: float
    excess: float
    h: float
    report: RegularizationReport
    states: List[LevelSetState] = field(repr=False, default_factory=list)

    def lipschitz_ok(self, L: float = 0.0, slack: Optional[float] = None) -> bool:
        """``ubar(x) - ulow(y) <= (1+L)|x-y| + slack`` at ``t_star`` (slack ``3h``)."""
        if slack is None:
            slack = 3.0 * self.h
        return self.excess <= slack


def sandwich_regularization(params: FlowParams, M, rng, n: int = 128, half_height: float = 2.0,
                            record_every: int = 10, max_time: Optional[float] = None,
                            R: float = 2.0, cfl: float = LEVELSET_CFL) -> SandwichResult:
    """Evolve sandwiched noise until every column is a single interval up to ``h``.

    Parameters
    ----------
    M : ModulusFamily
        Family used by the monitor on the recorded states.
    rng
        Source of the noise (``uniform`` method).
    max_time : float, optional
        Give up after this time; defaults to ``M.T * R^(1+s)``.
    """
    S = sandwich_state(params, n, half_height, rng)
    if max_time is None:
        max_time = M.T * R ** (1.0 + params.s)
    dt = levelset_cfl(S, cfl)
    states = [S]
    k = 0
    gap, B = boundary_gap(S)
    while gap > S.h + 1e-12 and S.t < max_time:
        S = levelset_flow_step(S, min(dt, max_time - S.t), cfl)
        k += 1
        gap, B = boundary_gap(S)
        if k % record_every == 0 or gap <= S.h + 1e-12:
            states.append(S)
    if states[-1] is not S:
        states.append(S)
    t_star = S.t if gap <= S.h + 1e-12 else math.inf
    lip = boundary_lipschitz(B)
    _, _, excess = has_modulus_boundary(B, Modulus.affine(0.0, 1.0 + params.L), 0.0)
    report = regularization_monitor(states, M, R)
    return SandwichResult(t_star, k, lip, excess, S.h, report, states)
