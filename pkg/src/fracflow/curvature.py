"""Fractional mean curvature and fractional perimeter of discrete sets.

Sign convention: the curvature is positive on convex sets, so that the
normal velocity ``-H_s`` shrinks balls.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence, Tuple

import numba as nb
import numpy as np
from scipy import fft as sp_fft
from scipy import integrate, special

from .geometry import IndicatorGrid
from .kernel import (FlowParams, QuadratureConfig, graph_flux, graph_flux_derivative,
                     line_tail_integral, pv_sum, radial_tail_integral, sphere_measure)
from .kernel import half_row_mass, kernel_table, row_mass, rows_mass

CURVATURE_CSV_HEADER = ("x", "x_d", "H_s", "s", "d", "h")


@dataclass(frozen=True)
class CurvatureSample:
    """A curvature value at a boundary point with the quadrature used."""

    point: Tuple[float, float]
    value: float
    quadrature: QuadratureConfig


@lru_cache(maxsize=None)
def _ball_constant(d: int, s: float) -> float:
    # Rays from a boundary point leave the unit ball at distance 2 cos(alpha),
    # alpha measured from the inward normal.  Comparing with the tangent
    # half-space leaves only the region beyond the exit point, whose radial
    # integral is (2 cos alpha)^(-s) / s.
    # in the angle b = pi/2 - alpha the singular factor b^(-s) is a quadrature weight
    f = lambda b: (2.0 * np.sinc(b / np.pi)) ** (-s) * np.cos(b) ** (d - 2)
    val, _ = integrate.quad(f, 0.0, 0.5 * np.pi, weight="alg", wvar=(-s, 0.0),
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return 2.0 * (1.0 - s) * sphere_measure(d - 1) * val


def ball_curvature_constant(params: FlowParams) -> float:
    """Curvature of the unit ball of ``R^d`` at any boundary point.

    Computed once per ``(d, s)`` by adaptive quadrature of the ray
    representation and cached.
    """
    return _ball_constant(int(params.d), float(params.s))


def _locate_face(E: IndicatorGrid, X) -> Tuple[int, int, float, float]:
    """Lattice indices and sub-cell shift of a face midpoint ``X``."""
    px = X[0] / E.h + 0.5 * E.nx - 0.5
    pz = X[1] / E.h + 0.5 * E.nz - 0.5
    tol = 1e-7
    fx, fz = px - np.floor(px), pz - np.floor(pz)
    on_int = lambda f: min(f, 1.0 - f) < tol
    on_half = lambda f: abs(f - 0.5) < tol
    if on_int(fx) and on_half(fz):
        i0, j0 = int(np.rint(px)), int(np.floor(pz))
        a = E.occupied(i0, j0)
        b = E.occupied(i0, j0 + 1)
        ox, oz = 0.0, 0.5
    elif on_half(fx) and on_int(fz):
        i0, j0 = int(np.floor(px)), int(np.rint(pz))
        a = E.occupied(i0, j0)
        b = E.occupied(i0 + 1, j0)
        ox, oz = 0.5, 0.0
    else:
        raise ValueError(f"point {tuple(X)} is not a cell-face midpoint")
    if bool(a) == bool(b):
        raise ValueError(f"point {tuple(X)} is not on the discrete boundary")
    return i0, j0, ox, oz


def _pad_near_edge(E: IndicatorGrid, i0: int, j0: int, m: int) -> IndicatorGrid:
    """Grow the window by ``m`` tail cells per side when ``(i0, j0)`` is within ``m`` of an edge.

    Antipodal pairing needs both members inside the window.  The window is
    centred, so symmetric padding leaves all coordinates unchanged.
    """
    pz = m if (j0 < m or j0 >= E.nz - m) else 0
    px = m if (not E.periodic and (i0 < m or i0 >= E.nx - m)) else 0
    if not (pz or px):
        return E
    jj, ii = np.mgrid[-pz:E.nz + pz, -px:E.nx + px]
    if E.periodic:
        ii = np.mod(ii, E.nx)
    return IndicatorGrid(E.occupied(ii, jj), E.h, E.tail, E.periodic)


def _tail_rows(E: IndicatorGrid, pz: float, ox: float, s: float) -> float:
    """Signed contribution of all rows above and below the window."""
    a, b = E.tail
    h = E.h
    if a != 0.0 and np.isfinite(b):
        raise ValueError("curvature needs a horizontal (a = 0) or infinite tail")
    zrow = lambda j: (j + 0.5 - 0.5 * E.nz) * h
    total = 0.0
    # rows above: j >= nz, offsets y = j - pz
    y_up = E.nz - pz
    if b == np.inf:
        total += rows_mass(y_up, ox, s)
    else:
        total -= rows_mass(y_up, ox, s)
        j = E.nz
        while zrow(j) < b:
            total += 2.0 * row_mass(j - pz, ox, s)
            j += 1
    # rows below: j <= -1, offsets |y| = pz - j
    y_dn = pz + 1.0
    if b == -np.inf:
        total -= rows_mass(y_dn, ox, s)
    else:
        total += rows_mass(y_dn, ox, s)
        j = -1
        while zrow(j) >= b:
            total -= 2.0 * row_mass(pz - j, ox, s)
            j -= 1
    return float(total)


def _side_columns(E: IndicatorGrid, px: float, pz: float, s: float) -> float:
    """Signed contribution of window rows outside the window columns."""
    rows = np.arange(E.nz)
    y = rows - pz
    mass = half_row_mass(px + 1.0, y, s) + half_row_mass(E.nx - px, y, s)
    sig = np.where(E.tail_occupied(0.0, E.z), 1.0, -1.0)
    return float(np.sum(sig * mass))


def _strip_far_field(D: float, R: float, s: float) -> float:
    """``int_{|Z|>R} sign(D - z_d) |Z|^-(2+s) dZ`` in the plane."""
    if D == 0.0:
        return 0.0
    a = 0.5 * (2.0 + s)
    if not np.isfinite(D):
        return np.sign(D) * radial_tail_integral(R, 2, s)
    f = lambda zd: 2.0 * line_tail_integral(np.sqrt(max(R * R - zd * zd, 0.0)), zd, a)
    Dm = abs(D)
    pts = [R] if R < Dm else None
    val, _ = integrate.quad(f, 0.0, Dm, points=pts, epsabs=0.0, epsrel=1e-11, limit=200)
    return float(np.sign(D) * 2.0 * val)


def fractional_mean_curvature(E: IndicatorGrid, X: Sequence[float],
                              params: FlowParams,
                              q: Optional[QuadratureConfig] = None) -> CurvatureSample:
    """Fractional mean curvature of ``E`` at a cell-face midpoint ``X``.

    The signed indicator is summed against lattice kernel weights.  Samples
    within the pairing radius are added in antipodal pairs; everything
    outside the window is supplied by the tail descriptor in closed form.

    Parameters
    ----------
    E : IndicatorGrid
        Two-dimensional set.
    X : (float, float)
        Midpoint of a face separating an occupied from an empty cell.
    params : FlowParams
        Must have ``d = 2``.
    q : QuadratureConfig, optional
        Quadrature controls; see :class:`QuadratureConfig`.

    Raises
    ------
    ValueError
        If ``X`` is not on the discrete boundary of ``E``.
    """
    if params.d != 2:
        raise ValueError("lattice curvature is implemented for d = 2")
    q = q or QuadratureConfig()
    s, h = params.s, E.h
    i0, j0, ox, oz = _locate_face(E, X)
    px, pz = i0 + ox, j0 + oz
    eps = q.cutoff(h) / h
    refine = int(np.ceil(4.0 * eps)) + 1
    if q.truncation_radius is None:
        E = _pad_near_edge(E, i0, j0, refine + 1)
        i0, j0, ox, oz = _locate_face(E, X)
        px, pz = i0 + ox, j0 + oz
        W = kernel_table(E.nx, E.nz, ox, oz, s, E.periodic, refine, q.inner_refinement)
        jj, ii = np.mgrid[0:E.nz, 0:E.nx]
        if E.periodic:
            col = np.mod(ii - i0, E.nx)
            di = np.where(col > E.nx // 2, col - E.nx, col)
        else:
            col = ii - i0 + E.nx - 1
            di = ii - i0
        w = W[jj - j0 + E.nz - 1, col]
        sig = E.signed()
        Z = np.stack([(di - ox).ravel(), (jj - j0 - oz).ravel()], axis=1)
        total = pv_sum(Z, sig.ravel(), w.ravel(), eps)
        if q.tail_correction:
            total += _tail_rows(E, pz, ox, s)
            if not E.periodic:
                total += _side_columns(E, px, pz, s)
    else:
        Rl = q.truncation_radius / h
        n = int(np.ceil(Rl)) + 2
        W = kernel_table(n, n, ox, oz, s, False, refine, q.inner_refinement, -1, Rl)
        dj, di = np.mgrid[-(n - 1):n, -(n - 1):n]
        keep = W > 0
        sig = np.where(E.occupied(i0 + di[keep], j0 + dj[keep]), 1.0, -1.0)
        Z = np.stack([di[keep] - ox, dj[keep] - oz], axis=1)
        total = pv_sum(Z, sig, W[keep], eps)
        if q.tail_correction:
            a, b = E.tail
            if a != 0.0 and np.isfinite(b):
                raise ValueError("curvature needs a horizontal (a = 0) or infinite tail")
            D = (b - X[1]) / h if np.isfinite(b) else b
            total += _strip_far_field(D, Rl, s)
    value = -params.normalization * h ** (-s) * total
    return CurvatureSample((float(X[0]), float(X[1])), float(value), q)


def boundary_faces(E: IndicatorGrid) -> np.ndarray:
    """Midpoints of the horizontal faces where occupancy changes inside the window."""
    occ = E.occupancy
    jj, ii = np.nonzero(occ[:-1] != occ[1:])
    return np.stack([E.x[ii], E.z_bottom + (jj + 1) * E.h], axis=1)


def curvature_sweep_csv(E: IndicatorGrid, points: Iterable[Sequence[float]],
                        params: FlowParams, q: Optional[QuadratureConfig] = None) -> str:
    """Curvature at ``points`` as CSV with columns ``x, x_d, H_s, s, d, h``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVATURE_CSV_HEADER)
    for X in points:
        c = fractional_mean_curvature(E, X, params, q)
        w.writerow([repr(c.point[0]), repr(c.point[1]), repr(c.value),
                    repr(params.s), params.d, repr(E.h)])
    return buf.getvalue()


# --------------------------------------------------------------------------
# graphs

def graph_kernel_mass(s: float) -> float:
    """Diagonal mass of the discrete graph operator in units of ``dx^-(1+s)``."""
    return 2.0 * (special.zeta(2.0 + s) + abs(special.zeta(s)))


def graph_curvature_rhs(u: np.ndarray, dx: float, params: FlowParams,
                        nodes=None, slope: float = 0.0, images: int = 2) -> np.ndarray:
    """Vertical speed of a periodic graph under the fractional flow.

    The graph is ``u(x + k P) = u(x) + slope k P`` with ``P = len(u) dx``.
    The integral over ``z`` is split into antipodal pairs; the pair
    integrand behaves like ``c z^-s`` near zero and the midpoint sum is
    corrected by the zeta-function term ``-zeta(s) c dx^(1-s)``.  Beyond
    ``images`` periods the flux is linearised around the tail slope and
    summed with Hurwitz zeta functions.

    Parameters
    ----------
    u : (N,) array
        Samples at ``x_i = i dx``.
    dx : float
        Grid spacing.
    params : FlowParams
        Must have ``d = 2``.
    nodes : array of int, optional
        Nodes at which to evaluate; all by default.
    slope : float
        Linear growth of the graph across periods.
    images : int
        Whole periods summed explicitly on each side.

    Returns
    -------
    ndarray
        ``s(1-s) sqrt(1+u'^2) int (u(x+z)-u(x)) |z|^-(2+s) Lambda(...) dz``.
    """
    if params.d != 2:
        raise ValueError("graph flow is implemented for d = 2")
    u = np.asarray(u, dtype=float)
    N = u.size
    s = params.s
    P = N * dx
    idx = np.arange(N) if nodes is None else np.atleast_1d(np.asarray(nodes))
    J = images * N
    j = np.arange(1, J + 1)
    z = j * dx
    # u(x_i +- z_j) with the linear extension across periods
    fwd = idx[:, None] + j[None, :]
    bwd = idx[:, None] - j[None, :]
    uf = u[np.mod(fwd, N)] + slope * P * np.floor_divide(fwd, N)
    ub = u[np.mod(bwd, N)] + slope * P * np.floor_divide(bwd, N)
    ui = u[idx][:, None]
    pair = (graph_flux((uf - ui) / z, params) + graph_flux((ub - ui) / z, params)) * z ** (-(1.0 + s))
    integral = dx * pair.sum(axis=1)
    up = u[np.mod(idx + 1, N)] + slope * P * (idx + 1 >= N)
    um = u[np.mod(idx - 1, N)] - slope * P * (idx - 1 < 0)
    du = (up - um) / (2.0 * dx)
    d2u = (up - 2.0 * u[idx] + um) / dx ** 2
    integral -= special.zeta(s) * graph_flux_derivative(du, params) * d2u * dx ** (1.0 - s)
    # linearised far field, grouped by residue class of the offset
    r = np.arange(1, N + 1)
    wfar = dx ** (-(1.0 + s)) * N ** (-(2.0 + s)) * special.zeta(2.0 + s, images + r / N)
    p = u - slope * dx * np.arange(N)
    pi = p[idx][:, None]
    second = p[np.mod(idx[:, None] + r, N)] + p[np.mod(idx[:, None] - r, N)] - 2.0 * pi
    integral += graph_flux_derivative(slope, params) * (second * wfar).sum(axis=1)
    return params.normalization * np.sqrt(1.0 + du ** 2) * integral


# --------------------------------------------------------------------------
# perimeter

def _dirichlet_beta(t: float) -> float:
    return 4.0 ** (-t) * (special.zeta(t, 0.25) - special.zeta(t, 0.75))


def _epstein(p: float) -> float:
    """Sum of ``|n|^-p`` over the nonzero points of the square lattice."""
    t = 0.5 * p
    return 4.0 * special.zeta(t) * _dirichlet_beta(t)


_PAIR_NEAR = 4


@lru_cache(maxsize=16)
def _pair_table(s: float, n: int) -> np.ndarray:
    """Cell-pair interaction ``int_cell int_cell+D |X-Y|^-(2+s)`` on unit cells.

    Far offsets use the expansion ``K (1 + p^2 / (12 |D|^2))``, near offsets
    are integrated numerically against the tent autocorrelation of the cell.
    """
    p = 2.0 + s
    dj, di = np.mgrid[-(n - 1):n, -(n - 1):n].astype(float)
    r2 = di * di + dj * dj
    with np.errstate(divide="ignore"):
        J = r2 ** (-0.5 * p) * (1.0 + p * p / (12.0 * r2))
    J[n - 1, n - 1] = 0.0
    for a in range(0, _PAIR_NEAR + 1):
        for b in range(0, a + 1):
            if a == 0 and b == 0:
                continue
            v = _pair_exact(s, a, b)
            for x, y in {(a, b), (b, a), (-a, b), (-b, a), (a, -b), (b, -a), (-a, -b), (-b, -a)}:
                if abs(x) < n and abs(y) < n:
                    J[y + n - 1, x + n - 1] = v
    J.setflags(write=False)
    return J


@lru_cache(maxsize=None)
def _pair_exact(s: float, a: int, b: int) -> float:
    p = 2.0 + s
    opts = dict(epsabs=1e-13, epsrel=1e-11, limit=200)

    def inner(v2):
        g = lambda v1: (1.0 - abs(v1)) * ((a + v1) ** 2 + (b + v2) ** 2) ** (-0.5 * p)
        return (1.0 - abs(v2)) * (integrate.quad(g, -1.0, 0.0, **opts)[0]
                                  + integrate.quad(g, 0.0, 1.0, **opts)[0])

    # the only singular point (-a, -b) sits on a corner of the split
    return float(integrate.quad(inner, -1.0, 0.0, **opts)[0]
                 + integrate.quad(inner, 0.0, 1.0, **opts)[0])


@lru_cache(maxsize=16)
def _pair_mass(s: float) -> float:
    """Total interaction of one cell with all other lattice cells."""
    p = 2.0 + s
    total = _epstein(p) + p * p / 12.0 * _epstein(p + 2.0)
    for a in range(-_PAIR_NEAR, _PAIR_NEAR + 1):
        for b in range(-_PAIR_NEAR, _PAIR_NEAR + 1):
            if a == 0 and b == 0:
                continue
            r2 = float(a * a + b * b)
            approx = r2 ** (-0.5 * p) * (1.0 + p * p / (12.0 * r2))
            total += _pair_exact(s, abs(max(abs(a), abs(b))), min(abs(a), abs(b))) - approx
    return float(total)


def fractional_perimeter(E: IndicatorGrid, params: FlowParams) -> float:
    """Fractional perimeter of a bounded set on the lattice.

    Each pair of cells interacts through the exact integral of the kernel
    over both cells, so the complement outside the window is included
    through the total lattice mass.

    Raises
    ------
    ValueError
        If ``E`` has a nonempty tail or ``d != 2``.
    """
    if params.d != 2:
        raise ValueError("lattice perimeter is implemented for d = 2")
    if E.tail[1] != -np.inf:
        raise ValueError("fractional perimeter needs a bounded set (empty tail)")
    s, h = params.s, E.h
    occ = E.occupancy.astype(float)
    count = occ.sum()
    if count == 0:
        return 0.0
    nz, nx = occ.shape
    shape = (2 * nz, 2 * nx)
    F = np.fft.rfft2(occ, shape)
    auto = np.fft.irfft2(F * np.conj(F), shape)
    # reorder to offsets -(n-1)..(n-1)
    auto = np.roll(np.roll(auto, nz - 1, axis=0), nx - 1, axis=1)[:2 * nz - 1, :2 * nx - 1]
    n = max(nx, nz)
    J = _pair_table(s, n)[n - nz:n + nz - 1, n - nx:n + nx - 1]
    inner = float(np.sum(np.rint(auto) * J))
    total = count * _pair_mass(s) - inner
    return 2.0 * params.normalization * h ** (2.0 - s) * total


# --------------------------------------------------------------------------
# level sets
#
# The curvature of the sublevel set {V < U(X)} of a grid field is evaluated
# with a piecewise-linear reconstruction of U inside every cell.  A cell then
# contributes the signed fraction of its area lying below the level, which is
# the distribution function of a sum of two uniform variables.  Cells inside
# the box |Z|_inf <= (NEAR_BOX + 1/2) h are not summed: there the level curve
# is replaced by its osculating parabola, whose kernel integral is known in
# closed form.

NEAR_BOX = 2


@nb.njit(cache=True)
def _below_fraction(t, A, B):
    # P(S < t) for S = U1 + U2, U1 ~ unif[-A/2, A/2], U2 ~ unif[-B/2, B/2]
    if A < B:
        A, B = B, A
    tp = t + 0.5 * (A + B)
    if tp <= 0.0:
        return 0.0
    if tp >= A + B:
        return 1.0
    if B <= 1e-14 * A:
        return tp / A
    if tp <= B:
        return tp * tp / (2.0 * A * B)
    if tp <= A:
        return (tp - 0.5 * B) / A
    r = A + B - tp
    return 1.0 - r * r / (2.0 * A * B)


@nb.njit(cache=True)
def _straddler_sums(U, A, B, W, periodic, nodes, node_ptr, cells, cell_ptr):
    nz, nx = U.shape
    out = np.zeros(nodes.shape[0])
    for k in range(node_ptr.shape[0] - 1):
        for n in range(node_ptr[k], node_ptr[k + 1]):
            j0 = nodes[n] // nx
            i0 = nodes[n] % nx
            g = U[j0, i0]
            acc = 0.0
            for c in range(cell_ptr[k], cell_ptr[k + 1]):
                j = cells[c] // nx
                i = cells[c] % nx
                col = (i - i0) % nx if periodic else i - i0 + nx - 1
                w = W[j - j0 + nz - 1, col]
                if w == 0.0:
                    continue
                e = 0.5 * (A[j, i] + B[j, i])
                t = g - U[j, i]
                if t > e:
                    acc += w
                elif t <= -e:
                    acc -= w
                else:
                    acc += w * (2.0 * _below_fraction(t, A[j, i], B[j, i]) - 1.0)
            out[n] = acc
    return out


@lru_cache(maxsize=8)
def _kernel_spectrum(nx: int, nz: int, s: float, periodic: bool, radius: float):
    W = kernel_table(nx, nz, 0.0, 0.0, s, periodic, box=NEAR_BOX, radius=radius)
    Lz, Lx = 2 * nz, (nx if periodic else 2 * nx)
    # sum_c a(c) W(c - X) is the circular convolution of a with G(D) = W(-D)
    rows = (-(np.arange(2 * nz - 1) - (nz - 1))) % Lz
    cols = np.arange(W.shape[1]) if periodic else np.arange(W.shape[1]) - (nx - 1)
    G = np.zeros((Lz, Lx))
    G[np.ix_(rows, (-cols) % Lx)] = W
    return W, sp_fft.rfft2(G), (Lz, Lx)


@lru_cache(maxsize=8)
def _exterior_masses(nx: int, nz: int, s: float, periodic: bool):
    """Kernel mass (lattice units) of the rows above, rows below and side columns."""
    j = np.arange(nz, dtype=float)
    up = rows_mass(nz - j, 0.0, s)
    down = rows_mass(j + 1.0, 0.0, s)
    if periodic:
        return up, down, np.zeros((nz, nx))
    dj = np.arange(-(nz - 1), nz, dtype=float)
    HR = half_row_mass(np.arange(1, nx + 1, dtype=float)[:, None], dj[None, :], s)
    C = np.concatenate([np.zeros((nx, 1)), np.cumsum(HR, axis=1)], axis=1)
    jj = np.arange(nz)
    # column block sum over rows of the window seen from row j0
    block = C[:, 2 * nz - 1 - jj] - C[:, nz - 1 - jj]          # (distance-1, j0)
    i0 = np.arange(nx)
    side = block[i0, :].T + block[nx - 1 - i0, :].T
    return up, down, side


def _pad(U: np.ndarray, periodic: bool, exterior, width: int = 1) -> np.ndarray:
    above, below, side = exterior
    nz, nx = U.shape
    if periodic:
        P = np.concatenate([U[:, -width:], U, U[:, :width]], axis=1)
    else:
        col = np.full((nz, width), float(side))
        P = np.concatenate([col, U, col], axis=1)
    top = np.full((width, P.shape[1]), float(above))
    bot = np.full((width, P.shape[1]), float(below))
    return np.concatenate([bot, P, top], axis=0)


def level_derivatives(U: np.ndarray, h: float, periodic: bool, exterior):
    """Central first and second differences ``(Ux, Uz, Uxx, Uzz, Uxz)``."""
    P = _pad(U, periodic, exterior)
    c = P[1:-1, 1:-1]
    Ux = (P[1:-1, 2:] - P[1:-1, :-2]) / (2.0 * h)
    Uz = (P[2:, 1:-1] - P[:-2, 1:-1]) / (2.0 * h)
    Uxx = (P[1:-1, 2:] - 2.0 * c + P[1:-1, :-2]) / h ** 2
    Uzz = (P[2:, 1:-1] - 2.0 * c + P[:-2, 1:-1]) / h ** 2
    Uxz = (P[2:, 2:] - P[2:, :-2] - P[:-2, 2:] + P[:-2, :-2]) / (4.0 * h * h)
    return Ux, Uz, Uxx, Uzz, Uxz


def _level_groups(g: np.ndarray, width: float):
    """Split sorted levels into groups; the extreme values form groups of their own."""
    lo, hi = g[0], g[-1]
    interior = (g > lo) & (g < hi)
    key = np.empty(g.size, dtype=np.int64)
    key[g == lo] = 0
    key[g == hi] = np.iinfo(np.int64).max
    key[interior] = 1 + np.floor((g[interior] - lo) / width).astype(np.int64)
    bounds = np.flatnonzero(np.diff(key)) + 1
    return np.concatenate([[0], bounds, [g.size]])


def sublevel_curvature(U: np.ndarray, h: float, params: FlowParams, periodic: bool = True,
                       exterior=(1.0, -1.0, 1.0), active: Optional[np.ndarray] = None,
                       kernel_radius: Optional[float] = None,
                       bin_width: float = 4.0) -> np.ndarray:
    """Curvature ``H_s(X, {V < U(X)})`` of the level sets of a grid field.

    Parameters
    ----------
    U : (nz, nx) array
        Node values at cell centres; row 0 is the lowest.
    h : float
        Grid spacing.
    params : FlowParams
        ``d`` must be 2.
    periodic : bool
        Periodic in ``x``; otherwise the field takes the ``side`` value left
        and right of the window.
    exterior : (above, below, side)
        Constant values of the field outside the window.
    active : (nz, nx) bool array, optional
        Nodes to evaluate; the result is 0 elsewhere.
    kernel_radius : float, optional
        Replace the kernel by its restriction to ``|Z| <= kernel_radius``.
    bin_width : float
        Width, in grid spacings, of the level bins that share one FFT
        convolution for the cells lying entirely above or below the bin.

    Returns
    -------
    ndarray
        Curvature of the open sublevel set through each node.  The closed
        superlevel set has the opposite curvature.
    """
    if params.d != 2:
        raise ValueError("level-set curvature is implemented for d = 2")
    U = np.ascontiguousarray(U, dtype=float)
    s = params.s
    if kernel_radius is not None:
        # pad with enough exterior so that the truncated kernel never leaves the grid
        m = int(np.ceil(kernel_radius / h)) + 1
        nz, nx = U.shape
        if periodic:
            above, below, _ = exterior
            P = np.concatenate([np.full((m, nx), float(below)), U,
                                np.full((m, nx), float(above))], axis=0)
        else:
            P = _pad(U, periodic, exterior, m)
        if active is not None:
            act = np.zeros(P.shape, dtype=bool)
            if periodic:
                act[m:-m, :] = active
            else:
                act[m:-m, m:-m] = active
        else:
            act = None
        H = _sublevel_curvature(P, h, s, periodic, exterior, act, kernel_radius / h,
                                bin_width, exterior_rows=False)
        return H[m:-m, :] if periodic else H[m:-m, m:-m]
    return _sublevel_curvature(U, h, s, periodic, exterior, active, np.inf, bin_width,
                               exterior_rows=True)


def _sublevel_curvature(U, h, s, periodic, exterior, active, radius, bin_width, exterior_rows):
    nz, nx = U.shape
    Ux, Uz, Uxx, Uzz, Uxz = level_derivatives(U, h, periodic, exterior)
    A = np.abs(Ux) * h
    B = np.abs(Uz) * h
    e = 0.5 * (A + B)
    if active is None:
        active = np.ones(U.shape, dtype=bool)
    nodes = np.flatnonzero(active.ravel())
    H = np.zeros(U.shape)
    if nodes.size == 0:
        return H
    flatU = U.ravel()
    order = np.argsort(flatU[nodes], kind="stable")
    nodes = nodes[order]
    g = flatU[nodes]
    slope = np.hypot(Ux, Uz).ravel()[nodes]
    slope = float(np.median(slope[slope > 0])) if np.any(slope > 0) else 1.0
    ptr = _level_groups(g, bin_width * h * slope)

    W, Ghat, shape = _kernel_spectrum(nx, nz, s, periodic, radius)
    Umin, Umax = (U - e).ravel(), (U + e).ravel()
    far = np.empty(nodes.size)
    cells, cell_ptr = [], [0]
    # definite cells of every group, convolved in one batch
    lo = g[ptr[:-1]]
    hi = g[ptr[1:] - 1]
    ngroups = lo.size
    batch = 16
    for b0 in range(0, ngroups, batch):
        b1 = min(b0 + batch, ngroups)
        a = ((Umax[None, :] < lo[b0:b1, None]).astype(float)
             - (Umin[None, :] >= hi[b0:b1, None]))
        conv = sp_fft.irfft2(sp_fft.rfft2(a.reshape(-1, nz, nx), s=shape) * Ghat, s=shape)
        conv = conv[:, :nz, :nx].reshape(b1 - b0, -1)
        for k in range(b0, b1):
            sel = nodes[ptr[k]:ptr[k + 1]]
            far[ptr[k]:ptr[k + 1]] = conv[k - b0, sel]
            strad = np.flatnonzero((Umax >= lo[k]) & (Umin < hi[k]))
            cells.append(strad)
            cell_ptr.append(cell_ptr[-1] + strad.size)
    cells = np.concatenate(cells).astype(np.int64)
    far += _straddler_sums(U, A, B, W, periodic, nodes.astype(np.int64),
                           ptr.astype(np.int64), cells, np.asarray(cell_ptr, dtype=np.int64))

    total = h ** (-s) * far
    jn, inn = np.divmod(nodes, nx)
    if exterior_rows:
        above, below, side = exterior
        up, down, sides = _exterior_masses(nx, nz, s, periodic)
        sig = lambda v: np.where(v < g, 1.0, -1.0)
        out = sig(above) * up[jn] + sig(below) * down[jn]
        if not periodic:
            out = out + sig(side) * sides[jn, inn]
        total += h ** (-s) * out

    # osculating-parabola contribution of the excluded box
    ux, uz = Ux.ravel()[nodes], Uz.ravel()[nodes]
    g2 = ux * ux + uz * uz
    ok = g2 > 0
    grad = np.sqrt(g2[ok])
    kappa = np.zeros(nodes.size)
    ell = np.zeros(nodes.size)
    kappa[ok] = ((Uxx.ravel()[nodes][ok] * uz[ok] ** 2
                  - 2.0 * ux[ok] * uz[ok] * Uxz.ravel()[nodes][ok]
                  + Uzz.ravel()[nodes][ok] * ux[ok] ** 2) / grad ** 3)
    ell[ok] = (NEAR_BOX + 0.5) * h * grad / np.maximum(np.abs(ux[ok]), np.abs(uz[ok]))
    # beyond |kappa| ell = 1 the parabola leaves the box; keep the model bounded
    kappa = np.clip(kappa, -1.0 / np.maximum(ell, 1e-300), 1.0 / np.maximum(ell, 1e-300))
    total += -2.0 * kappa * ell ** (1.0 - s) / (1.0 - s)
    H.ravel()[nodes] = -s * (1.0 - s) * total
    return H
