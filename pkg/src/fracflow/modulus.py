"""The explicit time-dependent modulus of continuity and its inequality checks.

For ``delta = (T - t)/T`` and ``r0 = c delta^2`` the modulus is

    omega(t, r) = delta + A r^2 + B              for 0 <= r <= r0
                = delta + (1+L) r - (r/2)^(1+s)  for r0 <= r <= 2
                = delta + 1 + L r                for r >= 2

with ``A``, ``B`` chosen so that the first two branches join in a ``C^1``
way.  The functions below evaluate it, its derivatives, the two branch
integrals that control the speed of the boundary gap, and the discrete or
quadrature checks built on them.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special

from .geometry import BoundaryPair, IndicatorGrid, Modulus, extract_boundaries
from .kernel import FlowParams, line_tail_integral

SWEEP_CSV_HEADER = ("t", "xi", "pos_integral", "neg_integral", "combined", "bound", "pass")


def default_c(params: FlowParams) -> float:
    """Default size ``min(s, 2) / (10 (1+L))`` of the quadratic cap."""
    return min(params.s, 2.0) / (10.0 * (1.0 + params.L))


@dataclass(frozen=True)
class ModulusFamily:
    """The family ``omega(t, .)`` on ``[0, T]``.

    Parameters
    ----------
    params : FlowParams
    c : float, optional
        Cap size, ``0 < c < 2/(5(1+L))``; defaults to :func:`default_c`.
    T : float
        Terminal time.
    """

    params: FlowParams
    c: Optional[float] = None
    T: float = 1.0

    def __post_init__(self):
        if self.c is None:
            object.__setattr__(self, "c", default_c(self.params))
        bound = 2.0 / (5.0 * (1.0 + self.params.L))
        if not (0.0 < self.c < bound):
            raise ValueError(f"c must lie in (0, {bound:.6g}), got {self.c!r}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"T must be positive and finite, got {self.T!r}")

    # -- time dependence ------------------------------------------------
    def _check_t(self, t: float, strict: bool = False) -> float:
        t = float(t)
        if not (0.0 <= t <= self.T) or (strict and t >= self.T):
            rng = "[0, T)" if strict else "[0, T]"
            raise ValueError(f"t = {t!r} outside {rng} with T = {self.T!r}")
        return t

    def delta(self, t: float) -> float:
        t = self._check_t(t)
        return (self.T - t) / self.T

    @property
    def delta_dt(self) -> float:
        return -1.0 / self.T

    def coefficients(self, t: float) -> Tuple[float, float, float]:
        """``(A, B, r0)`` of the quadratic cap at time ``t``."""
        d = self.delta(t)
        return _cap(d, self.c, self.params.s, self.params.L)

    # -- values ---------------------------------------------------------
    def omega(self, t: float, r):
        """``omega(t, r)`` for ``r >= 0`` (scalar or array)."""
        d = self.delta(t)
        return _omega(d, np.asarray(r, dtype=float), self.c, self.params.s, self.params.L)

    def at(self, t: float) -> Modulus:
        """Freeze time: ``omega(t, .)`` as a :class:`Modulus`."""
        d = self.delta(t)
        c, s, L = self.c, self.params.s, self.params.L
        return Modulus(lambda r: _omega(d, np.asarray(r, dtype=float), c, s, L),
                       1.0 + L, f"omega(t={t:g})")

    def omega_dr(self, t: float, r, flag: bool = False):
        """``d omega / d r``; at a branch point the inner branch is used.

        With ``flag=True`` also return a boolean mask of branch-point inputs.
        """
        d = self.delta(t)
        A, B, r0 = _cap(d, self.c, self.params.s, self.params.L)
        s, L = self.params.s, self.params.L
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise ValueError("r must be non-negative")
        inner = r <= r0 if r0 > 0 else np.zeros(r.shape, dtype=bool)
        outer = r > 2.0
        mid = ~inner & ~outer
        out = np.empty(r.shape)
        out[inner] = 2.0 * A * r[inner]
        out[mid] = (1.0 + L) - (1.0 + s) * 0.5 * (0.5 * r[mid]) ** s
        out[outer] = L
        out = float(out) if out.ndim == 0 else out
        if flag:
            at = (r == 2.0) | ((r == r0) & (r0 > 0))
            return out, (bool(at) if np.ndim(at) == 0 else at)
        return out

    def omega_dt(self, t: float, r, flag: bool = False):
        """``d omega / d t`` for ``t < T``; inner-branch convention at ``r = r0``."""
        t = self._check_t(t, strict=True)
        d = (self.T - t) / self.T
        c, s, L = self.c, self.params.s, self.params.L
        dd = self.delta_dt
        A, B, r0 = _cap(d, c, s, L)
        r = np.asarray(r, dtype=float)
        # d/d r0 of A and B, then chain rule through r0 = c delta^2
        dA = -(1.0 + L) / (2.0 * r0 ** 2) + (1.0 + s) * (1.0 - s) * r0 ** (s - 2.0) / 2.0 ** (2.0 + s)
        dB = 0.5 * (1.0 + L) - (1.0 - s) * (1.0 + s) * r0 ** s / 2.0 ** (2.0 + s)
        dr0 = 2.0 * c * d * dd
        out = np.full(r.shape, dd)
        inner = r <= r0
        out[inner] += (dA * r[inner] ** 2 + dB) * dr0
        out = float(out) if out.ndim == 0 else out
        if flag:
            at = r == r0
            return out, (bool(at) if np.ndim(at) == 0 else at)
        return out


def _cap(d: float, c: float, s: float, L: float) -> Tuple[float, float, float]:
    r0 = c * d * d
    if r0 == 0.0:
        return math.inf, 0.0, 0.0
    A = (1.0 + L) / (2.0 * r0) - (1.0 + s) * r0 ** (s - 1.0) / 2.0 ** (2.0 + s)
    B = 0.5 * (1.0 + L) * r0 - (1.0 - s) * r0 ** (1.0 + s) / 2.0 ** (2.0 + s)
    return A, B, r0


def _omega(d: float, r: np.ndarray, c: float, s: float, L: float):
    if np.any(r < 0):
        raise ValueError("r must be non-negative")
    A, B, r0 = _cap(d, c, s, L)
    out = np.where(r >= 2.0, 1.0 + L * r,
                   (1.0 + L) * r - (0.5 * r) ** (1.0 + s))
    if r0 > 0:
        out = np.where(r <= r0, A * r * r + B, out)
    out = out + d
    return float(out) if out.ndim == 0 else out


def _omega_scalar(d: float, r: float, A: float, B: float, r0: float, s: float, L: float) -> float:
    if r <= r0:
        return d + A * r * r + B
    if r <= 2.0:
        return d + (1.0 + L) * r - (0.5 * r) ** (1.0 + s)
    return d + 1.0 + L * r


# --------------------------------------------------------------------------
# constants

def regularization_expression(params: FlowParams) -> float:
    """Parameter dependence of the regularisation time, without the constant."""
    d, s, L = params.d, params.s, params.L
    if d == 2:
        return (1.0 + L) ** (2.0 + s) / (s * s * (1.0 - s))
    return ((3.0 * (1.0 + L)) ** (d + s) * special.gamma(0.5 * (d + s))
            / (s * s * (1.0 - s) * special.gamma(0.5 * (d - 2)) * special.gamma(0.5 * (2.0 + s))))


def regularization_time(params: FlowParams, K: Optional[float] = None) -> float:
    """Time after which a flat-at-infinity set is a ``(1+L)``-Lipschitz subgraph.

    ``K`` multiplies :func:`regularization_expression`.  When omitted it is
    the smallest power of two certified by :func:`modulus_sweep` at the
    default cap size and grids (cached per parameter set).
    """
    if K is None:
        K = calibrated_constant(params)
    return float(K) * regularization_expression(params)


@dataclass(frozen=True)
class RearrangementConstant:
    """Constant ``C(d, s)`` of the integral rearrangement inequality."""

    d: int
    s: float

    @property
    def value(self) -> float:
        return rearrangement_constant(self.d, self.s)


def rearrangement_constant(d: int, s: float) -> float:
    """``C(2, s) = 1``; for ``d >= 3`` half the Beta function ``B((d-2)/2, (2+s)/2)``."""
    if d == 2:
        return 1.0
    if d < 2:
        raise ValueError("d must be >= 2")
    return (special.gamma(0.5 * (d - 2)) * special.gamma(0.5 * (2.0 + s))
            / (2.0 * special.gamma(0.5 * (d + s))))


def combined_constant(params: FlowParams) -> float:
    """Prefactor ``2 s (1-s) C(d,s) / (3(1+L))^(d+s)`` of the bracketed integrals.

    The speed bound carries an extra factor ``sqrt(1 + omega_r^2) >= 1`` that
    only strengthens a negative bracket, so it is dropped.
    """
    d, s, L = params.d, params.s, params.L
    return 2.0 * s * (1.0 - s) * rearrangement_constant(d, s) / (3.0 * (1.0 + L)) ** (d + s)


# --------------------------------------------------------------------------
# branch integrals

def _kernel_exponent(s: float) -> float:
    return 0.5 * (2.0 + s)


def _quad(f, a, b, points, w0):
    pts = sorted({p for p in points if a < p < b} | {p for p in (a + w0, a + 10 * w0) if a < p < b})
    val, _ = integrate.quad(f, a, b, points=pts or None, limit=400, epsabs=1e-13, epsrel=1e-11)
    return val


def _branch_integrals(omega: Callable[[float], float], xi: float, breaks: Sequence[float],
                      s: float, slope_far: float) -> Tuple[float, float]:
    """Positive- and negative-branch integrals for a modulus that is affine past r = 2."""
    xi = abs(float(xi))
    w0 = omega(0.0)
    p = _kernel_exponent(s)
    wx = omega(xi)

    def kern(eta):
        return (eta * eta + w0 * w0) ** (-p)

    pos = 0.0
    if xi > 0:
        pts = [0.5 * (b - xi) for b in breaks] + [0.5 * (xi - b) for b in breaks]
        pos = _quad(lambda e: (omega(xi + 2 * e) + omega(xi - 2 * e) - 2 * wx) * kern(e),
                    0.0, 0.5 * xi, pts, w0)
    # past eta1 both arguments are on the affine branch and the numerator is constant
    eta1 = 1.0 + 0.5 * xi
    pts = [0.5 * (b - xi) for b in breaks] + [0.5 * (b + xi) for b in breaks]
    neg = _quad(lambda e: (omega(2 * e + xi) - omega(2 * e - xi) - 2 * wx) * kern(e),
                0.5 * xi, eta1, pts, w0)
    neg += (2.0 * slope_far * xi - 2.0 * wx) * line_tail_integral(eta1, w0, p)
    return pos, neg


def _family_integrals(M: ModulusFamily, t: float, xi: float) -> Tuple[float, float]:
    d = M.delta(t)
    s, L = M.params.s, M.params.L
    A, B, r0 = _cap(d, M.c, s, L)

    def om(r):
        return _omega_scalar(d, abs(r), A, B, r0, s, L)

    return _branch_integrals(om, xi, (r0, 2.0), s, L)


def _check_xi(xi: float) -> float:
    xi = abs(float(xi))
    if xi > 2.0:
        raise ValueError(f"|xi| must be <= 2, got {xi!r}")
    return xi


def positive_branch_integral(t: float, xi: float, M: ModulusFamily) -> float:
    """Integral over ``[0, |xi|/2]`` of the second difference of ``omega`` around ``|xi|``."""
    return _family_integrals(M, t, _check_xi(xi))[0]


def negative_branch_integral(t: float, xi: float, M: ModulusFamily) -> float:
    """Integral over ``[|xi|/2, inf)`` of ``omega(2e+|xi|) - omega(2e-|xi|) - 2 omega(|xi|)``.

    Beyond ``eta = 1 + |xi|/2`` the numerator equals ``2 L |xi| - 2 omega(|xi|)``
    and the remaining kernel integral is evaluated in closed form.
    """
    return _family_integrals(M, t, _check_xi(xi))[1]


# --------------------------------------------------------------------------
# sweeps

@dataclass
class SweepResult:
    """Outcome of a modulus sweep over ``(t, xi)``."""

    params: FlowParams
    c: float
    K: int
    T: float
    kappa: float
    pos_max: float
    neg_max: float
    combined_max: float
    time_derivative_ok: bool
    rows: List[Tuple[float, ...]] = field(repr=False, default_factory=list)

    @property
    def pos_bound(self) -> float:
        return (1.0 + self.params.L) * self.c ** 2

    @property
    def all_pass(self) -> bool:
        return (self.pos_max <= self.pos_bound and self.neg_max < 0 and self.time_derivative_ok
                and all(r[-1] for r in self.rows))

    def summary(self) -> str:
        return f"K={self.K} kappa={self.kappa:.6g} all_pass={self.all_pass}"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_CSV_HEADER)
        for t, xi, p, n, comb, bound, ok in self.rows:
            w.writerow([repr(t), repr(xi), repr(p), repr(n), repr(comb), repr(bound),
                        "true" if ok else "false"])
        return buf.getvalue()


def time_derivative_check(M: ModulusFamily, nt: int = 100, nr: int = 100,
                          t_max: float = 0.999, r_max: float = 4.0) -> Tuple[bool, float]:
    """Check ``omega_t > 2 delta'`` on an ``nt x nr`` grid of ``[0, t_max T] x [0, r_max]``.

    Returns the verdict and the smallest margin ``omega_t - 2 delta'``.
    """
    r = np.linspace(0.0, r_max, nr)
    margin = math.inf
    for t in np.linspace(0.0, t_max * M.T, nt):
        m = float(np.min(M.omega_dt(t, r) - 2.0 * M.delta_dt))
        margin = min(margin, m)
    return margin > 0, margin


def modulus_sweep(params: FlowParams, c: Optional[float] = None, nt: int = 100, nxi: int = 200,
                  t_max: float = 0.999) -> SweepResult:
    """Evaluate both branch integrals on a ``(t, xi)`` grid and certify ``K``.

    The integrals depend on ``t`` only through ``delta``, so the sweep runs
    with ``T = 1``; ``K`` is then the smallest power of two for which
    ``combined <= -2/T`` holds at every grid point with
    ``T = K * regularization_expression(params)``.
    """
    M = ModulusFamily(params, c, 1.0)
    ts = np.linspace(0.0, t_max, nt)
    xis = np.linspace(0.0, 2.0, nxi)
    vals = np.empty((nt, nxi, 2))
    for a, t in enumerate(ts):
        for b, xi in enumerate(xis):
            vals[a, b] = _family_integrals(M, t, xi)
    total = vals.sum(axis=2)
    Cc = combined_constant(params)
    expr = regularization_expression(params)
    worst = float(total.max())
    if worst < 0:
        kmin = 2.0 / (Cc * -worst * expr)
        K = 1
        while K < kmin:
            K *= 2
    else:
        K = 0
    T = K * expr
    bound = -2.0 / T if K else -math.inf
    rows = []
    for a, t in enumerate(ts):
        for b, xi in enumerate(xis):
            comb = Cc * total[a, b]
            rows.append((float(t) * T if K else float(t), float(xi), float(vals[a, b, 0]),
                         float(vals[a, b, 1]), float(comb), float(bound), bool(comb <= bound)))
    time_ok, _ = time_derivative_check(M)
    neg_max = float(vals[:, :, 1].max())
    return SweepResult(params, M.c, K, T, -neg_max, float(vals[:, :, 0].max()), neg_max,
                       float(Cc * worst), time_ok, rows)


@lru_cache(maxsize=16)
def _calibrated(d: int, s: float, L: float) -> int:
    return modulus_sweep(FlowParams(d, s, L)).K


def calibrated_constant(params: FlowParams) -> int:
    """Smallest certified power-of-two ``K`` at the default sweep settings."""
    K = _calibrated(params.d, params.s, params.L)
    if K == 0:
        raise RuntimeError("branch integrals are not negative on the sweep grid")
    return K


def assumption_checks(M: ModulusFamily, r_max: float = 10.0, n: int = 2001,
                      probe: float = 1e-6) -> dict:
    """Verify the standing assumptions on the family.

    Returns a mapping from check name to ``(ok, measured)``.
    """
    L = M.params.L
    r = np.linspace(0.0, r_max, n)
    out = {}
    gap0 = M.omega(0.0, r) - (1.0 + L * r)
    out["initial_above_affine"] = (bool(np.all(gap0 > 0)), float(gap0.min()))
    far = r[r > 2.0]
    worst = math.inf
    for t in np.linspace(0.0, M.T, 51)[:-1]:
        worst = min(worst, float(np.min(M.omega(t, far) - (1.0 + L * far))))
    out["outer_above_affine"] = (worst > 0, worst)
    wT0 = M.omega(M.T, 0.0)
    out["terminal_zero"] = (wT0 == 0.0, float(wT0))
    slopes = M.omega_dr(M.T, r)
    out["terminal_slope_analytic"] = (bool(np.max(slopes) <= 1.0 + L), float(np.max(slopes)))
    fd = (M.omega(M.T, r + probe) - M.omega(M.T, r)) / probe
    excess = float(np.max(fd) - (1.0 + L))
    out["terminal_slope_probe"] = (excess <= 1e-8, excess)
    return out


# --------------------------------------------------------------------------
# rearrangement inequality (d = 2)

@dataclass
class PiecewiseBoundary:
    """Piecewise-linear boundary samples, constant outside the sampled range."""

    x: np.ndarray
    ubar: np.ndarray
    ulow: np.ndarray

    def upper(self, x):
        return np.interp(x, self.x, self.ubar)

    def lower(self, x):
        return np.interp(x, self.x, self.ulow)

    def as_pair(self, h: float) -> BoundaryPair:
        return BoundaryPair(self.x, self.ubar, self.ulow, h, None)


def _gauss_pieces(breaks: np.ndarray, f, order: int = 8) -> float:
    g, w = np.polynomial.legendre.leggauss(order)
    a, b = breaks[:-1], breaks[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    X = mid[:, None] + half[:, None] * g[None, :]
    return float(np.sum(f(X) * w[None, :] * half[:, None]))


def _refine(points: np.ndarray, step: float) -> np.ndarray:
    pts = np.unique(points)
    n = np.maximum(1, np.ceil(np.diff(pts) / step).astype(int))
    pieces = [np.linspace(pts[k], pts[k + 1], n[k] + 1)[:-1] for k in range(pts.size - 1)]
    return np.concatenate(pieces + [pts[-1:]])


def rearrangement_sides(B: PiecewiseBoundary, omega: Modulus, touching: Tuple[float, float],
                        s: float, omega_breaks: Sequence[float] = (2.0,)) -> Tuple[float, float]:
    """Both sides of the rearrangement inequality for ``d = 2``.

    Parameters
    ----------
    B : PiecewiseBoundary
        Upper and lower boundaries; they must be in touching position,
        ``ubar(x*) - ulow(y*) = omega(|x* - y*|)``.
    omega : Modulus
        Affine with slope ``omega.slope`` beyond its last break point.
    touching : (x*, y*)
        Touching pair; ``xi = x* - y*``.
    s : float
    omega_breaks : sequence of float
        Break points of ``omega`` (used as quadrature nodes).

    Returns
    -------
    lhs, rhs : float
    """
    xs, ys = touching
    xi = xs - ys
    m = 0.5 * (xs + ys)
    sgn = 1.0 if xi >= 0 else -1.0
    ax = abs(xi)
    p = _kernel_exponent(s)
    w0 = float(omega(0.0))
    wx = float(omega(ax))

    # centred, oriented copies: touching at (ax/2, -ax/2)
    def up(z):
        return B.upper(m + sgn * z)

    def lo(z):
        return B.lower(m + sgn * z)

    def K(z):
        return (z * z + w0 * w0) ** (-p)

    nodes = sgn * (B.x - m)
    lo_x, hi_x = nodes.min(), nodes.max()
    step = min(0.25 * w0, float(np.min(np.diff(np.sort(nodes)))) if nodes.size > 1 else w0)
    # first integral: breakpoints of both shifted samples
    pts = np.concatenate([nodes - 0.5 * ax, nodes + 0.5 * ax, [0.0]])
    a, b = pts.min(), pts.max()
    grid = _refine(pts, step)
    I1 = _gauss_pieces(grid, lambda z: (wx - up(0.5 * ax + z) + lo(-0.5 * ax + z)) * K(z))
    # tails, where both boundaries are constant
    right = wx - up(hi_x + 1.0) + lo(hi_x + 1.0)
    left = wx - up(lo_x - 1.0) + lo(lo_x - 1.0)
    I1 += right * line_tail_integral(b, w0, p) + left * line_tail_integral(-a, w0, p)
    # second integral: the gap has compact support in the sampled range only if it closes
    pts2 = np.concatenate([nodes, [-0.5 * ax, 0.0, 0.5 * ax]])
    grid2 = _refine(pts2, step)

    def kmin(z):
        return np.minimum(K(z - 0.5 * ax), K(z + 0.5 * ax))

    I2 = _gauss_pieces(grid2, lambda z: (up(z) - lo(z)) * kmin(z))
    gr, gl = up(hi_x + 1.0) - lo(hi_x + 1.0), up(lo_x - 1.0) - lo(lo_x - 1.0)
    hi2, lo2 = grid2[-1], grid2[0]
    I2 += gr * line_tail_integral(hi2 + 0.5 * ax, w0, p) + gl * line_tail_integral(-lo2 + 0.5 * ax, w0, p)
    lhs = I1 + I2

    def om(r):
        return float(omega(abs(r)))

    pos, neg = _branch_integrals(om, ax, tuple(omega_breaks), s, omega.slope)
    rhs = rearrangement_constant(2, s) * (-pos - neg)
    return lhs, rhs


def rearrangement_check(B: PiecewiseBoundary, omega: Modulus, touching: Tuple[float, float],
                        params: FlowParams, tol: float = 1e-6, slack: float = 1e-9,
                        omega_breaks: Sequence[float] = (2.0,)):
    """Verify ``lhs >= rhs - tol`` for a boundary pair in touching position.

    Raises
    ------
    ValueError
        If ``d != 2``, or the pair does not touch the modulus at ``touching``
        or violates it on the sample grid by more than ``slack``.
    """
    if params.d != 2:
        raise ValueError("the rearrangement checker is implemented for d = 2")
    xs, ys = touching
    gap = float(B.upper(xs) - B.lower(ys) - omega(abs(xs - ys)))
    if abs(gap) > slack:
        raise ValueError(f"touching hypothesis violated: ubar(x*) - ulow(y*) - omega = {gap:.3g}")
    D = B.ubar[:, None] - B.ulow[None, :] - omega(np.abs(B.x[:, None] - B.x[None, :]))
    if D.max() > slack:
        raise ValueError(f"pair violates the modulus by {D.max():.3g}")
    lhs, rhs = rearrangement_sides(B, omega, touching, params.s, omega_breaks)
    return lhs, rhs, bool(lhs >= rhs - tol)


def random_touching_pair(rng, omega: Modulus, n: int = 801, half_width: float = 3.0,
                         amplitude: Tuple[float, float] = (0.2, 1.5), max_tries: int = 100):
    """Random piecewise-linear pair that satisfies ``omega`` and touches it.

    ``ubar`` is a random smooth profile; ``ulow(y) = max_k [ubar(x_k) - omega(|x_k - y|)]``
    is the largest lower boundary it allows, so every ``y`` has a touching
    partner ``x_k``.  Pairs with ``ubar < ulow`` somewhere, or whose touching
    separation at the chosen ``y`` exceeds 2, are rejected.

    Parameters
    ----------
    rng : object with ``uniform(lo, hi)`` and ``normal()`` methods
    """
    x = np.linspace(-half_width, half_width, n)
    for _ in range(max_tries):
        modes = 6
        coef = np.array([rng.normal() for _ in range(2 * modes)]) / np.arange(1, 2 * modes + 1)
        phase = 2.0 * np.pi * x / (2.0 * half_width)
        prof = sum(coef[2 * k] * np.cos((k + 1) * phase) + coef[2 * k + 1] * np.sin((k + 1) * phase)
                   for k in range(modes))
        prof *= rng.uniform(*amplitude) / max(np.max(np.abs(prof)), 1e-12)
        # flatten towards the ends so the constant extension is natural
        taper = np.clip((half_width - np.abs(x)) / 0.5, 0.0, 1.0)
        ubar = prof * taper
        W = omega(np.abs(x[:, None] - x[None, :]))
        M = ubar[:, None] - W                       # rows x_k, columns y
        k_star = np.argmax(M, axis=0)
        ulow = M[k_star, np.arange(n)]
        if np.any(ubar < ulow):
            continue
        # prefer a column whose touching partner is a different column
        cand = np.flatnonzero((k_star != np.arange(n)) & (np.abs(x) < 0.8 * half_width))
        if cand.size == 0:
            cand = np.arange(n)
        j = int(cand[min(int(rng.uniform(0.0, 1.0) * cand.size), cand.size - 1)])
        xs, ys = x[k_star[j]], x[j]
        if abs(xs - ys) > 2.0:
            continue
        return PiecewiseBoundary(x, ubar, ulow), (float(xs), float(ys))
    raise RuntimeError("could not draw a touching pair")


# --------------------------------------------------------------------------
# fixed-column estimate on discrete sets

@dataclass
class FixedColumnReport:
    """Cell-wise ordering and column-integral comparison for one offset."""

    ordering_ok: bool
    column_ok: bool
    lhs: float
    rhs: float


def _cell_kernel(z: float, lo: np.ndarray, hi: np.ndarray, s: float) -> np.ndarray:
    # exact integral of (z^2 + t^2)^-(2+s)/2 over [lo, hi] for z != 0
    p = _kernel_exponent(s)
    whole = 2.0 * line_tail_integral(0.0, z, p)

    def F(t):  # integral from -inf to t
        t = np.asarray(t, dtype=float)
        tail = line_tail_integral(np.abs(t), z, p)
        return np.where(t >= 0, whole - tail, tail)

    return F(hi) - F(lo)


def fixed_z_bound_check(E: IndicatorGrid, omega: Modulus, ip: int, im: int, k: int,
                        params: FlowParams, tol: float = 1e-12) -> FixedColumnReport:
    """Discrete fixed-column estimate at touching columns ``ip`` (``+xi/2``) and ``im``.

    Compares the set seen from the top of column ``ip`` and from the bottom
    of the boundary in column ``im``, both shifted ``k`` columns sideways.
    Checks that the signed difference is ``<= 0`` cell by cell and that its
    kernel-weighted column sum is bounded by the same sum with the kernel
    frozen at ``(z^2 + omega(|z|)^2)`` over the window where it can be
    nonzero.
    """
    if k == 0:
        raise ValueError("column offset must be nonzero")
    if params.d != 2:
        raise ValueError("implemented for d = 2")
    s = params.s
    h = E.h
    Bd = extract_boundaries(E)
    top = int(round((Bd.ubar[ip] - E.z_bottom) / h))    # first row above the touching top
    bot = int(round((Bd.ulow[im] - E.z_bottom) / h))    # lowest empty row
    nz = E.nz
    m = np.arange(-nz - abs(top - bot) - 2, nz + abs(top - bot) + 2)
    sig_p = np.where(E.occupied(np.full(m.shape, ip + k), top + m), 1.0, -1.0)
    sig_m = np.where(E.occupied(np.full(m.shape, im + k), bot + m), 1.0, -1.0)
    diff = sig_p - sig_m
    ordering_ok = bool(np.all(diff <= 0))
    z = k * h
    if E.periodic:
        zz = abs(z) % E.width
        zr = min(zz, E.width - zz)
    else:
        zr = abs(z)
    lo_cell = m * h
    hi_cell = lo_cell + h
    lhs = float(np.sum(diff * _cell_kernel(z, lo_cell, hi_cell, s)))
    ipk = (ip + k) % E.nx if E.periodic else ip + k
    imk = (im + k) % E.nx if E.periodic else im + k
    a = Bd.ulow[ipk] - Bd.ubar[ip]
    b = Bd.ubar[imk] - Bd.ulow[im]
    inside = (lo_cell >= a - 1e-12) & (hi_cell <= b + 1e-12)
    frozen = (z * z + float(omega(zr)) ** 2) ** (-_kernel_exponent(s))
    rhs = float(np.sum(diff[inside]) * h * frozen)
    return FixedColumnReport(ordering_ok, bool(lhs <= rhs + tol), lhs, rhs)
