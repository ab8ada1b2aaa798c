"""Singular kernel weights, the graph nonlinearity and far-field completions.

Everything here is a pure function of its arguments.  The kernel of the
fractional curvature operator in ``R^d`` is ``|Z|^-(d+s)``; the exponent and
the normalisation ``s(1-s)`` are always derived from :class:`FlowParams`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import special


@dataclass(frozen=True)
class FlowParams:
    """Ambient dimension ``d``, fractional order ``s`` and Lipschitz scale ``L``."""

    d: int = 2
    s: float = 0.5
    L: float = 0.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"d must be an integer >= 2, got {self.d!r}")
        if not (0.0 < self.s < 1.0):
            raise ValueError(f"s must lie in the open interval (0, 1), got {self.s!r}")
        if not (self.L >= 0.0) or not np.isfinite(self.L):
            raise ValueError(f"L must be a finite number >= 0, got {self.L!r}")

    @property
    def exponent(self) -> float:
        """Kernel exponent ``d + s``."""
        return self.d + self.s

    @property
    def normalization(self) -> float:
        """Curvature prefactor ``s(1-s)``."""
        return self.s * (1.0 - self.s)


@dataclass(frozen=True)
class QuadratureConfig:
    """Discretisation controls for principal-value lattice sums.

    Parameters
    ----------
    pv_cutoff : float, optional
        Radius ``eps`` inside which samples are paired antipodally.  ``None``
        means two grid spacings.
    truncation_radius : float, optional
        Radius ``R_max`` beyond which the set is replaced by its tail
        descriptor.  ``None`` sums every lattice cell of the window exactly
        (periodic images included) and completes the rows outside the window
        in closed form.
    inner_refinement : int
        Sub-cells per axis used to integrate the kernel over cells that come
        within ``4 eps`` of the singularity.
    tail_correction : bool
        Whether the region outside the summed cells is added back analytically.
    """

    pv_cutoff: Optional[float] = None
    truncation_radius: Optional[float] = None
    inner_refinement: int = 8
    tail_correction: bool = True

    def __post_init__(self):
        if self.inner_refinement < 1 or int(self.inner_refinement) != self.inner_refinement:
            raise ValueError("inner_refinement must be an integer >= 1")
        if self.pv_cutoff is not None and not self.pv_cutoff > 0:
            raise ValueError("pv_cutoff must be positive")
        if self.truncation_radius is not None and not self.truncation_radius > 0:
            raise ValueError("truncation_radius must be positive")
        if (self.pv_cutoff is not None and self.truncation_radius is not None
                and not self.pv_cutoff < self.truncation_radius):
            raise ValueError("pv_cutoff must be smaller than truncation_radius")

    def cutoff(self, h: float) -> float:
        return 2.0 * h if self.pv_cutoff is None else float(self.pv_cutoff)


def kernel_weight(r, p):
    """Return ``r**(-p)``.

    The singular point is never handled here; callers deal with it through
    principal-value pairing.

    Raises
    ------
    ValueError
        If any ``r <= 0``.
    """
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 0)):
        raise ValueError("kernel_weight requires r > 0")
    out = r ** (-float(p))
    return float(out) if out.ndim == 0 else out


def sphere_measure(n: int) -> float:
    """Surface measure of the unit sphere in ``R^n`` (2 for ``n = 1``)."""
    return 2.0 * np.pi ** (n / 2.0) / special.gamma(n / 2.0)


def radial_tail_integral(R: float, n: int, s: float) -> float:
    """Closed form of the integral of ``|z|^-(n+s)`` over ``|z| > R`` in ``R^n``."""
    if not R > 0:
        raise ValueError("R must be positive")
    return sphere_measure(n) * R ** (-s) / s


def line_tail_integral(A, y, a: float):
    """Integral of ``(t^2 + y^2)^-a`` over ``t > A`` for ``A >= 0``, ``a > 1/2``.

    Uses the incomplete beta function after the substitution
    ``w = y^2 / (t^2 + y^2)``.
    """
    A = np.asarray(A, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    A, y = np.broadcast_arrays(A, y)
    out = np.empty(A.shape)
    flat = y == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out[flat] = A[flat] ** (1.0 - 2.0 * a) / (2.0 * a - 1.0)
        yy = y[~flat]
        w0 = yy ** 2 / (A[~flat] ** 2 + yy ** 2)
        out[~flat] = (0.5 * yy ** (1.0 - 2.0 * a) * special.beta(a - 0.5, 0.5)
                      * special.betainc(a - 0.5, 0.5, w0))
    return float(out) if out.ndim == 0 else out


def graph_flux(q, params: FlowParams):
    """``G(q) = q * Lambda(|q|)``, the odd primitive of ``(1+t^2)^-(d+s)/2`` on ``[-q, q]``.

    This is the combination that actually enters the graph equation; it is
    smooth through ``q = 0``.
    """
    q = np.asarray(q, dtype=float)
    a = 0.5 * params.exponent
    w = q * q / (1.0 + q * q)
    out = np.sign(q) * special.beta(0.5, a - 0.5) * special.betainc(0.5, a - 0.5, w)
    return float(out) if out.ndim == 0 else out


def graph_flux_derivative(q, params: FlowParams):
    """Derivative ``G'(q) = 2 (1+q^2)^-(d+s)/2``."""
    q = np.asarray(q, dtype=float)
    return 2.0 * (1.0 + q * q) ** (-0.5 * params.exponent)


def lambda_nonlinearity(Lval, params: FlowParams):
    """The graph nonlinearity ``Lambda(L) = (1/L) int_{-L}^{L} (1+z^2)^-(d+s)/2 dz``.

    Evaluated in closed form through the regularised incomplete beta
    function; the removable singularity at ``L = 0`` takes the value 2.
    """
    L = np.asarray(Lval, dtype=float)
    if np.any(L < 0):
        raise ValueError("lambda_nonlinearity requires Lval >= 0")
    out = np.full(L.shape, 2.0)
    big = L > 1e-6
    out[big] = graph_flux(L[big], params) / L[big]
    small = ~big & (L > 0)
    # series 2 - (d+s) L^2 / 3 keeps full precision near the origin
    out[small] = 2.0 - params.exponent * L[small] ** 2 / 3.0
    return float(out) if out.ndim == 0 else out


def pv_sum(offsets, values, weights, eps: float, atol: float = 1e-12) -> float:
    """Principal-value sum of ``values * weights`` over lattice offsets.

    Samples with ``|Z| < eps`` are matched with their antipodes and added in
    pairs, so that a configuration that is odd about the evaluation point
    cancels exactly in that region.  Outside ``eps`` the terms are summed
    plainly.

    Parameters
    ----------
    offsets : (n, k) array
        Displacements ``Z`` from the evaluation point.
    values : (n,) array
        Signed indicator (or any signed density) at ``X + Z``.
    weights : (n,) array
        Quadrature weights of the kernel.
    eps : float
        Pairing radius.

    Raises
    ------
    ValueError
        If the inner sample set is not symmetric under ``Z -> -Z`` with equal
        weights.
    """
    Z = np.atleast_2d(np.asarray(offsets, dtype=float))
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    r = np.sqrt(np.sum(Z * Z, axis=1))
    inner = np.flatnonzero(r < eps)
    outer = r >= eps
    total = float(np.sum(v[outer] * w[outer]))
    if inner.size == 0:
        return total
    Zi = Z[inner]
    scale = max(np.max(np.abs(Zi)), 1e-300)
    keys = {tuple(np.round(z / scale / atol ** 0.5).astype(np.int64)): k
            for k, z in zip(inner, Zi)}
    used = set()
    paired = 0.0
    for k, z in zip(inner, Zi):
        if k in used:
            continue
        j = keys.get(tuple(np.round(-z / scale / atol ** 0.5).astype(np.int64)))
        if j is None or j == k or abs(w[j] - w[k]) > atol * max(abs(w[k]), 1.0):
            raise ValueError("inner sample set is not symmetric under Z -> -Z")
        used.add(k)
        used.add(j)
        paired += v[k] * w[k] + v[j] * w[j]
    return total + paired


# --------------------------------------------------------------------------
# planar lattice sums
#
# Tables below are in lattice units (cell size 1); a physical sum over cells
# of size h picks up the factor h**(-s).  Offsets run from the evaluation
# point to cell centres, Z = (di - ox, dj - oz), with the sub-cell shift
# (ox, oz) fixed per table.

# number of periodic images summed explicitly on each side
_IMAGES = 12
# terms of a half row summed explicitly before the integral remainder
_ROW_TERMS = 64
# rows summed explicitly before the Hurwitz-zeta remainder
_ROWS = 48


def _half_exponent(s: float) -> float:
    return 0.5 * (2.0 + s)


def half_row_mass(A, y, s: float):
    """Sum of ``((A+k)^2 + y^2)^-a`` over ``k = 0, 1, 2, ...`` (``a = 1 + s/2``)."""
    a = _half_exponent(s)
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    k = np.arange(_ROW_TERMS, dtype=float)
    A_, y_ = np.broadcast_arrays(A, y)
    terms = ((A_[..., None] + k) ** 2 + y_[..., None] ** 2) ** (-a)
    head = terms.sum(axis=-1)
    # Euler-Maclaurin remainder: int_t^inf f + f(t)/2 - f'(t)/12, t the first omitted point
    t = A_ + _ROW_TERMS
    r2 = t * t + y_ * y_
    tail = line_tail_integral(t, y_, a) + 0.5 * r2 ** (-a) + a * t * r2 ** (-a - 1.0) / 6.0
    return head + tail


def row_mass(y, ox: float, s: float):
    """Full lattice row sum of ``((i-ox)^2 + y^2)^-a`` over all integers ``i``."""
    ox = float(ox) % 1.0
    if ox == 0.0:
        return half_row_mass(1.0, y, s) + half_row_mass(0.0, y, s)
    return half_row_mass(1.0 - ox, y, s) + half_row_mass(ox, y, s)


def rows_mass(y0, ox: float, s: float):
    """Sum of :func:`row_mass` over rows ``y0, y0+1, ...`` with ``y0 > 0``."""
    a = _half_exponent(s)
    y0 = np.asarray(y0, dtype=float)
    j = np.arange(_ROWS, dtype=float)
    head = row_mass(y0[..., None] + j, ox, s).sum(axis=-1)
    # far rows equal their continuum line integral up to e^{-2 pi y}
    c = np.sqrt(np.pi) * special.gamma(a - 0.5) / special.gamma(a)
    tail = c * special.zeta(2.0 * a - 1.0, y0 + _ROWS)
    return head + tail


def _segment_integral(x, z1, z2, a: float):
    """``int_{z1}^{z2} (x^2 + t^2)^-a dt`` for ``z1 < z2`` from the line tails."""
    x, z1, z2 = np.broadcast_arrays(np.asarray(x, float), np.asarray(z1, float),
                                    np.asarray(z2, float))
    out = np.empty(x.shape)
    up = z1 >= 0
    down = z2 <= 0
    mid = ~(up | down)
    out[up] = line_tail_integral(z1[up], x[up], a) - line_tail_integral(z2[up], x[up], a)
    out[down] = line_tail_integral(-z2[down], x[down], a) - line_tail_integral(-z1[down], x[down], a)
    if mid.any():
        full = line_tail_integral(np.zeros(int(mid.sum())), x[mid], a)
        out[mid] = (2.0 * full - line_tail_integral(z2[mid], x[mid], a)
                    - line_tail_integral(-z1[mid], x[mid], a))
    return out


_GAUSS = np.polynomial.legendre.leggauss(4)


def _subcell_average(p, q, s: float, nsub: int):
    """Average of the kernel over unit cells centred at ``(p, q)``.

    The vertical integral is exact; horizontally each cell is split into
    ``nsub`` strips with four Gauss nodes apiece.  Cells must stay away from
    the origin.
    """
    a = _half_exponent(s)
    g, w = _GAUSS
    edges = np.arange(nsub) / nsub - 0.5
    nodes = (edges[:, None] + 0.5 * (g[None, :] + 1.0) / nsub).ravel()
    weights = np.tile(w, nsub) / (2.0 * nsub)
    p = np.asarray(p, float)[..., None]
    q = np.asarray(q, float)[..., None]
    G = _segment_integral(p + nodes, q - 0.5, q + 0.5, a)
    return np.sum(G * weights, axis=-1)


@lru_cache(maxsize=64)
def kernel_table(nx: int, nz: int, ox: float, oz: float, s: float, periodic: bool,
                 refine: int = 9, nsub: int = 8, box: int = -1, radius: float = np.inf):
    """Lattice weights ``W[dj + nz - 1, col]`` of the kernel.

    Parameters
    ----------
    nx, nz : int
        Window size in cells.
    ox, oz : float
        Sub-cell position of the evaluation point relative to the cell centre
        lattice.
    s : float
        Fractional order.
    periodic : bool
        If true, the column index is ``di mod nx`` and all horizontal images
        are summed; otherwise ``col = di + nx - 1``.
    refine : int
        Cells with ``max(|Z_1|, |Z_2|) <= refine + 1/2`` get the sub-cell average.
    nsub : int
        Horizontal strips per cell for the refined weights.
    box : int
        Offsets with ``max(|Z_1|, |Z_2|) <= box + 1/2`` are set to zero (the caller
        treats that neighbourhood separately).  ``-1`` disables this.
    radius : float
        Offsets with ``|Z| > radius`` (lattice units) are set to zero.

    Returns
    -------
    ndarray
        Read-only weight table.
    """
    a = _half_exponent(s)
    dj = np.arange(-(nz - 1), nz, dtype=float)[:, None]
    if periodic:
        di = np.arange(nx, dtype=float)[None, :]
        di = np.where(di > nx // 2, di - nx, di)
    else:
        di = np.arange(-(nx - 1), nx, dtype=float)[None, :]
    p = di - ox
    q = dj - oz
    P, Q = np.broadcast_arrays(p, q)
    with np.errstate(divide="ignore"):
        # the Z = 0 entry of a node-centred table is overwritten just below
        pt = (P * P + Q * Q) ** (-a)
        W = pt.copy() if radius == np.inf else np.zeros(P.shape)
    # masks are symmetric in Z so antipodal cells are always treated alike
    near = (np.abs(P) <= refine + 0.5) & (np.abs(Q) <= refine + 0.5)
    if radius == np.inf:
        W[near] = _subcell_average(P[near], Q[near], s, nsub)
    else:
        inside = P * P + Q * Q <= radius * radius
        W[inside] = pt[inside]
        sel = inside & near
        W[sel] = _subcell_average(P[sel], Q[sel], s, nsub)
        if periodic:
            k = 1
            while (k - 0.5) * nx <= radius + 1.0:
                for Pk in (P + k * nx, P - k * nx):
                    r2 = Pk * Pk + Q * Q
                    img = r2 <= radius * radius
                    W[img] += r2[img] ** (-a)
                k += 1
    if periodic and radius == np.inf:
        for k in range(1, _IMAGES + 1):
            W += ((P + k * nx) ** 2 + Q * Q) ** (-a) + ((P - k * nx) ** 2 + Q * Q) ** (-a)
        lo = _IMAGES * nx + 0.5 * nx
        W += (line_tail_integral(lo + P, Q, a) + line_tail_integral(lo - P, Q, a)) / nx
    if box >= 0:
        W[(np.abs(P) <= box + 0.5) & (np.abs(Q) <= box + 0.5)] = 0.0
    W.setflags(write=False)
    return W
