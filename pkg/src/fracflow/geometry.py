"""Discrete sets on an ``x``-periodic, ``x_d``-truncated lattice.

A set is stored as a boolean occupancy array ``occ[j, i]`` with row ``j = 0``
the lowest.  The window is centred at the origin: cell ``(i, j)`` has centre
``((i + 1/2 - nx/2) h, (j + 1/2 - nz/2) h)``.  Outside the window the set is
described by an affine tail ``{x_d < a x + b}``; ``b = -inf`` is the empty
tail of a bounded set and ``b = +inf`` the full one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Tuple

import numpy as np

GRID_MAGIC = "fracflow-grid"
GRID_VERSION = "v1"


@dataclass
class IndicatorGrid:
    """Occupancy of a set on an ``nz x nx`` window with an affine tail.

    Parameters
    ----------
    occupancy : (nz, nx) bool array
        ``occupancy[j, i]`` is true when cell ``(i, j)`` belongs to the set.
    h : float
        Cell size.
    tail : (float, float)
        ``(a, b)`` such that the set is ``{x_d < a x + b}`` outside the window.
    periodic : bool
        Whether the horizontal direction wraps around.
    """

    occupancy: np.ndarray
    h: float
    tail: Tuple[float, float] = (0.0, 0.0)
    periodic: bool = True

    def __post_init__(self):
        occ = np.asarray(self.occupancy)
        if occ.ndim != 2:
            raise ValueError("occupancy must be a 2-d array (nz, nx)")
        self.occupancy = occ.astype(bool)
        if not self.h > 0:
            raise ValueError("h must be positive")
        a, b = (float(v) for v in self.tail)
        if not np.isfinite(a) or np.isnan(b):
            raise ValueError("tail slope must be finite and the offset not NaN")
        self.tail = (a, b)

    @property
    def nz(self) -> int:
        return self.occupancy.shape[0]

    @property
    def nx(self) -> int:
        return self.occupancy.shape[1]

    @property
    def width(self) -> float:
        return self.nx * self.h

    @property
    def x(self) -> np.ndarray:
        """Column centres."""
        return (np.arange(self.nx) + 0.5 - 0.5 * self.nx) * self.h

    @property
    def z(self) -> np.ndarray:
        """Row centres."""
        return (np.arange(self.nz) + 0.5 - 0.5 * self.nz) * self.h

    @property
    def z_bottom(self) -> float:
        return -0.5 * self.nz * self.h

    @property
    def z_top(self) -> float:
        return 0.5 * self.nz * self.h

    @classmethod
    def from_predicate(cls, pred: Callable[[np.ndarray, np.ndarray], np.ndarray],
                       nx: int, nz: int, h: float, tail=(0.0, 0.0),
                       periodic: bool = True) -> "IndicatorGrid":
        """Sample ``pred(x, x_d)`` at the cell centres."""
        x = (np.arange(nx) + 0.5 - 0.5 * nx) * h
        z = (np.arange(nz) + 0.5 - 0.5 * nz) * h
        X, Zd = np.meshgrid(x, z)
        return cls(np.asarray(pred(X, Zd), dtype=bool), h, tail, periodic)

    def tail_occupied(self, x, z) -> np.ndarray:
        a, b = self.tail
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        if b == np.inf:
            return np.ones(np.broadcast(x, z).shape, dtype=bool)
        if b == -np.inf:
            return np.zeros(np.broadcast(x, z).shape, dtype=bool)
        return z < a * x + b

    def occupied(self, i, j) -> np.ndarray:
        """Occupancy of (possibly out-of-window) lattice cells ``(i, j)``."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        i, j = np.broadcast_arrays(i, j)
        if self.periodic:
            i = np.mod(i, self.nx)
        inside = (j >= 0) & (j < self.nz) & (i >= 0) & (i < self.nx)
        out = np.empty(i.shape, dtype=bool)
        out[inside] = self.occupancy[j[inside], i[inside]]
        xo = (i[~inside] + 0.5 - 0.5 * self.nx) * self.h
        zo = (j[~inside] + 0.5 - 0.5 * self.nz) * self.h
        out[~inside] = self.tail_occupied(xo, zo)
        return out

    def signed(self) -> np.ndarray:
        """Signed indicator ``+1`` in the set, ``-1`` outside."""
        return np.where(self.occupancy, 1.0, -1.0)

    def complement(self) -> "IndicatorGrid":
        """Complement of a set whose tail is empty or full."""
        a, b = self.tail
        if np.isfinite(b):
            raise ValueError("the complement of a subgraph tail is not a subgraph")
        return IndicatorGrid(~self.occupancy, self.h, (a, -b), self.periodic)

    def reflected(self) -> "IndicatorGrid":
        """Point reflection ``E -> -E`` of a window with an empty or full tail."""
        if np.isfinite(self.tail[1]):
            raise ValueError("point reflection needs an empty or full tail")
        return IndicatorGrid(self.occupancy[::-1, ::-1].copy(), self.h, self.tail,
                             self.periodic)

    # -- text format -----------------------------------------------------
    def to_text(self) -> str:
        a, b = self.tail
        lines = [f"{GRID_MAGIC} {GRID_VERSION} {self.nx} {self.nz} {float(self.h)!r} {float(a)!r} {float(b)!r}"]
        for row in self.occupancy:
            lines.append("".join("1" if v else "0" for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, periodic: bool = True) -> "IndicatorGrid":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty grid file")
        head = lines[0].split()
        if len(head) != 7 or head[0] != GRID_MAGIC or head[1] != GRID_VERSION:
            raise ValueError(f"bad grid header: {lines[0]!r}")
        nx, nz = int(head[2]), int(head[3])
        h, a, b = float(head[4]), float(head[5]), float(head[6])
        rows = lines[1:]
        if len(rows) != nz:
            raise ValueError(f"expected {nz} rows, found {len(rows)}")
        occ = np.zeros((nz, nx), dtype=bool)
        for j, row in enumerate(rows):
            row = row.strip()
            if len(row) != nx or set(row) - {"0", "1"}:
                raise ValueError(f"row {j} must be {nx} characters of 0/1")
            occ[j] = np.frombuffer(row.encode(), dtype=np.uint8) == ord("1")
        return cls(occ, h, (a, b), periodic)

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path, periodic: bool = True) -> "IndicatorGrid":
        with open(path, encoding="ascii") as fh:
            return cls.from_text(fh.read(), periodic)


@dataclass
class BoundaryPair:
    """Column samples of the upper and lower boundaries of a set.

    ``ubar[i]`` is the top edge of the highest occupied cell of column ``i``
    and ``ulow[i]`` the bottom edge of the lowest empty cell.
    """

    x: np.ndarray
    ubar: np.ndarray
    ulow: np.ndarray
    h: float
    period: Optional[float] = None

    def gap(self) -> np.ndarray:
        return self.ubar - self.ulow

    def distances(self) -> np.ndarray:
        """Pairwise horizontal distances, minimum image when periodic."""
        d = np.abs(self.x[:, None] - self.x[None, :])
        if self.period is not None:
            d = np.minimum(d, self.period - d)
        return d


@dataclass
class Modulus:
    """A modulus of continuity ``r -> omega(r)`` with its declared slope bound."""

    func: Callable[[np.ndarray], np.ndarray]
    slope: float
    name: str = field(default="omega")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return np.asarray(self.func(r), dtype=float) * np.ones_like(r)

    @classmethod
    def affine(cls, R: float, L: float) -> "Modulus":
        return cls(lambda r: R + L * r, float(L), f"{R}+{L}r")

    @classmethod
    def constant(cls, value: float) -> "Modulus":
        return cls(lambda r: np.full(np.shape(r), float(value)), 0.0, f"{value}")


def extract_boundaries(E: IndicatorGrid) -> BoundaryPair:
    """Upper and lower boundaries of ``E`` column by column.

    Raises
    ------
    ValueError
        If a column (window plus tail) is entirely occupied or entirely empty,
        or its boundary escapes to infinity.
    """
    occ = E.occupancy
    h = E.h
    x = E.x
    below = E.tail_occupied(x, np.full(E.nx, E.z_bottom - 0.5 * h))
    above = E.tail_occupied(x, np.full(E.nx, E.z_top + 0.5 * h))
    ubar = np.empty(E.nx)
    ulow = np.empty(E.nx)
    j = np.arange(E.nz)
    for i in range(E.nx):
        col = occ[:, i]
        if above[i]:
            raise ValueError(f"column {i}: set is unbounded above")
        if not below[i]:
            if not col.any():
                raise ValueError(f"column {i} is entirely empty")
            raise ValueError(f"column {i}: complement is unbounded below")
        ubar[i] = E.z_bottom + (j[col].max() + 1) * h if col.any() else E.z_bottom
        ulow[i] = E.z_bottom + j[~col].min() * h if (~col).any() else E.z_top
    return BoundaryPair(x, ubar, ulow, h, E.width if E.periodic else None)


def has_modulus_boundary(B: BoundaryPair, omega: Modulus, slack: Optional[float] = None):
    """Check ``ubar(x) - ulow(y) <= omega(|x-y|) + slack`` over all column pairs.

    Returns
    -------
    ok : bool
    witness : (float, float)
        The pair ``(x, y)`` with the largest excess.
    excess : float
        ``max(ubar(x) - ulow(y) - omega(|x-y|))`` before subtracting the slack.
    """
    if slack is None:
        slack = (1.0 + omega.slope) * B.h
    D = B.ubar[:, None] - B.ulow[None, :] - omega(B.distances())
    k = int(np.argmax(D))
    ix, iy = np.unravel_index(k, D.shape)
    excess = float(D[ix, iy])
    return excess <= slack, (float(B.x[ix]), float(B.x[iy])), excess


def default_translates(E: IndicatorGrid, omega: Modulus, stencil: int = 2):
    """Lattice translates on and just above the curve ``z_d = omega(|z|)``."""
    n = E.nx
    if E.periodic:
        di = np.arange(-(n // 2) + (1 - n % 2), n // 2 + 1)
    else:
        di = np.arange(-(n - 1), n)
    base = np.ceil(omega(np.abs(di) * E.h) / E.h - 1e-9).astype(np.int64)
    out = []
    for k in range(stencil + 1):
        out.extend(zip(di.tolist(), (base + k).tolist()))
    return out


def has_modulus_set(E: IndicatorGrid, omega: Modulus,
                    samples: Optional[Iterable[Tuple[int, int]]] = None) -> bool:
    """Check ``E - (z, z_d) subset of E`` cell-wise for lattice translates.

    ``samples`` are integer cell offsets ``(di, dj)``; each must satisfy
    ``dj h >= omega(|di| h)``.  Cells that leave the window are resolved by the
    tail descriptor (or by wrap-around for periodic grids).
    """
    if samples is None:
        samples = default_translates(E, omega)
    jj, ii = np.nonzero(E.occupancy)
    for di, dj in samples:
        r = abs(di) * E.h
        if E.periodic:
            r = min(r, E.width - r)
        if dj * E.h < omega(r) - 1e-12:
            raise ValueError(f"translate ({di}, {dj}) lies below the modulus curve")
        if not np.all(E.occupied(ii - di, jj - dj)):
            return False
        # occupied tail cells below the window shifted into the window
        if np.isfinite(E.tail[1]) and dj < 0:
            rows = np.arange(dj, 0)
            I, J = np.meshgrid(np.arange(E.nx), rows)
            src = E.occupied(I, J)
            if not np.all(E.occupied(I[src] - di, J[src] - dj)):
                return False
    return True


def discrete_lipschitz(u: np.ndarray, dx: float, periodic: bool = True) -> float:
    """Largest slope between neighbouring samples."""
    du = np.diff(np.append(u, u[0])) if periodic else np.diff(u)
    return float(np.max(np.abs(du)) / dx) if du.size else 0.0


def sandwich_to_modulus(u0: np.ndarray, R: float, L: float, dx: float,
                        periodic: bool = True, tol: float = 1e-12) -> Modulus:
    """Modulus ``R + L r`` of a set squeezed between ``u0 -/+ R/2``.

    Raises
    ------
    ValueError
        If the discrete Lipschitz constant of ``u0`` exceeds ``L``.
    """
    if R < 0:
        raise ValueError("R must be non-negative")
    lip = discrete_lipschitz(np.asarray(u0, dtype=float), dx, periodic)
    if lip > L + tol:
        raise ValueError(f"u0 has discrete Lipschitz constant {lip:.6g} > L = {L}")
    return Modulus.affine(R, L)


def modulus_to_sandwich(ulow: np.ndarray, x: np.ndarray, R: float, L: float,
                        period: Optional[float] = None) -> np.ndarray:
    """Lipschitz centre line ``u(x) = R/2 + min_y [ulow(y) + L |x - y|]``."""
    d = np.abs(x[:, None] - x[None, :])
    if period is not None:
        d = np.minimum(d, period - d)
    return 0.5 * R + np.min(ulow[None, :] + L * d, axis=1)
