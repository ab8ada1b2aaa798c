"""Command-line interface: ``fracflow <subcommand> [flags]``.

Exit codes: 0 when every reported criterion passes, 1 when one fails and 2
for configuration errors.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from typing import List, Optional

import numpy as np

from . import config as cfgmod
from .config import CONFIG_KEYS, ConfigError, ExperimentConfig
from .curvature import boundary_faces, curvature_sweep_csv, fractional_perimeter
from .experiments import list_experiments, run_experiment
from .flow import (CFLViolation, GraphState, LevelSetState, MarginError, ball_state, boundary_gap,
                   boundary_lipschitz, clamped_field, graph_cfl, graph_flow_step, levelset_cfl,
                   levelset_flow_step, sandwich_state, signed_distance_from_mask,
                   two_hyperplane_state)
from .geometry import BoundaryPair, IndicatorGrid, Modulus, discrete_lipschitz, has_modulus_boundary
from .kernel import FlowParams, QuadratureConfig
from .modulus import modulus_sweep
from .prng import Xorshift64Star

FLOW_CSV_HEADER = "t,gap,lipschitz,modulus_pass"


def _params(a) -> FlowParams:
    try:
        return FlowParams(a.d, a.s, getattr(a, "L", 0.0))
    except ValueError as exc:
        text = str(exc)
        key = text.split()[0]
        raise ConfigError(key, getattr(a, key, None), text) from None


def _write(path: Optional[str], body: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(body)
        return
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(body)


def _shape_grid(shape: str, n: int, h: float, radius: float) -> IndicatorGrid:
    if shape == "half-space":
        return IndicatorGrid.from_predicate(lambda x, z: z < 0, n, n, h, (0.0, 0.0), True)
    if shape == "disk":
        return IndicatorGrid.from_predicate(lambda x, z: x * x + z * z < radius * radius, n, n, h,
                                            (0.0, -math.inf), False)
    raise ConfigError("shape", shape, "half-space or disk")


def _load_grid(a) -> IndicatorGrid:
    if a.grid:
        return IndicatorGrid.load(a.grid)
    return _shape_grid(a.shape, a.n, a.h, a.radius)


# --------------------------------------------------------------------------
# subcommands

def cmd_curvature(a) -> int:
    P = _params(a)
    E = _load_grid(a)
    q = QuadratureConfig(a.pv_cutoff, a.truncation_radius, a.inner_refinement)
    pts = boundary_faces(E)
    if a.max_points and len(pts) > a.max_points:
        pts = pts[np.linspace(0, len(pts) - 1, a.max_points).astype(int)]
    _write(a.out, curvature_sweep_csv(E, pts, P, q))
    return 0


def cmd_perimeter(a) -> int:
    P = _params(a)
    E = _load_grid(a)
    _write(a.out, f"perimeter,s,d,h\n{float(fractional_perimeter(E, P))!r},{P.s!r},{P.d},{E.h!r}\n")
    return 0


def _graph_init(name: str, nx: int):
    x = 2.0 * math.pi * np.arange(nx) / nx
    if name == "cos":
        return 0.5 * np.cos(x)
    if name == "flat":
        return np.zeros(nx)
    if name == "zigzag":
        return 0.5 * np.abs(((x / math.pi) % 2.0) - 1.0)
    if os.path.exists(name):
        u = np.loadtxt(name, dtype=float, ndmin=1)
        if u.size != nx:
            raise ConfigError("nx", nx, f"the {u.size} samples of {name}")
        return u
    raise ConfigError("init", name, "cos, flat, zigzag or a file with one sample per line")


def _graph_snapshot(S: GraphState, nz: int) -> IndicatorGrid:
    h = S.dx
    z = (np.arange(nz) + 0.5 - 0.5 * nz) * h
    return IndicatorGrid(z[:, None] < S.u[None, :], h, (0.0, 0.0), True)


def cmd_graph_flow(a) -> int:
    P = _params(a)
    h = a.h if a.h else 2.0 * math.pi / a.nx
    u0 = _graph_init(a.init, a.nx)
    S = GraphState(0.0, u0, h, P)
    omega = Modulus.affine(0.0, S.lipschitz)
    dt = a.dt if a.dt else graph_cfl(S)
    lines = [FLOW_CSV_HEADER]
    snaps = []

    def record(S):
        B = BoundaryPair(S.x, S.u, S.u, h, S.period)
        ok = has_modulus_boundary(B, omega, 1e-9)[0]
        lines.append(f"{float(S.t)!r},0.0,{float(S.lipschitz)!r},{'true' if ok else 'false'}")
        if a.snapshots:
            snaps.append((S.t, _graph_snapshot(S, a.nz)))

    record(S)
    k = 0
    try:
        while S.t < a.t_end - 1e-14:
            S = graph_flow_step(S, min(dt, a.t_end - S.t))
            k += 1
            if k % a.record_every == 0:
                record(S)
    except CFLViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if k % a.record_every:
        record(S)
    _write(a.out, "\n".join(lines) + "\n")
    _save_snapshots(a.snapshots, snaps)
    return 0 if all(l.endswith("true") for l in lines[1:]) else 1


def _save_snapshots(directory: Optional[str], snaps) -> None:
    if not directory:
        return
    os.makedirs(directory, exist_ok=True)
    for k, (t, E) in enumerate(snaps):
        E.save(os.path.join(directory, f"snapshot_{k:05d}.grid"))


def _levelset_init(a, P: FlowParams) -> LevelSetState:
    h = a.h if a.h else 4.0 / a.nz
    name = a.init
    if name == "half-space":
        z = (np.arange(a.nz) + 0.5 - 0.5 * a.nz) * h
        U = np.repeat(clamped_field(z)[:, None], a.nx, axis=1)
        return LevelSetState(0.0, U, h, P)
    if name == "ball":
        return ball_state(0.25 * a.nz * h, a.nz, 0.5 * a.nz * h, P)
    if name == "two-hyperplane":
        return two_hyperplane_state(P, h, a.nx, 0.5 * a.nz * h)
    if name == "sandwich":
        return sandwich_state(P, a.nz, 0.5 * a.nz * h, Xorshift64Star(a.seed))
    if os.path.exists(name):
        E = IndicatorGrid.load(name)
        U = clamped_field(signed_distance_from_mask(E.occupancy, E.h, E.periodic))
        below = -1.0 if E.tail_occupied(0.0, E.z_bottom - E.h) else 1.0
        above = -1.0 if E.tail_occupied(0.0, E.z_top + E.h) else 1.0
        return LevelSetState(0.0, U, E.h, P, E.periodic, (above, below, 1.0))
    raise ConfigError("init", name, "half-space, ball, two-hyperplane, sandwich or a grid file")


def _levelset_row(S: LevelSetState, L: float) -> str:
    try:
        gap, B = boundary_gap(S)
        lip = boundary_lipschitz(B)
        ok = has_modulus_boundary(B, Modulus.affine(0.0, 1.0 + L), 3.0 * S.h)[0] and gap <= S.h
    except ValueError:
        # no lower and upper boundary per column (a bounded set): nothing to report
        gap, lip, ok = math.inf, math.inf, False
    return f"{float(S.t)!r},{float(gap)!r},{float(lip)!r},{'true' if ok else 'false'}"


def cmd_levelset_flow(a) -> int:
    P = _params(a)
    S = _levelset_init(a, P)
    dt = a.dt if a.dt else levelset_cfl(S)
    lines = [FLOW_CSV_HEADER, _levelset_row(S, P.L)]
    snaps = [(S.t, S.sublevel_set())] if a.snapshots else []
    k = 0
    try:
        while S.t < a.t_end - 1e-14:
            S = levelset_flow_step(S, min(dt, a.t_end - S.t))
            k += 1
            if k % a.record_every == 0:
                lines.append(_levelset_row(S, P.L))
                if a.snapshots:
                    snaps.append((S.t, S.sublevel_set()))
    except CFLViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MarginError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if k % a.record_every:
        lines.append(_levelset_row(S, P.L))
        if a.snapshots:
            snaps.append((S.t, S.sublevel_set()))
    _write(a.out, "\n".join(lines) + "\n")
    _save_snapshots(a.snapshots, snaps)
    return 0


def cmd_verify_modulus(a) -> int:
    P = _params(a)
    try:
        res = modulus_sweep(P, a.c, a.grid_t, a.grid_xi)
    except ValueError as exc:
        raise ConfigError("c", a.c, str(exc)) from None
    _write(a.out, res.to_csv())
    print(res.summary())
    return 0 if res.all_pass else 1


def cmd_experiment(a) -> int:
    cfg = cfgmod.load(a.config) if a.config else ExperimentConfig()
    over = {k: getattr(a, k, None) for k in CONFIG_KEYS if k != "experiment"}
    cfg = cfg.with_overrides(experiment=a.name, **over)
    if a.dump_config:
        _write(a.dump_config, cfg.dumps())
    report = run_experiment(cfg)
    for r in report.rows:
        print(r.line())
    for k, v in report.timings.items():
        print(f"time {k} {v:.2f}s")
    return 0 if report.all_pass else 1


def cmd_list(a) -> int:
    for name, desc, anchor in list_experiments():
        print(f"{name}\t{desc}\t[{anchor}]")
    return 0


# --------------------------------------------------------------------------
# parser

def _common(p, L: bool = True):
    p.add_argument("--d", type=int, default=2, help="ambient dimension (grids are planar: 2)")
    p.add_argument("--s", type=float, default=0.5, help="fractional order, 0 < s < 1")
    if L:
        p.add_argument("--L", type=float, default=0.0, help="Lipschitz scale, L >= 0")


def _set_args(p):
    p.add_argument("--grid", help="fracflow-grid v1 file; overrides --shape")
    p.add_argument("--shape", default="disk", help="half-space or disk")
    p.add_argument("--n", type=int, default=128, help="cells per axis")
    p.add_argument("--h", type=float, default=1.0 / 64, help="cell size")
    p.add_argument("--radius", type=float, default=0.5, help="disk radius")
    p.add_argument("--out", help="output file (stdout by default)")


def _flow_args(p, graph: bool):
    _common(p)
    p.add_argument("--nx", type=int, default=128 if graph else 8, help="horizontal samples")
    p.add_argument("--nz", type=int, default=128 if graph else 96,
                   help="vertical cells (level sets; graph snapshots)")
    p.add_argument("--h", type=float, default=None, help="spacing (default: from the window)")
    p.add_argument("--dt", type=float, default=None, help="time step (default: stability limit)")
    p.add_argument("--t-end", dest="t_end", type=float, default=0.1, help="final time")
    p.add_argument("--init", default="cos" if graph else "two-hyperplane",
                   help=("cos, flat, zigzag or a sample file" if graph
                         else "half-space, ball, two-hyperplane, sandwich or a grid file"))
    p.add_argument("--record-every", dest="record_every", type=int, default=10,
                   help="steps between CSV records")
    p.add_argument("--seed", type=int, default=1, help="seed for random initial data")
    p.add_argument("--out", help="CSV output file (stdout by default)")
    p.add_argument("--snapshots", help="directory for fracflow-grid v1 snapshots")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("curvature", help="curvature at the boundary faces of a set (CSV)")
    _common(c, L=False)
    _set_args(c)
    c.add_argument("--pv-cutoff", dest="pv_cutoff", type=float, default=None)
    c.add_argument("--truncation-radius", dest="truncation_radius", type=float, default=None)
    c.add_argument("--inner-refinement", dest="inner_refinement", type=int, default=8)
    c.add_argument("--max-points", dest="max_points", type=int, default=64,
                   help="evaluate at most this many faces (0 for all)")
    c.set_defaults(func=cmd_curvature)

    q = sub.add_parser("perimeter", help="fractional perimeter of a bounded set")
    _common(q, L=False)
    _set_args(q)
    q.set_defaults(func=cmd_perimeter)

    g = sub.add_parser("graph-flow", help="evolve a periodic graph")
    _flow_args(g, True)
    g.set_defaults(func=cmd_graph_flow)

    ls = sub.add_parser("levelset-flow", help="evolve a level-set field")
    _flow_args(ls, False)
    ls.set_defaults(func=cmd_levelset_flow)

    v = sub.add_parser("verify-modulus", help="sweep the modulus family; CSV plus summary line")
    _common(v)
    v.add_argument("--c", type=float, default=None, help="cap size (default s/(10(1+L)))")
    v.add_argument("--grid-t", dest="grid_t", type=int, default=100, help="time samples")
    v.add_argument("--grid-xi", dest="grid_xi", type=int, default=200, help="separation samples")
    v.add_argument("--out", help="CSV output file (stdout by default)")
    v.set_defaults(func=cmd_verify_modulus)

    keys = "\n".join(f"  {k}: {v}" for k, v in CONFIG_KEYS.items())
    e = sub.add_parser("experiment", help="run a registered experiment ('all' runs every one)",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog="config file keys (key = value, '#' comments):\n" + keys)
    e.add_argument("name", help="experiment name, or 'all'")
    e.add_argument("--config", help="key = value config file")
    e.add_argument("--dump-config", dest="dump_config", help="write the effective config here")
    e.add_argument("--d", type=int)
    e.add_argument("--s", type=float)
    e.add_argument("--L", type=float)
    e.add_argument("--n", type=int)
    e.add_argument("--cfl", type=float)
    e.add_argument("--record-every", dest="record_every", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--trials", type=int)
    e.add_argument("--out", dest="output_dir")
    e.set_defaults(func=cmd_experiment)

    li = sub.add_parser("list", help="list registered experiments")
    li.set_defaults(func=cmd_list)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        return int(a.func(a))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
