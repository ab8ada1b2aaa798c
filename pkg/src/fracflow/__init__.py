"""Fractional mean curvature flow in the plane.

Submodules
----------
kernel
    Kernel weights, flow parameters and lattice quadrature tables.
geometry
    Grid sets, boundary pairs and moduli of continuity.
curvature
    Nonlocal curvature of grid sets, graphs and level-set fields.
modulus
    The time-dependent modulus family and its integral checks.
flow
    Graph and level-set solvers plus the scripted experiments they support.
experiments, config, cli
    Registered experiments, config files and the command-line front end.
"""

from .kernel import FlowParams, QuadratureConfig
from .geometry import BoundaryPair, IndicatorGrid, Modulus, extract_boundaries, has_modulus_boundary
from .curvature import fractional_mean_curvature, fractional_perimeter, sublevel_curvature
from .modulus import ModulusFamily, modulus_sweep
from .flow import GraphState, LevelSetState, graph_flow_step, levelset_flow_step
from .prng import Xorshift64Star

__version__ = "0.1.0"

__all__ = [
    "FlowParams", "QuadratureConfig", "BoundaryPair", "IndicatorGrid", "Modulus",
    "extract_boundaries", "has_modulus_boundary", "fractional_mean_curvature",
    "fractional_perimeter", "sublevel_curvature", "ModulusFamily", "modulus_sweep",
    "GraphState", "LevelSetState", "graph_flow_step", "levelset_flow_step", "Xorshift64Star",
]
