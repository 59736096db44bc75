"""Alpha-Gauss curvature flow of convex hypersurfaces above a shrinking obstacle.

Surfaces are represented by support functions on a grid over the sphere of
normals; the obstacle constraint is enforced by a penalty term.
"""

from .errors import GCFError
from .sphere import SphericalGrid, build_grid, curvatures, second_fundamental_form
from .obstacle import Obstacle, make_homothetic, make_interpolating
from .penalty import PenaltyFunction, make_penalty
from .flow import FlowState, Trajectory, continuation, make_state, run, sphere_radius, step

__all__ = [
    "GCFError",
    "SphericalGrid",
    "build_grid",
    "curvatures",
    "second_fundamental_form",
    "Obstacle",
    "make_homothetic",
    "make_interpolating",
    "PenaltyFunction",
    "make_penalty",
    "FlowState",
    "Trajectory",
    "continuation",
    "make_state",
    "run",
    "sphere_radius",
    "step",
]
