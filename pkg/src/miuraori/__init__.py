"""Inverse design of rigid-foldable generalized Miura-ori tessellations."""

__version__ = "0.1.0"

from .surface import (  # noqa: F401
    AirfoilParams,
    ParametricSurface,
    airfoil_surface,
    builtin_surface,
    naca_camber_and_thickness,
    parse_surface_expr,
    surface_from_spec,
)
from .tessellation import (  # noqa: F401
    DofReport,
    Mesh,
    VertexBinding,
    apply_boundary_pins,
    build_initial_double,
    build_initial_single,
    default_attachment_double,
    default_attachment_single,
    dof_report,
    mesh_from_dict,
    mesh_to_dict,
    set_attachment,
)
from .constraints import ConstraintSystem, assemble  # noqa: F401
from .solver import SolveStats, SolverOptions, fd_self_check, minimize  # noqa: F401
