"""Moreau-Yosida relaxed double-obstacle Cahn-Hilliard step on adaptive P1 meshes."""
from .mesh import Mesh, MeshError, cell_geometry, prolongate, refine, unit_square_mesh
from .fem import (
    P1Function,
    assemble_lumped_mass,
    assemble_mass,
    assemble_stiffness,
    interpolate,
    l1_norm,
    linf_norm,
)
from .penalty import (
    PenaltyScheme,
    assemble_penalty_jacobian,
    assemble_penalty_vector,
    clip_triangle,
    dviolation_k,
    violation,
    violation_k,
)
from .chstep import (
    NewtonConfig,
    Status,
    StepProblem,
    StepSolution,
    ViolationReport,
    initial_phase_field,
    jacobian,
    linear_solve,
    newton_solve,
    residual,
    violation_report,
)
from .adapt import MarkParams, NewtonFailure, adaptive_cycle, doerfler_mark, estimate
from .harness import SweepConfig, SweepRecord, fit_loglog_slope, run_sweep

__version__ = "0.1.0"
