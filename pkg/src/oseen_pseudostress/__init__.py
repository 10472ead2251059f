"""Mixed finite elements for the Oseen eigenvalue problem in
velocity-pseudostress form on triangles (RT_k / BDM_{k+1} tensors with
discontinuous P_k velocities)."""

from .assembly import SparseSystem, assemble_adjoint, assemble_forms, assemble_source_rhs
from .diagnostics import ConstantsReport, estimate_constants
from .eigensolver import (EigenPair, EigenProblem, SolverError, dense_generalized_eigenvalues,
                          solve_shift_invert, solve_source, spectrum_adjoint_check)
from .fields import ConvectionField, make_beta
from .mesh import Mesh, build_lshape, build_square, uniform_refine
from .postprocess import (ConvergenceReport, PressureField, filter_spectrum, fit_rate,
                          recover_pressure)
from .quadrature import QuadRule, rule_for_degree
from .spaces import SpacePair, build_space_pair, reference_basis

__all__ = [
    "ConstantsReport", "ConvectionField", "ConvergenceReport", "EigenPair", "EigenProblem",
    "Mesh", "PressureField", "QuadRule", "SolverError", "SpacePair", "SparseSystem",
    "assemble_adjoint", "assemble_forms", "assemble_source_rhs", "build_lshape",
    "build_space_pair", "build_square", "dense_generalized_eigenvalues", "estimate_constants",
    "filter_spectrum", "fit_rate", "make_beta", "recover_pressure", "reference_basis",
    "rule_for_degree", "solve_shift_invert", "solve_source", "spectrum_adjoint_check",
    "uniform_refine",
]
