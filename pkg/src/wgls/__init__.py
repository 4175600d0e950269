"""Weak Galerkin least-squares finite elements for first-order convection on polygonal meshes."""
from .kernels import BACKEND
from .polymesh import (BoundaryClassification, MeshFormatError, MeshValidationError, PolyMesh, classify_boundary,
                       generate_nonconvex_polygonal, generate_triangular, load_mesh, save_mesh)
from .polyquad import QuadratureError, QuadratureRule, cell_quadrature, facet_quadrature, polygon_rule
from .weakcalc import (WeakFunction, WeakSpace, default_grad_degree, project_Q0, project_Qb, project_Qh,
                       verify_commutativity)
from .lsfem import (CoefficientField, ConfigurationError, ErrorReport, LinearSystem, Solution, SolverError,
                    apply_inflow_bc, assemble, error_norms, solve, verify_error_equation)
from .convergence import (ConvergenceReport, ProblemSpec, StudyConfig, compute_orders, emit_report, make_problem,
                          run_study)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BoundaryClassification", "MeshFormatError", "MeshValidationError", "PolyMesh",
    "classify_boundary", "generate_nonconvex_polygonal", "generate_triangular", "load_mesh", "save_mesh",
    "QuadratureError", "QuadratureRule", "cell_quadrature", "facet_quadrature", "polygon_rule",
    "WeakFunction", "WeakSpace", "default_grad_degree", "project_Q0", "project_Qb", "project_Qh",
    "verify_commutativity", "CoefficientField", "ConfigurationError", "ErrorReport", "LinearSystem", "Solution",
    "SolverError", "apply_inflow_bc", "assemble", "error_norms", "solve", "verify_error_equation",
    "ConvergenceReport", "ProblemSpec", "StudyConfig", "compute_orders", "emit_report", "make_problem",
    "run_study",
]
