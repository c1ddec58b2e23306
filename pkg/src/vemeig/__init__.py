"""Virtual element discretization of Laplace-type eigenvalue problems on polygonal meshes."""

from .assembly import (AssembledSystem, OperatorCache, ProblemSpec, StabilizationConfig, assemble,
                       problem_from_dict)
from .eigsolve import EigenSolveError, Spectrum, solve_gevp
from .harness import (ConvergenceReport, StudyConfig, reference_eigenvalues, run_study,
                      source_convergence, sweep_stabilization)
from .mesh import MeshFamilySpec, PolygonalMesh, generate_mesh, read_mesh, write_mesh
from .vem_local import element_operators

__all__ = [
    "AssembledSystem", "ConvergenceReport", "EigenSolveError", "MeshFamilySpec", "OperatorCache",
    "PolygonalMesh", "ProblemSpec", "Spectrum", "StabilizationConfig", "StudyConfig", "assemble",
    "element_operators", "generate_mesh", "problem_from_dict", "read_mesh", "reference_eigenvalues",
    "run_study", "solve_gevp", "source_convergence", "sweep_stabilization", "write_mesh",
]
__version__ = "0.1.0"
