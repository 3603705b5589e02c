"""hp-adaptive DPG for convection-diffusion on anisotropic hexahedral meshes."""
from .mesh import Mesh, RefFlag, UnwantedPolicy, refine_with_closure, unrefine
from .problems import make_problem
from .solve import solve_mesh

__all__ = ["Mesh", "RefFlag", "UnwantedPolicy", "refine_with_closure", "unrefine",
           "make_problem", "solve_mesh"]
__version__ = "0.1.0"
