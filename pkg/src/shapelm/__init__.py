"""Geometric Levenberg-Marquardt shape optimization on triangle meshes."""

from .kernels import BACKEND
from .mesh import TriMesh

__version__ = "0.1.0"
__all__ = ["BACKEND", "TriMesh", "__version__"]
