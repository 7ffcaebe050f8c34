"""Numerical adiabatic constructions of constant scalar curvature Kähler metrics
on products and twisted products of curves."""
import os as _os

# CSCKLAB_THREADS caps the BLAS/FFT thread pools; it has to be in the
# environment before numpy loads its libraries.
_threads = _os.environ.get("CSCKLAB_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from .curves import GridError, MeshCurve, TorusCurve, origami_curve  # noqa: E402
from .fibre import ConvergenceError, GeometryInputError, product_surface  # noqa: E402
from .grid import Form11, ProductGrid  # noqa: E402
from .kahler import KahlerSurface, PositivityError, scal  # noqa: E402
from .ladder import LadderError, build_ladder  # noqa: E402
from .linear import SolverError, linearize_scal  # noqa: E402

__all__ = [
    "ConvergenceError", "Form11", "GeometryInputError", "GridError", "KahlerSurface",
    "LadderError", "MeshCurve", "PositivityError", "ProductGrid", "SolverError", "TorusCurve",
    "build_ladder", "linearize_scal", "origami_curve", "product_surface", "scal",
]
