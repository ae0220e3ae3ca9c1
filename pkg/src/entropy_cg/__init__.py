"""Entropy-stable, bound-preserving continuous Galerkin schemes for scalar conservation laws."""

import os as _os

# BLAS thread pools read these only once, so they must be set before numpy loads
_threads = _os.environ.get("ENTROPY_CG_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .mesh import Mesh, MeshError, build_mesh, full_stencil
from .physics import FluxModel, benchmark, BENCHMARKS
from .space import Space
from .solver import (
    SchemeVariant,
    SemiDiscretization,
    SimulationResult,
    eoc_study,
    parse_scheme,
    run,
)

__version__ = "0.1.0"

__all__ = [
    "BENCHMARKS",
    "FluxModel",
    "Mesh",
    "MeshError",
    "SchemeVariant",
    "SemiDiscretization",
    "SimulationResult",
    "Space",
    "benchmark",
    "build_mesh",
    "eoc_study",
    "full_stencil",
    "parse_scheme",
    "run",
]
