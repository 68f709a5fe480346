"""Backend selection for the hot loops.

The compiled extension is used when it imports; setting
``NEXUSLOOP_PURE_PYTHON=1`` forces the pure-Python fallback.  Both modules
stay importable for benchmarks and cross-checks.
"""
import os

from . import _kernels_py as python_backend
from ._kernels_py import (  # noqa: F401  (parameter layout is shared)
    C_LIMIT, N_PARAMS, P_A, P_B, P_D0, P_GAMMA, P_GK, P_GW, P_HBAR, P_HBAR_WD, P_KAPPA, P_M,
    P_OMEGA, P_P0, P_TH0, P_TH_RATE, P_TH_START, STATUS_DIVERGED, STATUS_OK, STATUS_UNPHYSICAL,
)

try:
    from . import _kernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and not os.environ.get("NEXUSLOOP_PURE_PYTHON"):
    backend = compiled_backend
    BACKEND = "compiled"
else:
    backend = python_backend
    BACKEND = "python"

rk4_integrate = backend.rk4_integrate
mc_chunk = backend.mc_chunk
