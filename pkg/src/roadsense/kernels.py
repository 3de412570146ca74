"""Hot loop of the simulator: the discrete state recursion.

The compiled extension ``roadsense._lsim_ext`` is used when it was built;
otherwise the NumPy fallback below runs. Set ``ROADSENSE_PURE_PYTHON=1`` to
force the fallback.
"""

import os

import numpy as np

try:
    if os.environ.get("ROADSENSE_PURE_PYTHON"):
        raise ImportError("pure-Python backend forced")
    from roadsense._lsim_ext import state_recursion as _compiled_recursion
except ImportError:
    _compiled_recursion = None

BACKEND = "cython" if _compiled_recursion is not None else "python"


def state_recursion_python(A, BU, x0):
    """Reference implementation of :func:`state_recursion`."""
    N, n = BU.shape
    X = np.empty((N, n))
    x = np.array(x0, dtype=float)
    for k in range(N):
        X[k] = x
        x = A @ x + BU[k]
    return X


def state_recursion(A, BU, x0, backend=None):
    """States ``X[k]`` of ``x[k+1] = A x[k] + BU[k]`` starting from ``x0``.

    ``BU`` holds the already-multiplied input term, one row per sample.
    """
    A = np.ascontiguousarray(A, dtype=float)
    BU = np.ascontiguousarray(BU, dtype=float)
    x0 = np.ascontiguousarray(x0, dtype=float)
    if A.shape[0] == 0:
        return np.empty((BU.shape[0], 0))
    backend = backend or BACKEND
    if backend == "cython":
        if _compiled_recursion is None:
            raise RuntimeError("compiled kernel is not available")
        return _compiled_recursion(A, BU, x0)
    return state_recursion_python(A, BU, x0)
