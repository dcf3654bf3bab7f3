"""Backend selection for the RK4 stage kernels.

The compiled Cython module is used when importable; otherwise, or when the
environment variable ``POLCOH_PURE_PYTHON`` is set to a non-empty value, the
numpy implementation is used. Both expose ``rk4_stage`` and ``rk4_finish``.
"""

import os

from . import _rk4_py

python_backend = _rk4_py

if os.environ.get("POLCOH_PURE_PYTHON"):
    compiled_backend = None
else:
    try:
        from . import _rk4 as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

default_backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND_NAME = "cython" if default_backend is compiled_backend else "numpy"


def get_backend(name=None):
    """Return the kernel module for ``name`` in {None, "cython", "numpy"}."""
    if name is None:
        return default_backend
    if name == "numpy":
        return python_backend
    if name == "cython":
        if compiled_backend is None:
            raise ImportError("compiled kernel polcoh.twa._rk4 is not available")
        return compiled_backend
    raise ValueError(f"unknown kernel backend {name!r}")
