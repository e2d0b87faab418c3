"""Backend switch for the hot numeric kernels.

Kernels in :mod:`voxfc.kernels` exist twice: a numba ``@njit`` version and a
pure-numpy version. The numba path is used when numba imports and the
environment variable ``VOXFC_BACKEND`` is unset or ``numba``. Setting
``VOXFC_BACKEND=numpy`` forces the numpy path (useful for debugging and for
platforms without numba).

``VOXFC_CACHE_DIR`` redirects numba's on-disk compilation cache; it is
applied before numba is imported.
"""

import os

BACKEND_ENV = "VOXFC_BACKEND"
CACHE_ENV = "VOXFC_CACHE_DIR"

if os.environ.get(CACHE_ENV):
    os.environ.setdefault("NUMBA_CACHE_DIR", os.environ[CACHE_ENV])

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None


def requested_backend():
    value = os.environ.get(BACKEND_ENV, "numba").strip().lower()
    if value not in ("numba", "numpy"):
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {value!r}")
    return value


USE_NUMBA = HAVE_NUMBA and requested_backend() == "numba"


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True)(func)
