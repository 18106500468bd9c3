"""Kernel backend selection.

Hot numeric kernels in :mod:`cbflearn.kernels` are JIT-compiled with numba
when available.  Setting the environment variable ``CBFLEARN_NUMBA`` to
``0``/``numpy`` forces the pure-NumPy fallback (the same functions run
uncompiled); ``1``/``numba`` requires numba and fails loudly if it is
missing.  The default (``auto``) uses numba when it imports.
"""

import os

_flag = os.environ.get("CBFLEARN_NUMBA", "auto").strip().lower()

if _flag in ("0", "false", "no", "off", "numpy"):
    NUMBA_ENABLED = False
elif _flag in ("1", "true", "yes", "on", "numba"):
    from numba import njit as _njit  # noqa: F401  (import error is the point)

    NUMBA_ENABLED = True
else:
    try:
        from numba import njit as _njit  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False

BACKEND = "numba" if NUMBA_ENABLED else "numpy"


if NUMBA_ENABLED:

    def jit_kernel(fn):
        """Compile a kernel in nopython mode (no fastmath: results must be
        reproducible bit-for-bit across runs)."""
        return _njit(cache=True, fastmath=False)(fn)

else:

    def jit_kernel(fn):
        """Fallback: run the kernel as plain Python/NumPy."""
        return fn
