"""Optional numba acceleration.

Set ``OWFORGE_DISABLE_NUMBA=1`` to force the pure-numpy kernels, e.g. when
debugging or on platforms without a working LLVM.
"""
import logging
import os

logger = logging.getLogger(__name__)

_DISABLED = os.environ.get("OWFORGE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("disabled by OWFORGE_DISABLE_NUMBA")
    from numba import njit
    HAVE_NUMBA = True
except ImportError as exc:  # pragma: no cover - depends on environment
    logger.debug("numba unavailable (%s); using numpy kernels", exc)
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def identity(fn):
            return fn

        return identity


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
