"""Hot-loop dispatch: compiled ``_core`` when importable, else ``_fallback``.

Set ``IOHPG_PURE_PYTHON=1`` to force the NumPy fallback. Both backends
expose ``lyap_doubling``, ``pgm_descent``, ``ioh_feedback_run`` and
``ioh_feedback_trace`` with identical signatures and status codes.
"""
import os

from . import _fallback

OK, DIVERGED, NO_CONVERGENCE, BLOWUP = 0, 1, 2, 3

_compiled = None
if not os.environ.get("IOHPG_PURE_PYTHON"):
    try:
        from . import _core as _compiled
    except ImportError:  # extension not built
        _compiled = None

impl = _compiled if _compiled is not None else _fallback
BACKEND = "cython" if _compiled is not None else "python"


def get_backend(name=None):
    """Return a backend module by name (``"cython"`` or ``"python"``)."""
    if name is None:
        return impl
    if name == "python":
        return _fallback
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled extension iohpg._core is not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


lyap_doubling = impl.lyap_doubling
pgm_descent = impl.pgm_descent
ioh_feedback_run = impl.ioh_feedback_run
ioh_feedback_trace = impl.ioh_feedback_trace
