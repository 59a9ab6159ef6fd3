"""Select the compiled kernels when available, else the numpy fallback.

Set ``KGFIT_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
average_linkage = _fallback.average_linkage
silhouette_samples = _fallback.silhouette_samples

if not os.environ.get("KGFIT_PURE_PYTHON"):
    try:
        from . import _core
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        average_linkage = _core.average_linkage
        silhouette_samples = _core.silhouette_samples
