"""Backend selection for the distance kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback. Set ``CODEALIGN_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from codealign import _pykernels

_impl = _pykernels
BACKEND = "python"
if not os.environ.get("CODEALIGN_PURE_PYTHON"):
    try:
        from codealign import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        pass


def _c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def nearest(Z, P):
    """Index of the nearest row of ``P`` for every row of ``Z``.

    Returns ``(index, squared_distance)``; ties go to the lowest index.
    """
    Z, P = _c64(Z), _c64(P)
    return _impl.nearest(Z, P)


def pairwise_sqdist(A, B):
    """Matrix of squared Euclidean distances between rows of ``A`` and ``B``."""
    return _impl.pairwise_sqdist(_c64(A), _c64(B))
