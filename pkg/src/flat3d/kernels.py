"""Backend selection for the trilinear kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``FLAT3D_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("FLAT3D_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _kernels_py


def _prep(grid, idx):
    grid = np.ascontiguousarray(grid, dtype=np.complex128)
    idx = np.ascontiguousarray(idx, dtype=np.float64)
    return grid, idx


def sample(grid, idx):
    """Trilinear gather of ``grid`` at fractional indices ``idx`` (P, 3)."""
    grid, idx = _prep(grid, idx)
    return _impl.sample(grid, idx)


def spread(values, idx, n):
    """Adjoint of :func:`sample`: scatter ``values`` onto an n^3 grid."""
    values = np.ascontiguousarray(values, dtype=np.complex128).ravel()
    idx = np.ascontiguousarray(idx, dtype=np.float64)
    return _impl.spread(values, idx, int(n))


def sample_grad(grid, idx):
    """Partial derivatives (P, 3) of the gathered value w.r.t. ``idx``."""
    grid, idx = _prep(grid, idx)
    return _impl.sample_grad(grid, idx)


def sample_and_grad(grid, idx):
    """Gathered value and its index derivatives in one pass, shape (P, 4)."""
    grid, idx = _prep(grid, idx)
    return _impl.sample_and_grad(grid, idx)


def gather_accumulate(grid, idx, coef, acc):
    """Return ``sample(grid, idx)`` and add Re(conj(coef) * sample_grad) into ``acc``.

    ``acc`` must be a C-contiguous float64 array of shape (P, 3).
    """
    grid, idx = _prep(grid, idx)
    coef = np.ascontiguousarray(coef, dtype=np.complex128).ravel()
    return _impl.gather_accumulate(grid, idx, coef, acc)
