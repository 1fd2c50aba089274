"""Pure-numpy fallback for the trilinear kernels in ``_kernels.pyx``.

Same contract: fractional indices ``idx`` of shape (P, 3) ordered (x, y, z),
periodic grid of shape (n, n, n) indexed [z, y, x], 0 <= idx <= n.
"""
import numpy as np


def _cells(idx, n):
    i0 = np.floor(idx).astype(np.int64)
    np.minimum(i0, n - 1, out=i0)
    t = idx - i0
    i1 = i0 + 1
    i1[i1 == n] = 0
    return i0, i1, t


def _corners(idx, n):
    """Yield (linear index, weight) for each of the 8 cell corners."""
    i0, i1, t = _cells(idx, n)
    u = 1.0 - t
    for cz in (0, 1):
        zi = (i1 if cz else i0)[:, 2]
        wz = (t if cz else u)[:, 2]
        for cy in (0, 1):
            yi = (i1 if cy else i0)[:, 1]
            wy = (t if cy else u)[:, 1]
            for cx in (0, 1):
                xi = (i1 if cx else i0)[:, 0]
                wx = (t if cx else u)[:, 0]
                yield (zi * n + yi) * n + xi, wz * wy * wx


def sample(grid, idx):
    n = grid.shape[0]
    flat = grid.ravel()
    out = np.zeros(idx.shape[0], dtype=np.complex128)
    for lin, w in _corners(idx, n):
        out += w * flat[lin]
    return out


def spread(values, idx, n):
    acc_re = np.zeros(n ** 3)
    acc_im = np.zeros(n ** 3)
    for lin, w in _corners(idx, n):
        acc_re += np.bincount(lin, weights=w * values.real, minlength=n ** 3)
        acc_im += np.bincount(lin, weights=w * values.imag, minlength=n ** 3)
    return (acc_re + 1j * acc_im).reshape(n, n, n)


def sample_grad(grid, idx):
    n = grid.shape[0]
    flat = grid.ravel()
    i0, i1, t = _cells(idx, n)
    u = 1.0 - t
    c = {}
    for cz in (0, 1):
        for cy in (0, 1):
            for cx in (0, 1):
                zi = (i1 if cz else i0)[:, 2]
                yi = (i1 if cy else i0)[:, 1]
                xi = (i1 if cx else i0)[:, 0]
                c[cz, cy, cx] = flat[(zi * n + yi) * n + xi]
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
    ux, uy, uz = u[:, 0], u[:, 1], u[:, 2]
    out = np.empty((idx.shape[0], 3), dtype=np.complex128)
    out[:, 0] = (uz * (uy * (c[0, 0, 1] - c[0, 0, 0]) + ty * (c[0, 1, 1] - c[0, 1, 0]))
                 + tz * (uy * (c[1, 0, 1] - c[1, 0, 0]) + ty * (c[1, 1, 1] - c[1, 1, 0])))
    out[:, 1] = (uz * (ux * (c[0, 1, 0] - c[0, 0, 0]) + tx * (c[0, 1, 1] - c[0, 0, 1]))
                 + tz * (ux * (c[1, 1, 0] - c[1, 0, 0]) + tx * (c[1, 1, 1] - c[1, 0, 1])))
    out[:, 2] = (uy * (ux * (c[1, 0, 0] - c[0, 0, 0]) + tx * (c[1, 0, 1] - c[0, 0, 1]))
                 + ty * (ux * (c[1, 1, 0] - c[0, 1, 0]) + tx * (c[1, 1, 1] - c[0, 1, 1])))
    return out


def sample_and_grad(grid, idx):
    out = np.empty((idx.shape[0], 4), dtype=np.complex128)
    out[:, 0] = sample(grid, idx)
    out[:, 1:] = sample_grad(grid, idx)
    return out


def gather_accumulate(grid, idx, coef, acc):
    sg = sample_and_grad(grid, idx)
    acc += (np.conj(coef)[:, None] * sg[:, 1:]).real
    return sg[:, 0].copy()
