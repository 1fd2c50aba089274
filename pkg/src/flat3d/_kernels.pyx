# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled trilinear gather/scatter kernels on a periodic n^3 grid.

Point coordinates are fractional grid indices ordered (x, y, z) and map to
array axes (2, 1, 0). Callers guarantee 0 <= idx <= n. Complex arrays are
handled as interleaved (re, im) float64 pairs to keep the arithmetic real.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


cdef inline void _cell(double f, Py_ssize_t n, Py_ssize_t* i0, Py_ssize_t* i1,
                       double* t) noexcept nogil:
    cdef Py_ssize_t i = <Py_ssize_t>floor(f)
    if i >= n:
        i = n - 1
    t[0] = f - i
    i0[0] = i
    i1[0] = i + 1 if i + 1 < n else 0


cdef inline void _corners(const double* f, Py_ssize_t n, Py_ssize_t* off,
                          double* t) noexcept nogil:
    """Flat offsets (in complex elements) of the 8 corners, corner bits (z, y, x)."""
    cdef Py_ssize_t x0, x1, y0, y1, z0, z1
    _cell(f[0], n, &x0, &x1, &t[0])
    _cell(f[1], n, &y0, &y1, &t[1])
    _cell(f[2], n, &z0, &z1, &t[2])
    z0 *= n * n
    z1 *= n * n
    y0 *= n
    y1 *= n
    off[0] = z0 + y0 + x0
    off[1] = z0 + y0 + x1
    off[2] = z0 + y1 + x0
    off[3] = z0 + y1 + x1
    off[4] = z1 + y0 + x0
    off[5] = z1 + y0 + x1
    off[6] = z1 + y1 + x0
    off[7] = z1 + y1 + x1


cdef inline void _weights(const double* t, double* w) noexcept nogil:
    cdef double ux = 1.0 - t[0], uy = 1.0 - t[1], uz = 1.0 - t[2]
    w[0] = uz * uy * ux
    w[1] = uz * uy * t[0]
    w[2] = uz * t[1] * ux
    w[3] = uz * t[1] * t[0]
    w[4] = t[2] * uy * ux
    w[5] = t[2] * uy * t[0]
    w[6] = t[2] * t[1] * ux
    w[7] = t[2] * t[1] * t[0]


cdef inline void _dweights(const double* t, double* dx, double* dy,
                           double* dz) noexcept nogil:
    cdef double ux = 1.0 - t[0], uy = 1.0 - t[1], uz = 1.0 - t[2]
    dx[0] = -uz * uy
    dx[1] = uz * uy
    dx[2] = -uz * t[1]
    dx[3] = uz * t[1]
    dx[4] = -t[2] * uy
    dx[5] = t[2] * uy
    dx[6] = -t[2] * t[1]
    dx[7] = t[2] * t[1]
    dy[0] = -uz * ux
    dy[1] = -uz * t[0]
    dy[2] = uz * ux
    dy[3] = uz * t[0]
    dy[4] = -t[2] * ux
    dy[5] = -t[2] * t[0]
    dy[6] = t[2] * ux
    dy[7] = t[2] * t[0]
    dz[0] = -uy * ux
    dz[1] = -uy * t[0]
    dz[2] = -t[1] * ux
    dz[3] = -t[1] * t[0]
    dz[4] = uy * ux
    dz[5] = uy * t[0]
    dz[6] = t[1] * ux
    dz[7] = t[1] * t[0]


def _pairs(a):
    return a.view(np.float64).reshape(-1)


def sample(grid, double[:, ::1] idx):
    cdef Py_ssize_t n = grid.shape[0]
    cdef double[::1] g = _pairs(grid)
    cdef Py_ssize_t p, c, k, npts = idx.shape[0]
    cdef Py_ssize_t off[8]
    cdef double t[3]
    cdef double w[8]
    cdef double re, im
    out = np.empty(npts, dtype=np.complex128)
    cdef double[::1] o = _pairs(out)
    with nogil:
        for p in range(npts):
            _corners(&idx[p, 0], n, off, t)
            _weights(t, w)
            re = 0.0
            im = 0.0
            for c in range(8):
                k = 2 * off[c]
                re += w[c] * g[k]
                im += w[c] * g[k + 1]
            o[2 * p] = re
            o[2 * p + 1] = im
    return out


def spread(values, double[:, ::1] idx, Py_ssize_t n):
    cdef double[::1] v = _pairs(values)
    cdef Py_ssize_t p, c, k, npts = idx.shape[0]
    cdef Py_ssize_t off[8]
    cdef double t[3]
    cdef double w[8]
    cdef double re, im
    out = np.zeros((n, n, n), dtype=np.complex128)
    cdef double[::1] g = _pairs(out)
    with nogil:
        for p in range(npts):
            _corners(&idx[p, 0], n, off, t)
            _weights(t, w)
            re = v[2 * p]
            im = v[2 * p + 1]
            for c in range(8):
                k = 2 * off[c]
                g[k] += w[c] * re
                g[k + 1] += w[c] * im
    return out


def sample_grad(grid, double[:, ::1] idx):
    """Derivative of the interpolated value w.r.t. each index coordinate."""
    return sample_and_grad(grid, idx)[:, 1:].copy()


def sample_and_grad(grid, double[:, ::1] idx):
    """Column 0: gathered value; columns 1-3: its derivatives w.r.t. (x, y, z)."""
    cdef Py_ssize_t n = grid.shape[0]
    cdef double[::1] g = _pairs(grid)
    cdef Py_ssize_t p, c, k, npts = idx.shape[0]
    cdef Py_ssize_t off[8]
    cdef double t[3]
    cdef double w[8]
    cdef double dx[8]
    cdef double dy[8]
    cdef double dz[8]
    cdef double gr, gi
    cdef double acc[8]
    out = np.empty((npts, 4), dtype=np.complex128)
    cdef double[::1] o = _pairs(out)
    with nogil:
        for p in range(npts):
            _corners(&idx[p, 0], n, off, t)
            _weights(t, w)
            _dweights(t, dx, dy, dz)
            for c in range(8):
                acc[c] = 0.0
            for c in range(8):
                k = 2 * off[c]
                gr = g[k]
                gi = g[k + 1]
                acc[0] += w[c] * gr
                acc[1] += w[c] * gi
                acc[2] += dx[c] * gr
                acc[3] += dx[c] * gi
                acc[4] += dy[c] * gr
                acc[5] += dy[c] * gi
                acc[6] += dz[c] * gr
                acc[7] += dz[c] * gi
            for c in range(8):
                o[8 * p + c] = acc[c]
    return out


def gather_accumulate(grid, double[:, ::1] idx, coef, double[:, ::1] acc):
    """Gather ``grid`` at ``idx`` and add Re(conj(coef) * d value / d idx) into ``acc``.

    Returns the gathered values.
    """
    cdef Py_ssize_t n = grid.shape[0]
    cdef double[::1] g = _pairs(grid)
    cdef double[::1] cf = _pairs(coef)
    cdef Py_ssize_t p, c, k, npts = idx.shape[0]
    cdef Py_ssize_t off[8]
    cdef double t[3]
    cdef double w[8]
    cdef double dx[8]
    cdef double dy[8]
    cdef double dz[8]
    cdef double gr, gi, cr, ci, vr, vi, ax, ay, az
    out = np.empty(npts, dtype=np.complex128)
    cdef double[::1] o = _pairs(out)
    with nogil:
        for p in range(npts):
            _corners(&idx[p, 0], n, off, t)
            _weights(t, w)
            _dweights(t, dx, dy, dz)
            cr = cf[2 * p]
            ci = cf[2 * p + 1]
            vr = 0.0
            vi = 0.0
            ax = 0.0
            ay = 0.0
            az = 0.0
            for c in range(8):
                k = 2 * off[c]
                gr = g[k]
                gi = g[k + 1]
                vr += w[c] * gr
                vi += w[c] * gi
                # Re(conj(coef) * grid) = cr * gr + ci * gi
                gr = cr * gr + ci * gi
                ax += dx[c] * gr
                ay += dy[c] * gr
                az += dz[c] * gr
            o[2 * p] = vr
            o[2 * p + 1] = vi
            acc[p, 0] += ax
            acc[p, 1] += ay
            acc[p, 2] += az
    return out
