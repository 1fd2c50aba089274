"""Forward sub-sampling: trilinear interpolation of Cartesian k-space along a
trajectory, with reverse-mode products for the grid and the coordinates.

The grid is treated as periodic (a DFT grid), so the index range is [0, n]
and index n coincides with index 0. Coordinates outside are rejected.

Gradients of real losses w.r.t. complex quantities use the real-pair
convention: the cotangent of z is dL/dRe(z) + 1j dL/dIm(z).
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import OutOfBoundsError
from .trajectory import Trajectory


def check_indices(idx: np.ndarray, n: int, m: int | None = None) -> None:
    """Raise :class:`OutOfBoundsError` naming the first offending sample."""
    bad = ~np.all((idx >= 0.0) & (idx <= n), axis=-1)
    if np.any(bad):
        p = int(np.flatnonzero(bad)[0])
        shot, sample = divmod(p, m) if m else (0, p)
        raise OutOfBoundsError(shot, sample, tuple(idx[p]))


def _indices(traj: Trajectory) -> np.ndarray:
    idx = traj.grid_index()
    check_indices(idx, traj.n, traj.m)
    return idx


def sample(ks: np.ndarray, traj: Trajectory) -> np.ndarray:
    """Measurements (n_shots, m) of k-space ``ks`` along ``traj``."""
    return kernels.sample(ks, _indices(traj)).reshape(traj.n_shots, traj.m)


def sample_vjp_grid(cotangent: np.ndarray, traj: Trajectory) -> np.ndarray:
    """Adjoint spreading of measurement cotangents onto the n^3 grid."""
    return kernels.spread(cotangent, _indices(traj), traj.n)


def sample_vjp_traj(cotangent: np.ndarray, ks: np.ndarray, traj: Trajectory) -> np.ndarray:
    """Cotangent of the trajectory coordinates (n_shots, m, 3), in m^-1 units."""
    d = kernels.sample_grad(ks, _indices(traj))
    g = (np.conj(cotangent.reshape(-1, 1)) * d).real * traj.fov
    return g.reshape(traj.n_shots, traj.m, 3)


def add_noise(meas: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add i.i.d. circular complex Gaussian noise with E|noise|^2 = sigma^2."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return meas.copy()
    rng = np.random.default_rng(seed)
    s = sigma / np.sqrt(2.0)
    noise = rng.normal(0.0, s, meas.shape) + 1j * rng.normal(0.0, s, meas.shape)
    return meas + noise
