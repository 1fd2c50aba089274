"""Adjoint-NUFFT regridding: density-compensated trilinear spreading onto the
Cartesian grid followed by a centered inverse FFT.

The spreading kernel is exactly the adjoint of the forward sampler, so the
regridding operator is ``F^H S^H W``. Density weights are constants as far
as differentiation is concerned.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .acquisition import _indices
from .fourier import fftc, ifftc
from .trajectory import Trajectory

WEIGHT_FLOOR = 1e-8


def density_from_indices(idx: np.ndarray, n: int) -> np.ndarray:
    """Reciprocal local spread count at each sample (flat, length P)."""
    count = kernels.sample(kernels.spread(np.ones(idx.shape[0]), idx, n), idx).real
    return 1.0 / np.maximum(count, WEIGHT_FLOOR)


def density_weights(traj: Trajectory, n: int | None = None) -> np.ndarray:
    """Per-sample density compensation weights, shaped (n_shots, m)."""
    n = traj.n if n is None else n
    return density_from_indices(_indices(traj), n).reshape(traj.n_shots, traj.m)


def density_map(traj: Trajectory) -> np.ndarray:
    """Spread count of unit samples on the grid (mass equals sample count)."""
    return kernels.spread(np.ones(traj.n_shots * traj.m), _indices(traj), traj.n).real


def adjoint_from_indices(meas, idx, n, weights):
    return ifftc(kernels.spread(np.ravel(weights * meas), idx, n))


def adjoint_nufft(meas: np.ndarray, traj: Trajectory, n: int | None = None,
                  weights: np.ndarray | None = None) -> np.ndarray:
    """Distorted image F^H S^H (w * meas) on the n^3 grid."""
    n = traj.n if n is None else n
    if weights is None:
        weights = np.ones(meas.shape)
    return adjoint_from_indices(meas, _indices(traj), n, weights)


def adjoint_vjp_from_indices(cot_img, meas, idx, weights):
    """Cotangents (meas_bar flat, idx_bar (P, 3)) of the regridding map."""
    q_bar = fftc(cot_img)
    wm = np.ravel(weights * meas)
    meas_bar = np.ravel(weights) * kernels.sample(q_bar, idx)
    idx_bar = (wm[:, None] * np.conj(kernels.sample_grad(q_bar, idx))).real
    return meas_bar, idx_bar


def adjoint_nufft_vjp(cot_img: np.ndarray, meas: np.ndarray, traj: Trajectory,
                      weights: np.ndarray | None = None):
    """Reverse-mode product of :func:`adjoint_nufft`.

    Returns ``(meas_bar, traj_bar)`` shaped like ``meas`` and ``traj.coords``;
    ``traj_bar`` is in m^-1 units.
    """
    if weights is None:
        weights = np.ones(meas.shape)
    meas_bar, idx_bar = adjoint_vjp_from_indices(cot_img, meas, _indices(traj), weights)
    return meas_bar.reshape(meas.shape), (idx_bar * traj.fov).reshape(traj.coords.shape)
