"""Differentiable unrolled reconstruction and a fixed TV-regularized solver.

Both minimize a density-weighted data term plus smoothed total variation on
the complex image ``z``::

    f(z) = || sqrt(w) (S F z - y) ||^2 + alpha * TV_eps(z)

where S samples along the trajectory, F is the centered orthonormal FFT and
w are density compensation weights. The unrolled reconstructor runs K
gradient steps with learnable step sizes and alpha; its reverse pass is
written by hand and yields cotangents for the measurements, the trajectory
and the parameters.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .fourier import fftc, ifftc, rdot
from .regrid import density_from_indices

DEFAULT_K_UNROLL = 8
DEFAULT_STEP = 0.5
DEFAULT_ALPHA = 1e-3
DEFAULT_TV_EPS = 1e-3


# ---------------------------------------------------------------- smoothed TV

def _fwd_diff(z):
    """Forward differences along each array axis, zero on the last plane."""
    out = np.zeros((3,) + z.shape, dtype=z.dtype)
    out[0, :-1] = z[1:] - z[:-1]
    out[1, :, :-1] = z[:, 1:] - z[:, :-1]
    out[2, :, :, :-1] = z[:, :, 1:] - z[:, :, :-1]
    return out


def _fwd_diff_adj(u):
    """Adjoint of :func:`_fwd_diff`."""
    out = np.zeros(u.shape[1:], dtype=u.dtype)
    for ax in range(3):
        d = np.moveaxis(u[ax], ax, 0)
        o = np.moveaxis(out, ax, 0)
        o[:-1] -= d[:-1]
        o[1:] += d[:-1]
    return out


def _tv_parts(z, eps):
    u = _fwd_diff(z)
    rho = np.sqrt((u.real ** 2 + u.imag ** 2).sum(axis=0) + eps * eps)
    return u, rho


def tv_smoothed(z, eps=DEFAULT_TV_EPS):
    """Smoothed isotropic TV and its gradient.

    Sum over voxels of sqrt(|grad z|^2 + eps^2) - eps with forward differences
    and zero-flux boundary. Works for real or complex ``z``; the complex
    gradient follows the real-pair convention.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    u, rho = _tv_parts(z, eps)
    value = float((rho - eps).sum())
    return value, _fwd_diff_adj(u / rho)


def tv_hvp(z, p, eps=DEFAULT_TV_EPS, parts=None):
    """Hessian-vector product of :func:`tv_smoothed` at ``z`` along ``p``.

    ``parts`` may pass the cached ``(u, rho)`` of ``z``.
    """
    u, rho = _tv_parts(z, eps) if parts is None else parts
    dp = _fwd_diff(p)
    proj = (u.real * dp.real + u.imag * dp.imag).sum(axis=0)
    proj /= rho ** 3
    dp /= rho
    dp -= u * proj
    return _fwd_diff_adj(dp)


# ---------------------------------------------------------------- encoding op

class Encoding:
    """S F and its weighted adjoint for one trajectory (fractional indices)."""

    def __init__(self, idx, n, weights=None):
        self.idx = np.ascontiguousarray(idx, dtype=np.float64)
        self.n = int(n)
        self.weights = (density_from_indices(self.idx, self.n) if weights is None
                        else np.ravel(np.asarray(weights, dtype=np.float64)))

    def forward(self, z):
        return kernels.sample(fftc(z), self.idx)

    def adjoint(self, y):
        """F^H S^H (w y)."""
        return ifftc(kernels.spread(self.weights * y, self.idx, self.n))

    def data_grad(self, z, y):
        return 2.0 * self.adjoint(self.forward(z) - y)

    def objective(self, z, y, alpha, eps):
        r = self.forward(z) - y
        val = float((self.weights * (r.real ** 2 + r.imag ** 2)).sum())
        if alpha:
            val += alpha * tv_smoothed(z, eps)[0]
        return val


# ---------------------------------------------------------------- parameters

@dataclass
class ReconParams:
    """Learnable parameters, stored as logs to keep them positive."""

    log_steps: np.ndarray = field(
        default_factory=lambda: np.full(DEFAULT_K_UNROLL, np.log(DEFAULT_STEP)))
    log_alpha: float = float(np.log(DEFAULT_ALPHA))
    tv_eps: float = DEFAULT_TV_EPS

    def __post_init__(self):
        self.log_steps = np.atleast_1d(np.asarray(self.log_steps, dtype=np.float64)).copy()
        self.log_alpha = float(self.log_alpha)
        if not self.tv_eps > 0:
            raise ValueError("tv_eps must be positive")

    @classmethod
    def create(cls, k_unroll=DEFAULT_K_UNROLL, step=DEFAULT_STEP, alpha=DEFAULT_ALPHA,
               tv_eps=DEFAULT_TV_EPS):
        if k_unroll < 0:
            raise ValueError("k_unroll must be non-negative")
        if step <= 0 or alpha <= 0:
            raise ValueError("step and alpha must be positive (log parameterization)")
        return cls(np.full(k_unroll, np.log(step)), np.log(alpha), tv_eps)

    @property
    def k_unroll(self) -> int:
        return self.log_steps.size

    @property
    def steps(self) -> np.ndarray:
        return np.exp(self.log_steps)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.log_steps, [self.log_alpha]])

    @classmethod
    def from_vector(cls, vec, tv_eps=DEFAULT_TV_EPS):
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[:-1], vec[-1], tv_eps)

    def copy(self) -> "ReconParams":
        return ReconParams(self.log_steps.copy(), self.log_alpha, self.tv_eps)


# ---------------------------------------------------------------- unrolled model

@dataclass
class UnrolledTape:
    """Forward states kept for the reverse pass."""

    enc: Encoding
    y: np.ndarray
    params: ReconParams
    states: list
    spectra: list
    residuals: list
    grads: list
    tv_grads: list
    tv_parts: list
    output: np.ndarray


def unrolled_forward(y, enc: Encoding, params: ReconParams) -> UnrolledTape:
    y = np.ravel(y)
    alpha, eps = params.alpha, params.tv_eps
    z = enc.adjoint(y)
    states, spectra, residuals, grads, tv_grads, tv_parts = [z], [], [], [], [], []
    for step in params.steps:
        u = fftc(z)
        r = kernels.sample(u, enc.idx) - y
        g = 2.0 * ifftc(kernels.spread(enc.weights * r, enc.idx, enc.n))
        tv_g = parts = None
        if alpha:
            parts = _tv_parts(z, eps)
            tv_g = _fwd_diff_adj(parts[0] / parts[1])
            g = g + alpha * tv_g
        z = z - step * g
        states.append(z)
        spectra.append(u)
        residuals.append(r)
        grads.append(g)
        tv_grads.append(tv_g)
        tv_parts.append(parts)
    return UnrolledTape(enc, y, params, states, spectra, residuals, grads, tv_grads,
                        tv_parts, np.abs(z))


def unrolled_backward(tape: UnrolledTape, out_bar, need_traj=True):
    """Reverse pass of :func:`unrolled_forward`.

    Args:
        tape: forward record.
        out_bar: cotangent of the magnitude output, real (n, n, n).
        need_traj: skip the trajectory cotangent when False.

    Returns:
        ``(y_bar, idx_bar, params_bar)`` where ``idx_bar`` is w.r.t. the
        fractional grid indices (None when ``need_traj`` is False) and
        ``params_bar`` is w.r.t. ``params.to_vector()``.
    """
    enc, y, params = tape.enc, tape.y, tape.params
    idx, w, n = enc.idx, enc.weights, enc.n
    alpha, eps = params.alpha, params.tv_eps
    steps = params.steps

    z_out = tape.states[-1]
    mag = np.abs(z_out)
    z_bar = np.where(mag > 0, out_bar * z_out / np.where(mag > 0, mag, 1.0), 0.0)

    y_bar = np.zeros(y.shape, dtype=np.complex128)
    idx_bar = np.zeros((y.size, 3)) if need_traj else None
    steps_bar = np.zeros(steps.size)
    alpha_bar = 0.0

    for t in range(steps.size - 1, -1, -1):
        z, g, tv_g = tape.states[t], tape.grads[t], tape.tv_grads[t]
        wr = w * tape.residuals[t]
        steps_bar[t] = -rdot(z_bar, g)
        g_bar = -steps[t] * z_bar
        if alpha:
            alpha_bar += rdot(g_bar, tv_g)

        q_bar = 2.0 * fftc(g_bar)
        if need_traj:
            r_bar = w * kernels.gather_accumulate(q_bar, idx, wr, idx_bar)
            kernels.gather_accumulate(tape.spectra[t], idx, r_bar, idx_bar)
        else:
            r_bar = w * kernels.sample(q_bar, idx)
        y_bar -= r_bar
        z_bar = z_bar + ifftc(kernels.spread(r_bar, idx, n))
        if alpha:
            z_bar += alpha * tv_hvp(z, g_bar, eps, tape.tv_parts[t])

    # z0 = F^H S^H (w y)
    q0 = fftc(z_bar)
    if need_traj:
        y_bar += w * kernels.gather_accumulate(q0, idx, w * y, idx_bar)
    else:
        y_bar += w * kernels.sample(q0, idx)

    params_bar = np.concatenate([steps_bar * steps, [alpha_bar * alpha]])
    return y_bar, idx_bar, params_bar


def recon_unrolled(meas, traj, params: ReconParams, weights=None) -> np.ndarray:
    """Magnitude reconstruction R_theta(meas) along ``traj``.

    With ``params.k_unroll == 0`` this is the density-compensated adjoint.
    """
    from .acquisition import _indices

    enc = Encoding(_indices(traj), traj.n, weights)
    return unrolled_forward(meas, enc, params).output


# ---------------------------------------------------------------- fixed CS solver

@dataclass
class SolveInfo:
    converged: bool
    iterations: int
    objective: list


def cs_tv_solve(meas, traj, alpha, iters=50, eps=DEFAULT_TV_EPS, weights=None,
                tol=1e-7, return_info=False):
    """Gradient descent with Armijo backtracking on the TV-regularized objective.

    Starts from the density-compensated adjoint. Emits a ``RuntimeWarning``
    and returns the best iterate when ``iters`` is exhausted before the
    relative objective decrease drops below ``tol``.
    """
    from .acquisition import _indices

    if iters < 1:
        raise ValueError("iters must be at least 1")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    enc = Encoding(_indices(traj), traj.n, weights)
    y = np.ravel(meas)
    z = enc.adjoint(y)
    f = enc.objective(z, y, alpha, eps)
    history = [f]
    t = 0.5
    converged = False
    it = 0
    for it in range(1, iters + 1):
        g = enc.data_grad(z, y)
        if alpha:
            g = g + alpha * tv_smoothed(z, eps)[1]
        gg = rdot(g, g)
        if gg == 0.0:
            converged = True
            break
        while True:
            z_new = z - t * g
            f_new = enc.objective(z_new, y, alpha, eps)
            if f_new <= f - 0.5 * t * gg:
                break
            t *= 0.5
            if t < 1e-20:
                break
        if f_new > f:
            converged = True
            break
        decrease = f - f_new
        z, f = z_new, f_new
        history.append(f)
        t *= 2.0
        if decrease <= tol * max(f, 1e-300):
            converged = True
            break
    if not converged:
        warnings.warn(f"cs_tv_solve did not converge in {iters} iterations", RuntimeWarning,
                      stacklevel=2)
    out = np.abs(z)
    if return_info:
        return out, SolveInfo(converged, it, history)
    return out
