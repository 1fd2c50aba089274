import warnings

import numpy as np
import pytest

from flat3d import data, recon as Rc
from flat3d.acquisition import _indices, sample
from flat3d.fourier import ifftc
from flat3d.metrics import psnr
from flat3d.regrid import adjoint_nufft, density_weights
from flat3d.trajectory import Trajectory, k_max_for, make_radial_3d, shots_for_af

from conftest import central_diff, crandn, rel_err
from test_regrid import full_node_traj

N, FOV = 16, 0.2
KM = k_max_for(N, FOV)


def test_tv_constant_and_step():
    v, g = Rc.tv_smoothed(np.full((6, 6, 6), 3.0), 1e-3)
    assert v == 0.0 and not g.any()
    z = np.zeros((8, 8, 8))
    z[:, :, 4:] = 1.0
    v, _ = Rc.tv_smoothed(z, 1e-9)
    assert v == pytest.approx(64.0, rel=1e-8)
    with pytest.raises(ValueError):
        Rc.tv_smoothed(z, 0.0)


@pytest.mark.parametrize("cplx", [False, True])
def test_tv_gradient_fd(rng, cplx):
    z = rng.normal(size=(6, 6, 6)) + (1j * rng.normal(size=(6, 6, 6)) if cplx else 0)
    eps = 0.1
    _, g = Rc.tv_smoothed(z, eps)
    for _ in range(4):
        d = rng.normal(size=z.shape) + (1j * rng.normal(size=z.shape) if cplx else 0)
        fd = central_diff(lambda x: Rc.tv_smoothed(x, eps)[0], z, d, 1e-6)
        assert rel_err(np.vdot(g, d).real, fd) < 1e-6


def test_tv_hvp_fd(rng):
    z, p = crandn(rng, 5, 5, 5), crandn(rng, 5, 5, 5)
    eps = 0.2
    hv = Rc.tv_hvp(z, p, eps)
    h = 1e-6
    fd = (Rc.tv_smoothed(z + h * p, eps)[1] - Rc.tv_smoothed(z - h * p, eps)[1]) / (2 * h)
    assert rel_err(hv, fd) < 1e-6


def test_k0_is_adjoint_baseline(rng):
    tr = Trajectory(rng.uniform(-KM, KM, (4, 30, 3)), FOV, N)
    y = crandn(rng, 4, 30)
    w = density_weights(tr)
    out = Rc.recon_unrolled(y, tr, Rc.ReconParams.create(0), w)
    np.testing.assert_array_equal(out, np.abs(adjoint_nufft(y, tr, weights=w)))


def test_single_step_full_nodes(rng):
    tr = full_node_traj()
    x = crandn(rng, N, N, N)
    y = sample(x, tr)
    # orthonormal system: the least-squares step for ||Az - y||^2 is 1/2
    params = Rc.ReconParams.create(1, step=0.5, alpha=1.0)
    params.log_alpha = -np.inf
    out = Rc.recon_unrolled(y, tr, params)
    np.testing.assert_allclose(out, np.abs(ifftc(x)), atol=1e-10)


def test_output_nonnegative(rng):
    tr = Trajectory(rng.uniform(-KM, KM, (4, 30, 3)), FOV, N)
    out = Rc.recon_unrolled(crandn(rng, 4, 30), tr, Rc.ReconParams.create(3))
    assert out.min() >= 0.0


def _setup(rng, shots=8, m=24):
    z = data.random_ellipsoids(N, 3, 5)
    x, _ = data.make_pair(z)
    tr = Trajectory(rng.uniform(-0.9, 0.9, (shots, m, 3)) * KM, FOV, N)
    return x, z, tr


def test_param_and_measurement_gradients_fd(rng):
    x, z, tr = _setup(rng)
    idx = _indices(tr)
    enc = Rc.Encoding(idx, N)
    y = sample(x, tr).ravel()
    params = Rc.ReconParams.create(3, step=0.4, alpha=0.05, tv_eps=0.05)
    cot = rng.normal(size=z.shape)

    def loss(vec=None, yy=y, ii=None):
        p = params if vec is None else Rc.ReconParams.from_vector(vec, params.tv_eps)
        e = enc if ii is None else Rc.Encoding(ii, N, enc.weights)
        return float((Rc.unrolled_forward(yy, e, p).output * cot).sum())

    tape = Rc.unrolled_forward(y, enc, params)
    y_bar, i_bar, p_bar = Rc.unrolled_backward(tape, cot)
    vec = params.to_vector()
    for _ in range(3):
        d = rng.normal(size=vec.shape)
        assert rel_err(p_bar @ d, central_diff(lambda v: loss(vec=v), vec, d, 1e-6)) < 1e-4
        dy = crandn(rng, y.size)
        fd = central_diff(lambda v: loss(yy=v), y, dy, 1e-6)
        assert rel_err(np.vdot(y_bar, dy).real, fd) < 1e-4
        di = rng.normal(size=idx.shape)
        fd = central_diff(lambda v: loss(ii=v), idx, di, 1e-6)
        assert rel_err(np.vdot(i_bar, di), fd) < 1e-4


def test_backward_without_traj_matches(rng):
    x, z, tr = _setup(rng)
    enc = Rc.Encoding(_indices(tr), N)
    tape = Rc.unrolled_forward(sample(x, tr).ravel(), enc, Rc.ReconParams.create(2))
    cot = rng.normal(size=z.shape)
    a = Rc.unrolled_backward(tape, cot, need_traj=True)
    b = Rc.unrolled_backward(tape, cot, need_traj=False)
    assert b[1] is None
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12)
    np.testing.assert_allclose(a[2], b[2], rtol=1e-12)


def test_cs_full_nodes_least_squares(rng):
    tr = full_node_traj()
    x = crandn(rng, N, N, N)
    out, info = Rc.cs_tv_solve(sample(x, tr), tr, 0.0, iters=20, return_info=True)
    assert info.converged
    np.testing.assert_allclose(out, np.abs(ifftc(x)), atol=1e-6)


def test_cs_monotone_and_beats_adjoint():
    n = 32
    km = k_max_for(n, FOV)
    tr = Trajectory(make_radial_3d(shots_for_af(n, 10), 384, km), FOV, n)
    z = data.shepp_logan_3d(n)
    x, _ = data.make_pair(z)
    y = sample(x, tr)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out, info = Rc.cs_tv_solve(y, tr, 1e-3, iters=30, return_info=True)
    assert np.all(np.diff(info.objective) <= 0)
    base = np.abs(adjoint_nufft(y, tr, weights=density_weights(tr)))
    assert psnr(out, z) >= psnr(base, z)


def test_cs_warns_when_not_converged(rng):
    x, z, tr = _setup(rng)
    with pytest.warns(RuntimeWarning, match="did not converge"):
        out, info = Rc.cs_tv_solve(sample(x, tr), tr, 1e-3, iters=1, return_info=True)
    assert not info.converged and out.shape == z.shape
    with pytest.raises(ValueError):
        Rc.cs_tv_solve(sample(x, tr), tr, 1e-3, iters=0)


def test_params_vector_roundtrip():
    p = Rc.ReconParams.create(4, 0.3, 0.02)
    q = Rc.ReconParams.from_vector(p.to_vector(), p.tv_eps)
    np.testing.assert_allclose(q.steps, 0.3)
    assert q.alpha == pytest.approx(0.02) and q.k_unroll == 4
    with pytest.raises(ValueError):
        Rc.ReconParams.create(2, step=-1.0)
