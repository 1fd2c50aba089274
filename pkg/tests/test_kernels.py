"""Trilinear kernels: both backends against a direct weighted-sum oracle."""
import itertools

import numpy as np
import pytest

from flat3d import _kernels_py, kernels

from conftest import crandn, rel_err

BACKENDS = [_kernels_py]
if kernels.BACKEND == "cython":
    from flat3d import _kernels
    BACKENDS.append(_kernels)


def oracle_sample(grid, pt):
    """Sum over the 8 corners with weights prod(1 - |d|), periodic indexing."""
    n = grid.shape[0]
    base = np.minimum(np.floor(pt).astype(int), n - 1)
    total = 0j
    for ox, oy, oz in itertools.product((0, 1), repeat=3):
        c = base + (ox, oy, oz)
        w = np.prod(1.0 - np.abs(pt - c))
        total += w * grid[c[2] % n, c[1] % n, c[0] % n]
    return total


@pytest.fixture(params=BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def backend(request):
    return request.param


def test_sample_matches_oracle(backend, rng):
    n = 8
    grid = crandn(rng, n, n, n)
    idx = rng.uniform(0, n, size=(50, 3))
    got = backend.sample(grid, idx)
    want = np.array([oracle_sample(grid, p) for p in idx])
    assert rel_err(got, want) < 1e-12


def test_sample_at_nodes_and_edge_midpoint(backend, rng):
    n = 6
    grid = crandn(rng, n, n, n)
    nodes = np.array([[0, 0, 0], [5, 2, 3], [1, 4, 0]], dtype=float)
    np.testing.assert_array_equal(backend.sample(grid, nodes),
                                  [grid[0, 0, 0], grid[3, 2, 5], grid[0, 4, 1]])
    mid = backend.sample(grid, np.array([[2.5, 1.0, 3.0]]))[0]
    assert mid == pytest.approx((grid[3, 1, 2] + grid[3, 1, 3]) / 2, rel=1e-14)


def test_upper_edge_wraps_to_zero(backend, rng):
    n = 4
    grid = crandn(rng, n, n, n)
    v = backend.sample(grid, np.array([[float(n), 0.0, 0.0]]))[0]
    assert v == grid[0, 0, 0]


def test_spread_is_adjoint_of_sample(backend, rng):
    n = 8
    grid = crandn(rng, n, n, n)
    idx = rng.uniform(0, n, size=(200, 3))
    y = crandn(rng, 200)
    lhs = np.vdot(y, backend.sample(grid, idx))
    rhs = np.vdot(backend.spread(y, idx, n), grid)
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_sample_grad_matches_finite_differences(backend, rng):
    n = 8
    grid = crandn(rng, n, n, n)
    idx = rng.uniform(0.5, n - 0.5, size=(30, 3))
    # stay away from cell faces where the derivative jumps
    idx = np.floor(idx) + np.clip(idx - np.floor(idx), 0.1, 0.9)
    g = backend.sample_grad(grid, idx)
    h = 1e-6
    for ax in range(3):
        e = np.zeros(3)
        e[ax] = h
        fd = (backend.sample(grid, idx + e) - backend.sample(grid, idx - e)) / (2 * h)
        assert rel_err(g[:, ax], fd) < 1e-7


def test_gather_accumulate_consistent(backend, rng):
    n = 8
    grid = crandn(rng, n, n, n)
    idx = rng.uniform(0, n, size=(40, 3))
    coef = crandn(rng, 40)
    acc = np.ones((40, 3))
    vals = backend.gather_accumulate(grid, idx, coef, acc)
    sg = backend.sample_and_grad(grid, idx)
    np.testing.assert_allclose(vals, sg[:, 0], rtol=1e-14)
    np.testing.assert_allclose(acc - 1.0, (np.conj(coef)[:, None] * sg[:, 1:]).real,
                               rtol=1e-12, atol=1e-13)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")
def test_backends_agree(rng):
    n = 10
    grid = crandn(rng, n, n, n)
    idx = rng.uniform(0, n, size=(500, 3))
    y = crandn(rng, 500)
    py, cy = BACKENDS
    np.testing.assert_allclose(cy.sample(grid, idx), py.sample(grid, idx), rtol=1e-13)
    np.testing.assert_allclose(cy.spread(y, idx, n), py.spread(y, idx, n),
                               rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(cy.sample_and_grad(grid, idx), py.sample_and_grad(grid, idx),
                               rtol=1e-12, atol=1e-13)


def test_pure_python_env_switch():
    import subprocess
    import sys

    code = "from flat3d import kernels; print(kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"FLAT3D_PURE_PYTHON": "1", "PATH": ""}, check=True)
    assert out.stdout.strip() == "python"
