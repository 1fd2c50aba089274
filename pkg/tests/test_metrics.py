import numpy as np
import pytest

from flat3d import data
from flat3d.metrics import psnr, ssim3d


def test_identity_cases(rng):
    z = rng.uniform(size=(10, 10, 10))
    assert psnr(z, z) == float("inf")
    assert ssim3d(z, z) == 1.0
    c = np.full((8, 8, 8), 0.4)
    assert ssim3d(c, c.copy()) == 1.0


def test_psnr_20db(rng):
    z = rng.uniform(size=(9, 9, 9))
    z[0, 0, 0] = 1.0
    assert psnr(z + 0.1, z) == pytest.approx(20.0, abs=1e-12)


def test_psnr_brute_force(rng):
    a, b = rng.uniform(size=(2, 7, 7, 7))
    mse = sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
    assert psnr(a, b) == pytest.approx(10 * np.log10(b.max() ** 2 / mse), rel=1e-12)


def test_psnr_decreases_with_noise(rng):
    z = data.shepp_logan_3d(16)
    noise = rng.normal(size=z.shape)
    vals = [psnr(z + s * noise, z) for s in (0.01, 0.05, 0.2)]
    assert vals[0] > vals[1] > vals[2]


def test_ssim_anticorrelated():
    z = data.shepp_logan_3d(16)
    assert ssim3d(1 - z, z) < 0


def direct_ssim(est, ref):
    """Window-by-window SSIM over voxels whose 7^3 window fits inside."""
    t = np.exp(-0.5 * (np.arange(-3, 4) / 1.5) ** 2)
    w = np.einsum("i,j,k->ijk", t, t, t)
    w /= w.sum()
    rng = ref.max() - ref.min()
    c1, c2 = (0.01 * rng) ** 2, (0.03 * rng) ** 2
    norm = 343 / 342
    vals = []
    for i in range(3, ref.shape[0] - 3):
        for j in range(3, ref.shape[1] - 3):
            for k in range(3, ref.shape[2] - 3):
                a = est[i - 3:i + 4, j - 3:j + 4, k - 3:k + 4]
                b = ref[i - 3:i + 4, j - 3:j + 4, k - 3:k + 4]
                ma, mb = (w * a).sum(), (w * b).sum()
                va = norm * ((w * a * a).sum() - ma * ma)
                vb = norm * ((w * b * b).sum() - mb * mb)
                cov = norm * ((w * a * b).sum() - ma * mb)
                vals.append((2 * ma * mb + c1) * (2 * cov + c2)
                            / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_ssim_matches_direct_formula(rng):
    z = data.random_ellipsoids(10, 4, 3)
    est = z + 0.05 * rng.normal(size=z.shape)
    assert ssim3d(est, z) == pytest.approx(direct_ssim(est, z), rel=1e-10)


def test_ssim_symmetric_with_shared_range(rng):
    a, b = rng.uniform(size=(2, 9, 9, 9))
    a[0, 0, 0], b[0, 0, 0] = 0.0, 0.0
    a[1, 1, 1], b[1, 1, 1] = 1.0, 1.0
    assert ssim3d(a, b) == pytest.approx(ssim3d(b, a), rel=1e-12)


def test_errors():
    with pytest.raises(ValueError):
        ssim3d(np.zeros((5, 5, 5)), np.zeros((5, 5, 5)))
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((3, 3)))
