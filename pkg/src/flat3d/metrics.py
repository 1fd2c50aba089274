"""Image quality metrics on 3D volumes."""
import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(est, ref):
    """Peak SNR in dB with peak = max(ref); ``inf`` when the inputs are identical."""
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {ref.shape}")
    mse = np.mean((est - ref) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(ref.max() ** 2 / mse))


def gaussian_taps(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _filter(vol, taps):
    for ax in range(vol.ndim):
        vol = correlate1d(vol, taps, axis=ax, mode="reflect")
    return vol


def ssim3d(est, ref, window=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Mean local SSIM with a separable Gaussian window.

    The dynamic range is taken from ``ref`` (max - min). Local statistics use
    sample covariances and are averaged over voxels whose window fits inside
    the volume.
    """
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {ref.shape}")
    if min(ref.shape) < window:
        raise ValueError(f"window {window} larger than volume {ref.shape}")
    rng = ref.max() - ref.min()
    if rng == 0:
        rng = 1.0
    c1 = (SSIM_K1 * rng) ** 2
    c2 = (SSIM_K2 * rng) ** 2
    taps = gaussian_taps(window, sigma)
    mx = _filter(est, taps)
    my = _filter(ref, taps)
    cov_norm = window ** 3 / (window ** 3 - 1.0)
    vx = cov_norm * (_filter(est * est, taps) - mx * mx)
    vy = cov_norm * (_filter(ref * ref, taps) - my * my)
    vxy = cov_norm * (_filter(est * ref, taps) - mx * my)
    s = ((2 * mx * my + c1) * (2 * vxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2))
    pad = (window - 1) // 2
    inner = tuple(slice(pad, d - pad) for d in s.shape)
    return float(s[inner].mean())
