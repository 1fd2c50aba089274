"""Centered orthonormal 3D FFTs (DC at index n // 2 on every axis)."""
import numpy as np
import scipy.fft as sfft

_AXES = (-3, -2, -1)


def fftc(x):
    return sfft.fftshift(
        sfft.fftn(sfft.ifftshift(x, axes=_AXES), axes=_AXES, norm="ortho"), axes=_AXES
    )


def ifftc(x):
    return sfft.fftshift(
        sfft.ifftn(sfft.ifftshift(x, axes=_AXES), axes=_AXES, norm="ortho"), axes=_AXES
    )


def rdot(a, b):
    """Real inner product Re<a, b> treating complex entries as real pairs."""
    return float(np.vdot(a, b).real)
