"""Synthetic phantoms, training pairs and volume files.

Volumes are float64 arrays of shape (n, n, n) indexed [z, y, x]; k-space
volumes are complex128 with DC at index n // 2 on every axis.

F3DV file layout (little-endian)::

    offset  size  field
    0       4     magic b"F3DV"
    4       4     version (u32, currently 1)
    8       12    nz, ny, nx (u32 each)
    20      4     dtype code (u32): 1 = float32 real, 2 = complex64 (re, im pairs)
    24      ...   payload in C order

Random phantoms draw from numpy's PCG64 generator seeded with the user seed,
whose stream is fixed across platforms and numpy releases.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, TruncatedError
from .fourier import fftc, ifftc

# Modified (higher contrast) 3D Shepp-Logan table:
# amplitude, semi-axes (a, b, c), center (x0, y0, z0), rotation about z in degrees
SHEPP_LOGAN_3D = np.array([
    [1.0, 0.6900, 0.920, 0.810, 0.00, 0.0000, 0.00, 0.0],
    [-0.8, 0.6624, 0.874, 0.780, 0.00, -0.0184, 0.00, 0.0],
    [-0.2, 0.1100, 0.310, 0.220, 0.22, 0.0000, 0.00, -18.0],
    [-0.2, 0.1600, 0.410, 0.280, -0.22, 0.0000, 0.00, 18.0],
    [0.1, 0.2100, 0.250, 0.410, 0.00, 0.3500, -0.15, 0.0],
    [0.1, 0.0460, 0.046, 0.050, 0.00, 0.1000, 0.25, 0.0],
    [0.1, 0.0460, 0.046, 0.050, 0.00, -0.1000, 0.25, 0.0],
    [0.1, 0.0460, 0.023, 0.050, -0.08, -0.6050, 0.00, 0.0],
    [0.1, 0.0230, 0.023, 0.020, 0.00, -0.6060, 0.00, 0.0],
    [0.1, 0.0230, 0.046, 0.020, 0.06, -0.6050, 0.00, 0.0],
])


def voxel_centers(n: int) -> np.ndarray:
    """Voxel-center coordinates on [-1, 1], symmetric about 0."""
    return (np.arange(n) + 0.5) * (2.0 / n) - 1.0


def ellipsoid_mask(n, axes, center, rotation=np.eye(3)):
    c = voxel_centers(n)
    z, y, x = np.meshgrid(c, c, c, indexing="ij")
    pts = np.stack([x - center[0], y - center[1], z - center[2]], axis=-1)
    local = pts @ rotation  # rotation columns are the ellipsoid axes
    return ((local / np.asarray(axes)) ** 2).sum(axis=-1) <= 1.0


def _rot_z(deg):
    t = np.deg2rad(deg)
    ct, st = np.cos(t), np.sin(t)
    return np.array([[ct, -st, 0.0], [st, ct, 0.0], [0.0, 0.0, 1.0]])


def shepp_logan_3d(n: int, table=SHEPP_LOGAN_3D) -> np.ndarray:
    """3D Shepp-Logan phantom on an n^3 grid, scaled so its maximum is 1."""
    if n < 8:
        raise ValueError("phantom grid must be at least 8 per axis")
    vol = np.zeros((n, n, n))
    for amp, a, b, c, x0, y0, z0, phi in table:
        vol[ellipsoid_mask(n, (a, b, c), (x0, y0, z0), _rot_z(phi))] += amp
    vol = np.clip(vol, 0.0, None)
    return vol / vol.max()


def _random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_ellipsoids(n: int, count: int, seed: int) -> np.ndarray:
    """Sum of ``count`` random rotated ellipsoids, clipped to [0, 1]."""
    if count < 1:
        raise ValueError("count must be at least 1")
    if n < 8:
        raise ValueError("phantom grid must be at least 8 per axis")
    rng = np.random.default_rng(seed)
    vol = np.zeros((n, n, n))
    for _ in range(count):
        axes = rng.uniform(0.15, 0.5, size=3)
        center = rng.uniform(-0.8, 0.8, size=3) * (1.0 - axes.max())
        amp = rng.uniform(0.2, 1.0)
        vol[ellipsoid_mask(n, axes, center, _random_rotation(rng))] += amp
    return np.clip(vol, 0.0, 1.0)


def make_pair(z: np.ndarray):
    """Return ``(X, Z)`` with X the centered orthonormal FFT of Z."""
    z = np.asarray(z, dtype=np.float64)
    return fftc(z), z


def ground_truth(x: np.ndarray) -> np.ndarray:
    """Magnitude image of the fully sampled k-space."""
    return np.abs(ifftc(x))


@dataclass
class Dataset:
    """Paired fully-sampled k-space and ground-truth volumes."""

    kspace: list = field(default_factory=list)
    images: list = field(default_factory=list)
    names: list = field(default_factory=list)
    split: str = "train"

    def __len__(self):
        return len(self.images)

    def add(self, z, name=None):
        x, z = make_pair(z)
        self.kspace.append(x)
        self.images.append(z)
        self.names.append(name or f"vol{len(self.names):04d}")

    @classmethod
    def from_volumes(cls, volumes, split="train", names=None):
        ds = cls(split=split)
        for i, z in enumerate(volumes):
            ds.add(z, None if names is None else names[i])
        return ds


def phantom_dataset(n, count, seed, split="train", ellipsoids=6):
    """Random-ellipsoid dataset; item ``i`` uses seed ``seed * 100003 + i``."""
    vols = [random_ellipsoids(n, ellipsoids, seed * 100003 + i) for i in range(count)]
    return Dataset.from_volumes(vols, split=split)


# ---------------------------------------------------------------- F3DV files

_F3DV_HEADER = struct.Struct("<4sIIIII")
F3DV_VERSION = 1
_DTYPES = {1: ("<f4", 1), 2: ("<f4", 2)}


def _write_f3dv(path, arr, code):
    nz, ny, nx = arr.shape
    with open(path, "wb") as fh:
        fh.write(_F3DV_HEADER.pack(b"F3DV", F3DV_VERSION, nz, ny, nx, code))
        if code == 1:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        else:
            pairs = np.empty(arr.shape + (2,), dtype="<f4")
            pairs[..., 0] = arr.real
            pairs[..., 1] = arr.imag
            fh.write(pairs.tobytes())


def _read_f3dv(path, expect_code, expect_n=None):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != b"F3DV":
        raise FormatError(f"{path}: format mismatch (expected F3DV magic)")
    if len(raw) < _F3DV_HEADER.size:
        raise TruncatedError(f"{path}: truncated header")
    _, version, nz, ny, nx, code = _F3DV_HEADER.unpack_from(raw, 0)
    if version != F3DV_VERSION:
        raise FormatError(f"{path}: unsupported F3DV version {version}")
    if code != expect_code:
        raise FormatError(f"{path}: dtype code {code}, expected {expect_code}")
    if expect_n is not None and (nz, ny, nx) != (expect_n,) * 3:
        raise FormatError(f"{path}: dimension mismatch {(nz, ny, nx)} vs n={expect_n}")
    dtype, width = _DTYPES[code]
    count = nz * ny * nx * width
    if len(raw) - _F3DV_HEADER.size < count * 4:
        raise TruncatedError(f"{path}: truncated payload")
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=_F3DV_HEADER.size)
    if code == 1:
        return flat.reshape(nz, ny, nx).astype(np.float64)
    pairs = flat.reshape(nz, ny, nx, 2).astype(np.float64)
    return pairs[..., 0] + 1j * pairs[..., 1]


def save_volume(path, vol):
    vol = np.asarray(vol)
    if not np.all(np.isfinite(vol)):
        raise ValueError("volume contains non-finite values")
    _write_f3dv(path, vol, 1)


def load_volume(path, n=None):
    return _read_f3dv(path, 1, n)


def save_kspace(path, ks):
    ks = np.asarray(ks)
    if not np.all(np.isfinite(ks)):
        raise ValueError("k-space contains non-finite values")
    _write_f3dv(path, ks, 2)


def load_kspace(path, n=None):
    return _read_f3dv(path, 2, n)
