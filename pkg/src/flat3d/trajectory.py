"""Trajectory containers, reference trajectories, spline coarsening and
hardware-constraint evaluation.

Coordinates are physical spatial frequencies in m^-1 with k_max = n / (2 fov).
Arrays are shaped (n_shots, samples, 3) with the last axis ordered (kx, ky, kz).

F3DT file layout (little-endian)::

    offset  size  field
    0       4     magic b"F3DT"
    4       4     version (u32, currently 1)
    8       4     n_shots (u32)
    12      4     samples per shot (u32)
    16      8     fov in m (f64)
    24      8     k_max in m^-1 (f64)
    32      ...   coords, f64, shot-major, sample-major, axis-minor
"""
from __future__ import annotations

import functools
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, TruncatedError

GAMMA_HZ_PER_T = 42.576e6
DEFAULT_FOV = 0.2

LEARN_MASKS = {
    "3d": (True, True, True),
    "xy": (True, True, False),
    "frozen": (False, False, False),
}

_BOUND_RTOL = 1e-9


@dataclass(frozen=True)
class MachineConstraints:
    """Gradient hardware limits.

    ``v_max`` and ``a_max`` are derived on access so they can never go stale.
    """

    gamma: float = GAMMA_HZ_PER_T
    g_max: float = 0.04
    s_max: float = 200.0
    dt: float = 1e-5

    def __post_init__(self):
        for name in ("gamma", "g_max", "s_max", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def v_max(self) -> float:
        return self.gamma * self.g_max

    @property
    def a_max(self) -> float:
        return self.gamma * self.s_max


def k_max_for(n: int, fov: float) -> float:
    return n / (2.0 * fov)


def _check_bounds(coords, k_max):
    lim = k_max * (1.0 + _BOUND_RTOL)
    if coords.size and np.abs(coords).max() > lim:
        raise ValueError(f"coordinates exceed k_max={k_max:g} m^-1")


@dataclass
class Trajectory:
    coords: np.ndarray
    fov: float = DEFAULT_FOV
    n: int = 32

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[2] != 3:
            raise ValueError(f"coords must be (n_shots, m, 3), got {self.coords.shape}")
        _check_bounds(self.coords, self.k_max)

    @property
    def n_shots(self) -> int:
        return self.coords.shape[0]

    @property
    def m(self) -> int:
        return self.coords.shape[1]

    @property
    def k_max(self) -> float:
        return k_max_for(self.n, self.fov)

    def grid_index(self) -> np.ndarray:
        """Fractional grid indices (P, 3); DC sits at index n / 2."""
        return self.coords.reshape(-1, 3) * self.fov + self.n / 2.0


@dataclass
class AnchorTrajectory:
    """Coarse learnable path; the dense path is its cubic-spline interpolant."""

    coords: np.ndarray
    fov: float = DEFAULT_FOV
    n: int = 32
    learn_mask: tuple = field(default=LEARN_MASKS["3d"])

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[2] != 3:
            raise ValueError(f"coords must be (n_shots, m', 3), got {self.coords.shape}")
        if self.coords.shape[1] < 4:
            raise ValueError("a cubic spline needs at least 4 anchors per shot")
        if isinstance(self.learn_mask, str):
            self.learn_mask = LEARN_MASKS[self.learn_mask]
        self.learn_mask = tuple(bool(b) for b in self.learn_mask)
        _check_bounds(self.coords, self.k_max)

    @property
    def n_shots(self) -> int:
        return self.coords.shape[0]

    @property
    def m_anchors(self) -> int:
        return self.coords.shape[1]

    @property
    def k_max(self) -> float:
        return k_max_for(self.n, self.fov)

    def mask_array(self) -> np.ndarray:
        return np.array(self.learn_mask, dtype=bool)

    def copy(self) -> "AnchorTrajectory":
        return AnchorTrajectory(self.coords.copy(), self.fov, self.n, self.learn_mask)


@dataclass(frozen=True)
class FeasibilityReport:
    max_speed: float
    max_accel: float
    speed_margin: float
    accel_margin: float
    violation_count: int

    @property
    def feasible(self) -> bool:
        return self.violation_count == 0

    def to_text(self) -> str:
        return "".join(
            f"{k} = {getattr(self, k)!r}\n"
            for k in ("max_speed", "max_accel", "speed_margin", "accel_margin", "violation_count")
        ) + f"feasible = {self.feasible}\n"


# ---------------------------------------------------------------- reference paths

def acceleration_factor(n: int, n_shots: int) -> float:
    return n * n / n_shots


def shots_for_af(n: int, af: float) -> int:
    """Shot count for a target acceleration factor n^2 / n_shots, rounded half-up."""
    if af <= 0:
        raise ValueError("acceleration factor must be positive")
    return max(1, int(np.floor(n * n / af + 0.5)))


def fibonacci_hemisphere(count: int) -> np.ndarray:
    """Quasi-uniform unit vectors on the upper hemisphere (spherical Fibonacci)."""
    i = np.arange(count, dtype=np.float64)
    z = 1.0 - (i + 0.5) / count
    r = np.sqrt(1.0 - z * z)
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def make_radial_3d(n_shots: int, m: int, k_max: float) -> np.ndarray:
    """Kooshball of diameter spokes from -k_max d to +k_max d.

    Returns coords of shape (n_shots, m, 3).
    """
    if n_shots < 1 or m < 2:
        raise ValueError("need n_shots >= 1 and m >= 2")
    if not k_max > 0:
        raise ValueError("k_max must be positive")
    dirs = fibonacci_hemisphere(n_shots)
    t = np.linspace(-1.0, 1.0, m)
    coords = k_max * t[None, :, None] * dirs[:, None, :]
    # odd m: pin the middle sample to the exact origin
    if m % 2 == 1:
        coords[:, m // 2, :] = 0.0
    return coords


def make_stack_of_stars(n_shots: int, m: int, k_max: float, n_slices: int) -> np.ndarray:
    """2D radial stars in the xy plane replicated over equispaced k_z planes.

    Plane ``s`` sits at k_z = k_max (2 s + 1 - n_slices) / n_slices, so a single
    slice is the k_z = 0 plane. Spokes within a plane are at angles p pi / P.
    """
    if n_slices < 1 or n_shots % n_slices:
        raise ValueError(f"n_shots={n_shots} is not divisible by n_slices={n_slices}")
    if m < 2 or not k_max > 0:
        raise ValueError("need m >= 2 and k_max > 0")
    per = n_shots // n_slices
    ang = np.arange(per) * np.pi / per
    kz = k_max * (2.0 * np.arange(n_slices) + 1.0 - n_slices) / n_slices
    t = k_max * np.linspace(-1.0, 1.0, m)
    if m % 2 == 1:
        t[m // 2] = 0.0
    coords = np.empty((n_slices, per, m, 3))
    coords[..., 0] = np.cos(ang)[None, :, None] * t
    coords[..., 1] = np.sin(ang)[None, :, None] * t
    coords[..., 2] = kz[:, None, None]
    return coords.reshape(n_shots, m, 3)


def default_slices(n_shots: int, n: int) -> int:
    """Largest divisor of n_shots not exceeding n."""
    return max(d for d in range(1, min(n, n_shots) + 1) if n_shots % d == 0)


# ---------------------------------------------------------------- cubic spline

def _natural_second_derivs(m_anchors: int) -> np.ndarray:
    """Matrix mapping anchor values to natural-spline second derivatives (unit knots)."""
    k = m_anchors
    out = np.zeros((k, k))
    if k <= 2:
        return out
    inner = k - 2
    tri = 4.0 * np.eye(inner) + np.eye(inner, k=1) + np.eye(inner, k=-1)
    rhs = np.zeros((inner, k))
    for i in range(inner):
        rhs[i, i:i + 3] = (6.0, -12.0, 6.0)
    out[1:-1] = np.linalg.solve(tri, rhs)
    return out


def spline_matrix(m_anchors: int, params) -> np.ndarray:
    """Linear map from anchors to natural cubic spline values at ``params``.

    Anchor ``i`` sits at parameter ``i``; params must lie in [0, m_anchors - 1].
    """
    params = np.asarray(params, dtype=np.float64)
    if m_anchors < 4:
        raise ValueError("a cubic spline needs at least 4 anchors")
    if params.size and (params.min() < 0 or params.max() > m_anchors - 1):
        raise ValueError("spline parameters outside the anchor range")
    m2 = _natural_second_derivs(m_anchors)
    seg = np.minimum(np.floor(params).astype(np.int64), m_anchors - 2)
    s = params - seg
    rows = np.arange(params.size)
    lin = np.zeros((params.size, m_anchors))
    lin[rows, seg] = 1.0 - s
    lin[rows, seg + 1] += s
    c0 = ((1.0 - s) ** 3 - (1.0 - s)) / 6.0
    c1 = (s ** 3 - s) / 6.0
    return lin + c0[:, None] * m2[seg] + c1[:, None] * m2[seg + 1]


@functools.lru_cache(maxsize=32)
def _dense_matrix(m_anchors: int, m: int) -> np.ndarray:
    mat = spline_matrix(m_anchors, np.linspace(0.0, m_anchors - 1.0, m))
    mat.setflags(write=False)
    return mat


class SplineInterpolator:
    """The fixed linear map L (m x m') applied per shot and per axis."""

    def __init__(self, m_anchors: int, m: int):
        if m_anchors < 4:
            raise ValueError("a cubic spline needs at least 4 anchors")
        if m < m_anchors:
            raise ValueError("dense length must be at least the anchor count")
        self.m_anchors = m_anchors
        self.m = m
        self.matrix = _dense_matrix(m_anchors, m)

    def apply(self, anchors: np.ndarray) -> np.ndarray:
        """(S, m', 3) -> (S, m, 3)."""
        return np.einsum("ij,sjc->sic", self.matrix, anchors)

    def apply_transpose(self, v: np.ndarray) -> np.ndarray:
        """(S, m, 3) -> (S, m', 3); the adjoint used for backpropagation."""
        return np.einsum("ij,sic->sjc", self.matrix, v)


def dense_path(spline: SplineInterpolator, coords: np.ndarray, k_max: float):
    """Spline-interpolate and clamp into [-k_max, k_max].

    The natural spline may overshoot between in-bounds anchors. Returns the
    clamped path and the mask of entries left untouched, which is where the
    clamp passes gradient.
    """
    dense = spline.apply(coords)
    inside = np.abs(dense) <= k_max
    np.clip(dense, -k_max, k_max, out=dense)
    return dense, inside


def spline_interpolate(anchors: AnchorTrajectory, m: int) -> Trajectory:
    spline = SplineInterpolator(anchors.m_anchors, m)
    dense, _ = dense_path(spline, anchors.coords, anchors.k_max)
    return Trajectory(dense, anchors.fov, anchors.n)


def fit_anchors(coords: np.ndarray, m_anchors: int) -> np.ndarray:
    """Least-squares anchors whose spline best reproduces a dense path."""
    m = coords.shape[1]
    mat = SplineInterpolator(m_anchors, m).matrix
    pinv = np.linalg.pinv(mat)
    return np.einsum("ji,sic->sjc", pinv, coords)


# ---------------------------------------------------------------- constraints

def kinematics(traj: Trajectory, c: MachineConstraints):
    """Per-axis finite-difference speeds (S, m-1, 3) and accelerations (S, m-2, 3)."""
    k = traj.coords if isinstance(traj, Trajectory) else np.asarray(traj)
    if k.shape[1] < 3:
        raise ValueError("kinematics needs at least 3 samples per shot")
    speeds = np.abs(np.diff(k, axis=1)) / c.dt
    accels = np.abs(k[:, 2:] - 2.0 * k[:, 1:-1] + k[:, :-2]) / c.dt ** 2
    return speeds, accels


def _dense_penalty(dense, c, lambda_v, lambda_a):
    """Hinge penalty on a dense path and its gradient w.r.t. that path."""
    d1 = np.diff(dense, axis=1) / c.dt
    d2 = (dense[:, 2:] - 2.0 * dense[:, 1:-1] + dense[:, :-2]) / c.dt ** 2
    over_v = np.abs(d1) - c.v_max
    over_a = np.abs(d2) - c.a_max
    act_v = over_v > 0
    act_a = over_a > 0
    value = lambda_v * over_v[act_v].sum() + lambda_a * over_a[act_a].sum()

    grad = np.zeros_like(dense)
    gv = lambda_v * np.sign(d1) * act_v / c.dt
    grad[:, 1:] += gv
    grad[:, :-1] -= gv
    ga = lambda_a * np.sign(d2) * act_a / c.dt ** 2
    grad[:, 2:] += ga
    grad[:, 1:-1] -= 2.0 * ga
    grad[:, :-2] += ga
    return float(value), grad


def constraint_penalty(anchors: AnchorTrajectory, m: int, c: MachineConstraints,
                       lambda_v: float, lambda_a: float):
    """Weighted hinge penalty on the dense spline path.

    Returns ``(value, grad)`` with ``grad`` shaped like ``anchors.coords``;
    axes excluded by ``anchors.learn_mask`` get zero gradient.
    """
    if lambda_v < 0 or lambda_a < 0:
        raise ValueError("penalty weights must be non-negative")
    spline = SplineInterpolator(anchors.m_anchors, m)
    dense, inside = dense_path(spline, anchors.coords, anchors.k_max)
    value, g_dense = _dense_penalty(dense, c, lambda_v, lambda_a)
    grad = spline.apply_transpose(g_dense * inside)
    grad[..., ~anchors.mask_array()] = 0.0
    return value, grad


def feasibility_report(traj, c: MachineConstraints) -> FeasibilityReport:
    """Summarize peak speed/acceleration against the machine limits.

    ``violation_count`` counts per-axis finite-difference entries over either limit.
    """
    speeds, accels = kinematics(traj, c)
    max_speed = float(speeds.max()) if speeds.size else 0.0
    max_accel = float(accels.max()) if accels.size else 0.0
    count = int((speeds > c.v_max).sum() + (accels > c.a_max).sum())
    return FeasibilityReport(max_speed, max_accel, max_speed / c.v_max,
                             max_accel / c.a_max, count)


# ---------------------------------------------------------------- F3DT files

_F3DT_HEADER = struct.Struct("<4sIII")
_F3DT_SCALARS = struct.Struct("<dd")
F3DT_VERSION = 1


def write_f3dt(path, coords: np.ndarray, fov: float, k_max: float) -> None:
    coords = np.asarray(coords, dtype="<f8")
    s, m, _ = coords.shape
    with open(path, "wb") as fh:
        fh.write(_F3DT_HEADER.pack(b"F3DT", F3DT_VERSION, s, m))
        fh.write(_F3DT_SCALARS.pack(fov, k_max))
        fh.write(np.ascontiguousarray(coords).tobytes())


def read_f3dt(path):
    """Return ``(coords, fov, k_max)`` from an F3DT file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    head = _F3DT_HEADER.size + _F3DT_SCALARS.size
    if len(raw) < 4 or raw[:4] != b"F3DT":
        raise FormatError(f"{path}: format mismatch (expected F3DT magic)")
    if len(raw) < head:
        raise TruncatedError(f"{path}: truncated header")
    _, version, s, m = _F3DT_HEADER.unpack_from(raw, 0)
    if version != F3DT_VERSION:
        raise FormatError(f"{path}: unsupported F3DT version {version}")
    fov, k_max = _F3DT_SCALARS.unpack_from(raw, _F3DT_HEADER.size)
    need = s * m * 3 * 8
    if len(raw) - head < need:
        raise TruncatedError(f"{path}: truncated payload ({len(raw) - head} of {need} bytes)")
    coords = np.frombuffer(raw, dtype="<f8", count=s * m * 3, offset=head)
    return coords.reshape(s, m, 3).astype(np.float64), fov, k_max


def save_anchors(path, anchors: AnchorTrajectory) -> None:
    write_f3dt(path, anchors.coords, anchors.fov, anchors.k_max)


def load_anchors(path, learn_mask="3d") -> AnchorTrajectory:
    coords, fov, k_max = read_f3dt(path)
    n = int(round(2.0 * fov * k_max))
    return AnchorTrajectory(coords, fov, n, learn_mask)
