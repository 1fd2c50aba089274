"""Joint objective, Adam and the training loop over trajectory and recon params.

Trajectory anchors are optimized in grid units (m^-1 times fov, one unit per
Cartesian k-space cell), so ``lr_traj`` is a step length in cells. Anchors
are clamped into [-k_max, k_max] after every step.

Checkpoint blob ``params.bin`` (little-endian)::

    magic b"F3DC", version u32, k_unroll u32, anchor value count N u32
    tv_eps f64, log_steps f64[k_unroll], log_alpha f64
    adam step count u64
    adam m f64[k_unroll + 1], adam v f64[k_unroll + 1]   (recon params)
    adam m f64[N], adam v f64[N]                         (anchors, grid units)
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import FormatError, NumericalError, TruncatedError
from .metrics import psnr, ssim3d
from .recon import Encoding, ReconParams, unrolled_backward, unrolled_forward
from .trajectory import (AnchorTrajectory, MachineConstraints, SplineInterpolator,
                         _dense_penalty, dense_path, feasibility_report, load_anchors,
                         save_anchors)
from .acquisition import check_indices

log = logging.getLogger(__name__)


@dataclass
class OptimConfig:
    lr_traj: float = 0.005
    lr_recon: float = 0.001
    lambda_v: float | None = None
    lambda_a: float | None = None
    epochs: int = 10
    batch_size: int = 4
    learn_mode: str | None = None
    m: int = 384
    seed: int = 0
    k_unroll: int = 8
    init_step: float = 0.5
    init_alpha: float = 1e-3
    tv_eps: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    gamma: float = 42.576e6
    g_max: float = 0.04
    s_max: float = 200.0
    dt: float = 1e-5

    def __post_init__(self):
        if self.lr_traj < 0 or self.lr_recon < 0:
            raise ValueError("learning rates must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        c = self.constraints
        if self.lambda_v is None:
            self.lambda_v = 0.1 / c.v_max
        if self.lambda_a is None:
            self.lambda_a = 0.1 / c.a_max
        if self.lambda_v < 0 or self.lambda_a < 0:
            raise ValueError("penalty weights must be non-negative")

    @property
    def constraints(self) -> MachineConstraints:
        return MachineConstraints(self.gamma, self.g_max, self.s_max, self.dt)

    @classmethod
    def from_file(cls, path) -> "OptimConfig":
        """Parse a flat ``key = value`` file; ``#`` starts a comment."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            kwargs[key] = _coerce(types[key], value)
        return cls(**kwargs)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))


def _coerce(typ, value):
    typ = str(typ)
    if value.lower() == "none":
        return None
    if typ.startswith("int"):
        return int(value)
    if typ.startswith("float"):
        return float(value)
    return value


# ---------------------------------------------------------------- losses

def l1_loss(est, ref):
    """Mean absolute difference and its (sub)gradient w.r.t. ``est``."""
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {ref.shape}")
    d = est - ref
    return float(np.abs(d).mean()), np.sign(d) / d.size


@dataclass
class LossResult:
    value: float
    task: float
    const: float
    anchor_grad: np.ndarray
    params_grad: np.ndarray


def total_loss(batch, anchors: AnchorTrajectory, params: ReconParams, config: OptimConfig,
               need_traj: bool | None = None, weights=None) -> LossResult:
    """Mean task loss over ``batch`` plus the constraint penalty, with gradients.

    Args:
        batch: sequence of ``(X, Z)`` pairs.
        anchors: current anchors; masked axes get zero gradient.
        params: reconstruction parameters.
        config: supplies dense length ``m``, machine limits and penalty weights.
        need_traj: compute the anchor gradient; defaults to whether any axis
            is learnable.
        weights: density weights to use instead of recomputing them from the
            current path. They never receive gradient either way.

    Returns:
        :class:`LossResult` with ``anchor_grad`` in m^-1 units and
        ``params_grad`` w.r.t. ``params.to_vector()``.
    """
    mask = anchors.mask_array()
    if need_traj is None:
        need_traj = bool(mask.any())
    spline = SplineInterpolator(anchors.m_anchors, config.m)
    dense, inside = dense_path(spline, anchors.coords, anchors.k_max)
    n, fov = anchors.n, anchors.fov
    idx = dense.reshape(-1, 3) * fov + n / 2.0
    check_indices(idx, n, config.m)
    enc = Encoding(idx, n, weights)

    task = 0.0
    params_grad = np.zeros(params.k_unroll + 1)
    idx_grad = np.zeros(idx.shape) if need_traj else None
    for x, z in batch:
        y = kernels.sample(x, idx)
        tape = unrolled_forward(y, enc, params)
        val, out_bar = l1_loss(tape.output, z)
        task += val
        y_bar, i_bar, p_bar = unrolled_backward(tape, out_bar, need_traj)
        params_grad += p_bar
        if need_traj:
            idx_grad += i_bar
            kernels.gather_accumulate(x, idx, y_bar, idx_grad)
    nb = len(batch)
    task /= nb
    params_grad /= nb

    c = config.constraints
    const, g_dense = _dense_penalty(dense, c, config.lambda_v, config.lambda_a)
    if need_traj:
        g_dense = g_dense + idx_grad.reshape(dense.shape) * (fov / nb)
    anchor_grad = spline.apply_transpose(g_dense * inside)
    anchor_grad[..., ~mask] = 0.0
    return LossResult(task + const, task, const, anchor_grad, params_grad)


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adam_step(values, grads, state: AdamState, lr, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update; returns ``(new_values, new_state)``."""
    b1, b2 = betas
    m = np.zeros_like(values) if state.m is None else state.m
    v = np.zeros_like(values) if state.v is None else state.v
    t = state.t + 1
    m = b1 * m + (1.0 - b1) * grads
    v = b2 * v + (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    return values - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(t, m, v)


# ---------------------------------------------------------------- training

@dataclass
class EpochRecord:
    epoch: int
    task: float
    const: float
    val_psnr: float
    val_ssim: float
    speed_margin: float
    accel_margin: float

    FIELDS = ("epoch", "task", "const", "val_psnr", "val_ssim", "speed_margin",
              "accel_margin")


@dataclass
class TrainingHistory:
    initial_val_psnr: float = float("nan")
    initial_val_ssim: float = float("nan")
    records: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EpochRecord.FIELDS)
            w.writerow([-1, "", "", repr(self.initial_val_psnr), repr(self.initial_val_ssim),
                        "", ""])
            for r in self.records:
                w.writerow([r.epoch] + [repr(getattr(r, k)) for k in EpochRecord.FIELDS[1:]])

    @classmethod
    def read_csv(cls, path):
        hist = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if int(row["epoch"]) < 0:
                    hist.initial_val_psnr = float(row["val_psnr"])
                    hist.initial_val_ssim = float(row["val_ssim"])
                    continue
                hist.records.append(EpochRecord(
                    int(row["epoch"]), *(float(row[k]) for k in EpochRecord.FIELDS[1:])))
        return hist


def reconstruct_dataset(dataset, anchors: AnchorTrajectory, params: ReconParams, m: int):
    """Reconstruct every item of ``(X, Z)`` pairs; returns the list of images."""
    spline = SplineInterpolator(anchors.m_anchors, m)
    dense, _ = dense_path(spline, anchors.coords, anchors.k_max)
    idx = dense.reshape(-1, 3) * anchors.fov + anchors.n / 2.0
    check_indices(idx, anchors.n, m)
    enc = Encoding(idx, anchors.n)
    return [unrolled_forward(kernels.sample(x, idx), enc, params).output for x, _ in dataset]


def evaluate(dataset, anchors, params, m):
    """Mean PSNR and SSIM of the unrolled reconstruction over ``dataset``."""
    outs = reconstruct_dataset(dataset, anchors, params, m)
    p = [psnr(o, z) for o, (_, z) in zip(outs, dataset)]
    s = [ssim3d(o, z) for o, (_, z) in zip(outs, dataset)]
    return float(np.mean(p)), float(np.mean(s))


def _pairs(dataset):
    if hasattr(dataset, "kspace"):
        return list(zip(dataset.kspace, dataset.images))
    return list(dataset)


def optimize_joint(train, anchors: AnchorTrajectory, params: ReconParams,
                   config: OptimConfig, val=None, snapshot_every=0, progress=None):
    """Mini-batch Adam on anchors and reconstruction parameters.

    Args:
        train: training pairs ``(X, Z)`` or a :class:`~flat3d.data.Dataset`.
        anchors: initial anchors (not modified).
        params: initial parameters (not modified).
        config: optimization settings; ``learn_mode`` overrides the anchors' mask.
        val: optional validation pairs evaluated after every epoch.
        snapshot_every: keep an anchor snapshot every this many epochs.
        progress: optional callable receiving each :class:`EpochRecord`.

    Returns:
        ``(anchors, params, history, report, adam_state)`` where ``report`` is
        the :class:`~flat3d.trajectory.FeasibilityReport` of the final dense
        path and ``adam_state`` maps "params"/"anchors" to :class:`AdamState`.
    """
    train = _pairs(train)
    val = _pairs(val) if val is not None else []
    if not train:
        raise ValueError("training set is empty")
    anchors = anchors.copy()
    if config.learn_mode is not None:
        anchors.learn_mask = AnchorTrajectory(
            anchors.coords, anchors.fov, anchors.n, config.learn_mode).learn_mask
    params = params.copy()
    fov, k_max = anchors.fov, anchors.k_max
    mask = anchors.mask_array()
    c = config.constraints
    betas = (config.beta1, config.beta2)
    rng = np.random.default_rng(config.seed)

    theta = params.to_vector()
    st_theta, st_anchor = AdamState(), AdamState()
    history = TrainingHistory()
    if val:
        history.initial_val_psnr, history.initial_val_ssim = evaluate(val, anchors, params,
                                                                      config.m)

    for epoch in range(config.epochs):
        order = rng.permutation(len(train))
        task_sum = const_sum = 0.0
        nbatches = 0
        for b, start in enumerate(range(0, len(train), config.batch_size)):
            batch = [train[i] for i in order[start:start + config.batch_size]]
            res = total_loss(batch, anchors, params, config)
            if not (np.isfinite(res.value) and np.all(np.isfinite(res.anchor_grad))
                    and np.all(np.isfinite(res.params_grad))):
                raise NumericalError(f"non-finite loss or gradient at epoch {epoch}, batch {b}")
            task_sum += res.task
            const_sum += res.const
            nbatches += 1
            theta, st_theta = adam_step(theta, res.params_grad, st_theta, config.lr_recon,
                                        betas, config.adam_eps)
            # chain rule into grid units: d/d(k fov) = (1/fov) d/dk
            step, st_anchor = adam_step(np.zeros_like(anchors.coords), res.anchor_grad / fov,
                                        st_anchor, config.lr_traj, betas, config.adam_eps)
            coords = np.clip(anchors.coords + step / fov, -k_max, k_max)
            # masked axes keep their exact original values
            coords[..., ~mask] = anchors.coords[..., ~mask]
            anchors.coords = coords
            params = ReconParams.from_vector(theta, params.tv_eps)

        rep = feasibility_report(
            dense_path(SplineInterpolator(anchors.m_anchors, config.m), anchors.coords,
                       k_max)[0], c)
        vp, vs = evaluate(val, anchors, params, config.m) if val else (float("nan"),) * 2
        rec = EpochRecord(epoch, task_sum / nbatches, const_sum / nbatches, vp, vs,
                          rep.speed_margin, rep.accel_margin)
        history.records.append(rec)
        if snapshot_every and (epoch + 1) % snapshot_every == 0:
            history.snapshots[epoch] = anchors.coords.copy()
        log.info("epoch %d task %.5f const %.3g val psnr %.3f", epoch, rec.task, rec.const, vp)
        if progress is not None:
            progress(rec)

    report = feasibility_report(
        dense_path(SplineInterpolator(anchors.m_anchors, config.m), anchors.coords, k_max)[0], c)
    state = {"params": st_theta, "anchors": st_anchor}
    return anchors, params, history, report, state


# ---------------------------------------------------------------- checkpoints

_CKPT_HEAD = struct.Struct("<4sIII")
CKPT_VERSION = 1


def write_params(path, params: ReconParams, anchor_size: int, state=None):
    state = state or {}
    sp = state.get("params", AdamState())
    sa = state.get("anchors", AdamState())
    k = params.k_unroll

    def arr(a, size):
        return np.zeros(size) if a is None else np.ravel(a)

    with open(path, "wb") as fh:
        fh.write(_CKPT_HEAD.pack(b"F3DC", CKPT_VERSION, k, anchor_size))
        fh.write(struct.pack("<d", params.tv_eps))
        fh.write(np.asarray(params.to_vector(), dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", sp.t))
        for a, size in ((sp.m, k + 1), (sp.v, k + 1), (sa.m, anchor_size), (sa.v, anchor_size)):
            fh.write(np.asarray(arr(a, size), dtype="<f8").tobytes())


def read_params(path):
    """Return ``(params, state)`` from a checkpoint blob."""
    raw = Path(path).read_bytes()
    if raw[:4] != b"F3DC":
        raise FormatError(f"{path}: format mismatch (expected F3DC magic)")
    if len(raw) < _CKPT_HEAD.size:
        raise TruncatedError(f"{path}: truncated header")
    _, version, k, na = _CKPT_HEAD.unpack_from(raw, 0)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    need = _CKPT_HEAD.size + 8 + 8 * (k + 1) + 8 + 8 * (2 * (k + 1) + 2 * na)
    if len(raw) < need:
        raise TruncatedError(f"{path}: truncated payload")
    off = _CKPT_HEAD.size
    (tv_eps,) = struct.unpack_from("<d", raw, off)
    off += 8
    vec = np.frombuffer(raw, "<f8", k + 1, off).astype(np.float64)
    off += 8 * (k + 1)
    (t,) = struct.unpack_from("<Q", raw, off)
    off += 8
    out = []
    for size in (k + 1, k + 1, na, na):
        out.append(np.frombuffer(raw, "<f8", size, off).astype(np.float64))
        off += 8 * size
    params = ReconParams.from_vector(vec, tv_eps)
    state = {"params": AdamState(t, out[0], out[1]), "anchors": AdamState(t, out[2], out[3])}
    return params, state


def save_checkpoint(directory, anchors, params, history=None, state=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_anchors(d / "anchors.f3dt", anchors)
    write_params(d / "params.bin", params, anchors.coords.size, state)
    if history is not None:
        history.write_csv(d / "history.csv")


def load_checkpoint(directory, learn_mask="3d"):
    d = Path(directory)
    anchors = load_anchors(d / "anchors.f3dt", learn_mask)
    params, state = read_params(d / "params.bin")
    return anchors, params, state
