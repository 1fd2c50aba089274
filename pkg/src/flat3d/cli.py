"""Command-line driver: data generation, trajectory init, optimization, evaluation
and export.

Exit codes: 0 success, 2 bad arguments, 3 data/format error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, trajectory as T
from .acquisition import sample
from .errors import FormatError, NumericalError, OutOfBoundsError
from .metrics import psnr, ssim3d
from .optim import (OptimConfig, TrainingHistory, load_checkpoint, optimize_joint,
                    reconstruct_dataset, save_checkpoint)
from .recon import ReconParams, cs_tv_solve
from .regrid import density_map

log = logging.getLogger("flat3d")

EXIT_OK, EXIT_ARGS, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

KIND_MASK = {"radial3d": "3d", "sos": "3d", "sos2d": "xy"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- small file helpers

def write_kv(path, mapping):
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in mapping.items()))


def read_kv(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_pgm(path, image):
    """8-bit binary PGM, scaled so the image maximum maps to 255."""
    image = np.asarray(image, dtype=np.float64)
    peak = image.max()
    scaled = np.zeros(image.shape) if peak <= 0 else np.clip(image / peak, 0, 1) * 255.0
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.round(scaled).astype(np.uint8).tobytes())


def split_counts(count):
    """90/10 train/validation split; at least one validation item."""
    n_train = (9 * count) // 10
    if count > 1 and n_train == count:
        n_train -= 1
    return n_train, count - n_train


# ---------------------------------------------------------------- dataset dirs

def load_dataset(directory, split, verify=True):
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    ds = data.Dataset(split=split)
    for item in manifest["items"]:
        if item["split"] != split:
            continue
        vpath, kpath = d / item["volume"], d / item["kspace"]
        if verify and (sha256(vpath) != item["sha256_volume"]
                       or sha256(kpath) != item["sha256_kspace"]):
            raise FormatError(f"checksum mismatch for {item['name']}")
        x = data.load_kspace(kpath, manifest["n"])
        ds.kspace.append(x)
        ds.images.append(data.load_volume(vpath, manifest["n"]).astype(np.float64))
        ds.names.append(item["name"])
    return ds


def load_traj_dir(directory, mask=None):
    """Anchors plus the metadata written by ``init-traj`` / ``optimize``."""
    d = Path(directory)
    meta = read_kv(d / "traj.cfg")
    anchors = T.load_anchors(d / "anchors.f3dt", mask or meta.get("learn_mask", "3d"))
    return anchors, meta


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_train, _ = split_counts(args.count)
    items = []
    for i in range(args.count):
        name = f"vol{i:04d}"
        if args.phantom == "shepp":
            z = data.shepp_logan_3d(args.n)
        else:
            z = data.random_ellipsoids(args.n, args.ellipsoids, args.seed * 100003 + i)
        x, z = data.make_pair(z)
        vname, kname = f"{name}.f3dv", f"{name}_k.f3dv"
        data.save_volume(out / vname, z)
        data.save_kspace(out / kname, x)
        items.append({
            "name": name,
            "split": "train" if i < n_train else "val",
            "volume": vname,
            "kspace": kname,
            "sha256_volume": sha256(out / vname),
            "sha256_kspace": sha256(out / kname),
        })
    manifest = {"n": args.n, "seed": args.seed, "phantom": args.phantom,
                "ellipsoids": args.ellipsoids, "items": items}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    print(f"wrote {args.count} volumes ({n_train} train / {args.count - n_train} val) to {out}")


def cmd_init_traj(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_shots = T.shots_for_af(args.n, args.af)
    k_max = T.k_max_for(args.n, args.fov)
    n_slices = 1
    if args.kind == "radial3d":
        dense = T.make_radial_3d(n_shots, args.m, k_max)
    else:
        n_slices = args.n_slices or T.default_slices(n_shots, args.n)
        dense = T.make_stack_of_stars(n_shots, args.m, k_max, n_slices)
    coords = np.clip(T.fit_anchors(dense, args.m_anchors), -k_max, k_max)
    mask = KIND_MASK[args.kind]
    anchors = T.AnchorTrajectory(coords, args.fov, args.n, mask)
    T.save_anchors(out / "anchors.f3dt", anchors)
    write_kv(out / "traj.cfg", {
        "kind": args.kind, "n": args.n, "fov": args.fov, "m": args.m,
        "m_anchors": args.m_anchors, "af": args.af, "n_shots": n_shots,
        "n_slices": n_slices, "learn_mask": mask,
    })
    report = T.feasibility_report(T.spline_interpolate(anchors, args.m),
                                  T.MachineConstraints())
    (out / "feasibility.txt").write_text(report.to_text())
    print(f"{args.kind}: n_shots={n_shots} (AF {T.acceleration_factor(args.n, n_shots):.3f}), "
          f"m={args.m}, m'={args.m_anchors}, feasible={report.feasible}")


def cmd_optimize(args):
    config = OptimConfig.from_file(args.config) if args.config else OptimConfig()
    anchors, meta = load_traj_dir(args.traj)
    if args.mode:
        config.learn_mode = args.mode
    if config.learn_mode is None:
        config.learn_mode = meta.get("learn_mask", "3d")
    if "m" in meta:
        config.m = int(meta["m"])
    if args.seed is not None:
        config.seed = args.seed
    if args.epochs is not None:
        config.epochs = args.epochs
    train = load_dataset(args.data, "train")
    val = load_dataset(args.data, "val")
    params = ReconParams.create(config.k_unroll, config.init_step, config.init_alpha,
                                config.tv_eps)
    anchors, params, history, report, state = optimize_joint(
        train, anchors, params, config, val=val,
        progress=lambda r: print(f"epoch {r.epoch}: task {r.task:.5f} const {r.const:.3g} "
                                 f"val psnr {r.val_psnr:.3f} ssim {r.val_ssim:.4f}",
                                 flush=True))
    out = Path(args.out)
    save_checkpoint(out, anchors, params, history, state)
    meta = dict(meta, learn_mask=config.learn_mode, m=config.m)
    write_kv(out / "traj.cfg", meta)
    (out / "feasibility.txt").write_text(report.to_text())
    (out / "config.txt").write_text(config.to_text())
    print(f"final val psnr {history.records[-1].val_psnr if history.records else float('nan'):.3f}"
          f" feasible={report.feasible}")


def _recon_all(args, ds, anchors, m, params_dir):
    if args.cstv:
        dense = T.spline_interpolate(anchors, m)
        return [cs_tv_solve(sample(x, dense), dense, args.cs_alpha, args.cs_iters,
                            args.cs_eps) for x in ds.kspace]
    if params_dir:
        _, params, _ = load_checkpoint(params_dir)
    else:
        params = ReconParams.create(0)
    return reconstruct_dataset(list(zip(ds.kspace, ds.images)), anchors, params, m)


def cmd_eval(args):
    ds = load_dataset(args.data, args.split)
    anchors, meta = load_traj_dir(args.traj)
    m = int(meta.get("m", args.m))
    outs = _recon_all(args, ds, anchors, m, args.params)
    rows = [[name, psnr(o, z), ssim3d(o, z)] for name, o, z in zip(ds.names, outs, ds.images)]
    header = ["volume", "psnr", "ssim"]
    if args.baseline_traj:
        b_anchors, b_meta = load_traj_dir(args.baseline_traj)
        b_outs = _recon_all(args, ds, b_anchors, int(b_meta.get("m", args.m)),
                            args.baseline_params)
        header += ["baseline_psnr", "baseline_ssim", "delta_psnr", "delta_ssim"]
        for row, o, z in zip(rows, b_outs, ds.images):
            bp, bs = psnr(o, z), ssim3d(o, z)
            row += [bp, bs, row[1] - bp, row[2] - bs]
    mean = ["mean"] + [float(np.mean([r[i] for r in rows])) for i in range(1, len(header))]
    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    with open(report, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows + [mean]:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])
    feas = T.feasibility_report(T.spline_interpolate(anchors, m), T.MachineConstraints())
    report.with_suffix(".feasibility.txt").write_text(feas.to_text())
    if args.slices:
        sdir = Path(args.slices)
        sdir.mkdir(parents=True, exist_ok=True)
        for name, o in zip(ds.names, outs):
            write_slices(sdir, name, o)
    print(" ".join(f"{h}={v:.4f}" for h, v in zip(header[1:], mean[1:])))


def write_slices(directory, stem, vol):
    c = vol.shape[0] // 2
    write_pgm(Path(directory) / f"{stem}_sagittal.pgm", vol[:, :, c])
    write_pgm(Path(directory) / f"{stem}_coronal.pgm", vol[:, c, :])
    write_pgm(Path(directory) / f"{stem}_axial.pgm", vol[c, :, :])


def cmd_export(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not (args.density or args.slices or args.plot_csv):
        raise UsageError("export needs at least one of --density, --slices, --plot-csv")
    if args.density:
        if not args.traj:
            raise UsageError("--density requires --traj")
        anchors, meta = load_traj_dir(args.traj)
        dense = T.spline_interpolate(anchors, int(meta.get("m", args.m)))
        data.save_volume(out / "density.f3dv", density_map(dense))
    if args.slices:
        write_slices(out, Path(args.slices).stem, data.load_volume(args.slices))
    if args.plot_csv:
        hist = TrainingHistory.read_csv(args.plot_csv)
        hist.write_csv(out / "history_plot.csv")


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="flat3d", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate phantom volumes and k-space pairs")
    g.add_argument("--n", type=int, default=32)
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--ellipsoids", type=int, default=6)
    g.add_argument("--phantom", choices=("random", "shepp"), default="random")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("init-traj", help="write reference anchors")
    t.add_argument("--kind", choices=tuple(KIND_MASK), required=True)
    t.add_argument("--af", type=float, required=True)
    t.add_argument("--n", type=int, default=32)
    t.add_argument("--m", type=int, default=384)
    t.add_argument("--m-anchors", type=int, default=24)
    t.add_argument("--fov", type=float, default=T.DEFAULT_FOV)
    t.add_argument("--n-slices", type=int, default=None)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_init_traj)

    o = sub.add_parser("optimize", help="jointly optimize trajectory and reconstruction")
    o.add_argument("--data", required=True)
    o.add_argument("--traj", required=True)
    o.add_argument("--config")
    o.add_argument("--mode", choices=tuple(T.LEARN_MASKS))
    o.add_argument("--epochs", type=int)
    o.add_argument("--seed", type=int)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_optimize)

    e = sub.add_parser("eval", help="PSNR/SSIM of reconstructions")
    e.add_argument("--data", required=True)
    e.add_argument("--traj", required=True)
    grp = e.add_mutually_exclusive_group()
    grp.add_argument("--params")
    grp.add_argument("--cstv", action="store_true")
    e.add_argument("--cs-alpha", type=float, default=1e-3)
    e.add_argument("--cs-iters", type=int, default=30)
    e.add_argument("--cs-eps", type=float, default=1e-3)
    e.add_argument("--baseline-traj")
    e.add_argument("--baseline-params")
    e.add_argument("--split", choices=("train", "val"), default="val")
    e.add_argument("--m", type=int, default=384)
    e.add_argument("--slices")
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="density maps, slice images, metric tables")
    x.add_argument("--traj")
    x.add_argument("--density", action="store_true")
    x.add_argument("--slices", metavar="VOLUME")
    x.add_argument("--plot-csv", metavar="HISTORY")
    x.add_argument("--m", type=int, default=384)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OutOfBoundsError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"bad arguments: {exc}", file=sys.stderr)
        return EXIT_ARGS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
