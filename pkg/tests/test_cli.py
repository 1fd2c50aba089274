import csv
import json

import numpy as np
import pytest

from flat3d import cli, data, trajectory as T


def run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert run("gen-data", "--n", 16, "--count", 10, "--seed", 4, "--out", d) == 0
    return d


def test_gen_data_split_and_checksums(dataset):
    man = json.loads((dataset / "manifest.json").read_text())
    splits = [it["split"] for it in man["items"]]
    assert splits.count("train") == 9 and splits.count("val") == 1
    ds = cli.load_dataset(dataset, "train")
    assert len(ds) == 9


def test_gen_data_deterministic(dataset, tmp_path):
    assert run("gen-data", "--n", 16, "--count", 10, "--seed", 4, "--out", tmp_path) == 0
    for f in dataset.iterdir():
        assert (tmp_path / f.name).read_bytes() == f.read_bytes()


def test_tampered_file_is_data_error(dataset, tmp_path, capsys):
    for f in dataset.iterdir():
        (tmp_path / f.name).write_bytes(f.read_bytes())
    p = tmp_path / "vol0009.f3dv"
    raw = bytearray(p.read_bytes())
    raw[-1] ^= 0xFF
    p.write_bytes(bytes(raw))
    code = run("eval", "--data", tmp_path, "--traj", tmp_path / "none", "--report",
               tmp_path / "r.csv")
    assert code == 3


@pytest.mark.parametrize("n,af,shots", [(80, 10, 640), (32, 10, 102)])
def test_init_traj_shot_count(tmp_path, n, af, shots):
    assert run("init-traj", "--kind", "radial3d", "--af", af, "--n", n, "--m", 64,
               "--m-anchors", 8, "--out", tmp_path) == 0
    meta = cli.read_kv(tmp_path / "traj.cfg")
    assert int(meta["n_shots"]) == shots
    coords, fov, k_max = T.read_f3dt(tmp_path / "anchors.f3dt")
    assert coords.shape == (shots, 8, 3)
    assert "violation_count" in (tmp_path / "feasibility.txt").read_text()


def test_init_traj_sos2d_mask(tmp_path):
    assert run("init-traj", "--kind", "sos2d", "--af", 10, "--n", 16, "--m", 48,
               "--m-anchors", 8, "--out", tmp_path) == 0
    assert cli.read_kv(tmp_path / "traj.cfg")["learn_mask"] == "xy"


def test_bad_arguments_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as err:
        run("init-traj", "--kind", "spiral", "--af", 10, "--out", tmp_path)
    assert err.value.code == 2
    assert run("init-traj", "--kind", "sos", "--af", 10, "--n", 16, "--n-slices", 7,
               "--out", tmp_path) == 2


def test_optimize_eval_export(dataset, tmp_path):
    traj, ck = tmp_path / "traj", tmp_path / "ck"
    assert run("init-traj", "--kind", "sos", "--af", 10, "--n", 16, "--m", 48,
               "--m-anchors", 8, "--out", traj) == 0
    (tmp_path / "cfg.txt").write_text("epochs = 1\nbatch_size = 5\nk_unroll = 2\n")
    assert run("optimize", "--data", dataset, "--traj", traj, "--config",
               tmp_path / "cfg.txt", "--out", ck) == 0
    for name in ("anchors.f3dt", "params.bin", "history.csv", "feasibility.txt"):
        assert (ck / name).exists()

    rep = tmp_path / "eval.csv"
    assert run("eval", "--data", dataset, "--traj", ck, "--params", ck, "--baseline-traj",
               traj, "--report", rep, "--slices", tmp_path / "sl") == 0
    rows = list(csv.DictReader(rep.open()))
    assert [r["volume"] for r in rows] == ["vol0009", "mean"]
    assert float(rows[1]["delta_psnr"]) == pytest.approx(
        float(rows[1]["psnr"]) - float(rows[1]["baseline_psnr"]))
    first = rep.read_bytes()
    assert run("eval", "--data", dataset, "--traj", ck, "--params", ck, "--baseline-traj",
               traj, "--report", rep) == 0
    assert rep.read_bytes() == first
    assert (tmp_path / "eval.feasibility.txt").exists()
    assert (tmp_path / "sl" / "vol0009_axial.pgm").read_bytes()[:2] == b"P5"

    out = tmp_path / "ex"
    assert run("export", "--traj", ck, "--density", "--plot-csv", ck / "history.csv",
               "--slices", dataset / "vol0000.f3dv", "--out", out) == 0
    dens = data.load_volume(out / "density.f3dv")
    meta = cli.read_kv(ck / "traj.cfg")
    assert dens.sum() == pytest.approx(int(meta["n_shots"]) * int(meta["m"]), rel=1e-6)
    pgm = (out / "vol0000_sagittal.pgm").read_bytes()
    assert pgm.startswith(b"P5\n16 16\n255\n") and len(pgm) == len(b"P5\n16 16\n255\n") + 256


def _full_node_dir(path, n):
    g = (np.arange(n) - n // 2) / T.DEFAULT_FOV
    z, y, x = np.meshgrid(g, g, g, indexing="ij")
    coords = np.stack([x, y, z], -1).reshape(n * n, n, 3)
    path.mkdir()
    T.write_f3dt(path / "anchors.f3dt", coords, T.DEFAULT_FOV, T.k_max_for(n, T.DEFAULT_FOV))
    cli.write_kv(path / "traj.cfg", {"n": n, "m": n, "learn_mask": "frozen"})


def test_full_node_density_and_eval(dataset, tmp_path):
    _full_node_dir(tmp_path / "full", 16)
    assert run("export", "--traj", tmp_path / "full", "--density", "--out", tmp_path) == 0
    np.testing.assert_allclose(data.load_volume(tmp_path / "density.f3dv"), 1.0)
    # the adjoint on every grid node reproduces the stored volume
    assert run("eval", "--data", dataset, "--traj", tmp_path / "full", "--report",
               tmp_path / "e.csv") == 0
    row = list(csv.DictReader((tmp_path / "e.csv").open()))[-1]
    assert float(row["psnr"]) > 100 and float(row["ssim"]) == pytest.approx(1.0, abs=1e-9)


def test_nan_data_exits_4(dataset, tmp_path):
    for f in dataset.iterdir():
        (tmp_path / f.name).write_bytes(f.read_bytes())
    p = tmp_path / "vol0000_k.f3dv"
    raw = bytearray(p.read_bytes())
    dc = 24 + 8 * (8 * 256 + 8 * 16 + 8)  # header + complex64 offset of the DC sample
    raw[dc:dc + 4] = np.float32(np.nan).tobytes()
    p.write_bytes(bytes(raw))
    man = json.loads((tmp_path / "manifest.json").read_text())
    man["items"][0]["sha256_kspace"] = cli.sha256(p)
    (tmp_path / "manifest.json").write_text(json.dumps(man))
    traj = tmp_path / "traj"
    run("init-traj", "--kind", "radial3d", "--af", 10, "--n", 16, "--m", 48, "--m-anchors", 8,
        "--out", traj)
    (tmp_path / "cfg.txt").write_text("epochs = 1\nk_unroll = 1\n")
    with np.errstate(invalid="ignore"):
        assert run("optimize", "--data", tmp_path, "--traj", traj, "--config",
                   tmp_path / "cfg.txt", "--out", tmp_path / "ck") == 4
