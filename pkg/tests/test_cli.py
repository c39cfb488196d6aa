import json
import subprocess
import sys

import numpy as np
import pytest

from ogpp.cli import main, parse_canon, parse_path, UsageError
from ogpp.io import read_checkpoint, read_particles
from ogpp.metrics import thomson_metrics

TINY = ["--d-emb", "16", "--n-layers", "1", "--n-heads", "2", "--batch-size", "4", "--log-every", "0", "--threads", "1"]


def run(*argv):
    return main([str(a) for a in argv])


def test_gen_dla_shape(tmp_path):
    out = tmp_path / "dla.bin"
    assert run("gen", "dla", "--n", 64, "--samples", 2, "--seed", 7, "--grid-size", 64, "--out", out) == 0
    ps = read_particles(out)
    assert ps.shape == (2, 64, 2) and ps.n_attrs == 1 and ps.seed == 7
    man = json.loads((tmp_path / "dla.bin.manifest.json").read_text())
    assert man["command"] == "gen" and man["seed"] == 7 and man["outputs"] == [str(out)]
    assert man["config"]["task"] == "dla" and "wall_clock_s" in man and "version" in man


def test_gen_thomson_tetrahedron(tmp_path):
    out = tmp_path / "th.bin"
    assert run("gen", "thomson", "--shells", 1, "--per-shell", 4, "--out", out) == 0
    ps = read_particles(out)
    assert thomson_metrics(ps.data[0].astype(float), ps.attrs[0, :, 0])["cv_avg"] < 1e-5


def test_usage_errors(tmp_path, capsys):
    assert run("gen", "dla", "--n", 10) == 2
    assert run("gen", "weather", "--out", tmp_path / "x") == 2
    assert run("frobnicate") == 2
    assert run("train", "--data", tmp_path / "missing.bin", "--path", "zigzag", "--out", tmp_path / "c") == 2
    assert run("gen", "bluenoise", "--n", 1, "--out", tmp_path / "x") == 2


def test_runtime_error_exit_code(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"junk")
    assert run("eval", "dla", "--gen", bad, "--out", tmp_path / "r.json") == 1


def test_train_sample_eval_minsurf(tmp_path):
    data = tmp_path / "ms.bin"
    assert run("gen", "minsurf", "--n", 32, "--samples", 4, "--out", data) == 0
    ckpt = tmp_path / "ms.ckpt"
    assert run("train", "--data", data, "--path", "hermite-atv", "--steps", 3, *TINY, "--out", ckpt) == 0
    net, meta = read_checkpoint(ckpt)
    assert meta["geometric"] and meta["cond_role"] == "anchors" and net.config.n_cond == 3
    assert (tmp_path / "ms.ckpt.loss.csv").read_text().startswith("step,loss\n")
    gen = tmp_path / "gen.bin"
    assert run("sample", "--ckpt", ckpt, "--steps", 1, "--samples", 3, "--cond", data, "--out", gen) == 0
    ps = read_particles(gen)
    assert ps.shape == (3, 32, 2) and ps.n_attrs == 2
    rep = tmp_path / "rep.json"
    assert run("eval", "minsurf", "--gen", gen, "--out", rep) == 0
    metrics = json.loads(rep.read_text())["metrics"]
    assert {"area_err", "angle_smoothness", "uniformity_cv"} <= set(metrics)
    assert run("sample", "--ckpt", ckpt, "--steps", 1, "--out", tmp_path / "nocond.bin") == 2
    assert run("eval", "bluenoise", "--gen", gen, "--ref", gen, "--out", rep) == 2


def test_train_variants(tmp_path):
    data = tmp_path / "c.bin"
    assert run("gen", "circle", "--n", 8, "--samples", 6, "--out", data) == 0
    for extra in (
        ["--path", "linear", "--canon", "none", "--coupling", "independent"],
        ["--path", "hermite-atv", "--canon", "hilbert4d", "--canon-side", "x1"],
        ["--path", "linear", "--canon", "morton", "--canon-side", "both", "--coupling", "minibatch-ot"],
    ):
        assert run("train", "--data", data, *extra, "--steps", 2, *TINY, "--out", tmp_path / "m.ckpt") == 0
    assert run("train", "--data", data, "--path", "hermite-ntv", "--attrs-as", "ignore", "--steps", 2, *TINY, "--out", tmp_path / "m.ckpt") == 2


def test_analyze_midtime_writes_one_csv_per_regime(tmp_path):
    data = tmp_path / "bn.bin"
    assert run("gen", "bluenoise", "--n", 16, "--samples", 20, "--iters", 20, "--out", data) == 0
    out = tmp_path / "mid.csv"
    assert run("analyze", "midtime", "--data", data, "--regimes", "all", "--pairs", 2000, "--anchors", 40, "--k", 8, "--out", out) == 0
    for regime in ("none", "x0_only", "x1_only", "both"):
        lines = (tmp_path / f"mid.csv.{regime}.csv").read_text().strip().splitlines()
        assert len(lines) == 11
    cov = tmp_path / "cov.csv"
    assert run("analyze", "cov", "--data", data, "--t-grid", "0.5", "--anchors", 20, "--candidates", 20, "--out", cov) == 0
    assert len(cov.read_text().strip().splitlines()) == 2


def test_eval_bluenoise_halves_agree(tmp_path):
    data = tmp_path / "bn.bin"
    assert run("gen", "bluenoise", "--n", 64, "--samples", 40, "--iters", 100, "--out", data) == 0
    ps = read_particles(data)
    from ogpp.io import write_particles

    write_particles(ps.subset(np.arange(20)), tmp_path / "a.bin")
    write_particles(ps.subset(np.arange(20, 40)), tmp_path / "b.bin")
    assert run("eval", "bluenoise", "--gen", tmp_path / "a.bin", "--ref", tmp_path / "b.bin", "--out", tmp_path / "r.json") == 0
    assert json.loads((tmp_path / "r.json").read_text())["metrics"]["pearson"] > 0.99


def test_replay_is_bit_exact(tmp_path):
    data = tmp_path / "d.bin"
    assert run("gen", "circle", "--n", 8, "--samples", 6, "--seed", 3, "--threads", 1, "--out", data) == 0
    ckpt = tmp_path / "m.ckpt"
    assert run("train", "--data", data, "--steps", 3, *TINY, "--seed", 5, "--out", ckpt) == 0
    assert run("replay", f"{ckpt}.manifest.json", "--out", tmp_path / "again.ckpt") == 0
    assert (tmp_path / "again.ckpt").read_bytes() == ckpt.read_bytes()
    assert run("replay", tmp_path / "nothing.json") == 2


def test_spec_parsers():
    assert parse_path("hermite-atv-opt").terminal_mode == "atv_optimal"
    assert parse_path("cubic-ntv").family == "hermite_cubic"
    assert parse_path("toroidal").family == "toroidal_linear"
    assert parse_canon("hilbert6d", 3).dims == 6
    assert parse_canon("polygon", 2).curve == "polygon_ccw"
    assert parse_canon("morton+pose", 2).pose_normalize
    with pytest.raises(UsageError):
        parse_canon("hilbertXd", 2)


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "ogpp.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "ogpp" in res.stdout
