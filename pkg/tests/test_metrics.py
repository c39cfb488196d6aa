import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ogpp._validation import ConfigError, ContractError, NumericError
from ogpp.energy import ParticleSet, gen_circle
from ogpp.metrics import (
    MetricReport,
    SpectrumProfile,
    chamfer,
    emd,
    emd_brute_force,
    evaluate,
    fractal_dimension,
    gyration_radii,
    low_frequency_ratio,
    min_surface_metrics,
    normal_stats,
    one_nna,
    pairwise_set_distances,
    radial_power_spectrum,
    self_intersects,
    spectrum_compare,
    thomson_metrics,
    turning_angles,
)


def line_cluster(n):
    return np.column_stack([np.arange(n, dtype=float), np.zeros(n)])


def disk_cluster(n):
    side = int(np.ceil(np.sqrt(4 * n / np.pi))) + 2
    g = np.arange(-side, side + 1)
    pts = np.array([(x, y) for x in g for y in g], float)
    r = np.hypot(pts[:, 0], pts[:, 1])
    ang = np.arctan2(pts[:, 1], pts[:, 0])
    return pts[np.lexsort((ang, r))][:n]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_emd_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    assert emd(a, b) == pytest.approx(emd_brute_force(a, b), rel=1e-12)


def test_emd_contract():
    with pytest.raises(ContractError):
        emd(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ConfigError):
        emd(np.zeros((600, 2)), np.zeros((600, 2)))


def test_chamfer_properties(rng):
    a, b = rng.normal(size=(10, 2)), rng.normal(size=(14, 2))
    assert chamfer(a, a) == 0.0
    assert chamfer(a, b) == pytest.approx(chamfer(b, a))
    brute = np.mean([min(((p - q) ** 2).sum() for q in b) for p in a]) + np.mean([min(((p - q) ** 2).sum() for q in a) for p in b])
    assert chamfer(a, b) == pytest.approx(brute)


def test_pairwise_distances_consistent(rng):
    A, B = rng.normal(size=(4, 8, 2)), rng.normal(size=(3, 8, 2))
    d = pairwise_set_distances(A, B, "chamfer", max_block=300)
    assert d[2, 1] == pytest.approx(chamfer(A[2], B[1]))
    e = pairwise_set_distances(A, B, "emd")
    assert e[0, 2] == pytest.approx(emd(A[0], B[2]))
    with pytest.raises(ConfigError):
        pairwise_set_distances(A, B, "hausdorff")


def test_one_nna_extremes(rng):
    A = rng.normal(size=(30, 8, 2))
    assert one_nna(A, A.copy()) == 0.0
    far = rng.normal(size=(30, 8, 2)) + 50.0
    assert one_nna(A, far) == 1.0
    with pytest.raises(ContractError):
        one_nna(A[:1], far)


def test_one_nna_same_distribution_near_half():
    rng = np.random.default_rng(7)
    val = one_nna(rng.random((150, 16, 2)), rng.random((150, 16, 2)))
    assert 0.4 <= val <= 0.6


def test_fractal_dimension_oracles():
    assert fractal_dimension(line_cluster(512)).d_f == pytest.approx(1.0, abs=0.05)
    assert fractal_dimension(disk_cluster(1024)).d_f == pytest.approx(2.0, abs=0.05)
    with pytest.raises(ContractError):
        fractal_dimension(line_cluster(10))


def test_gyration_radii_prefix(rng):
    x = rng.normal(size=(20, 2))
    rg = gyration_radii(x)
    assert rg[0] == 0.0
    assert rg[9] == pytest.approx(np.sqrt(np.mean(np.sum((x[:10] - x[:10].mean(0)) ** 2, 1))))


def _dft_power(points, f):
    s = np.exp(-2j * np.pi * points @ f)
    return abs(s.sum()) ** 2 / len(points)


def test_spectrum_against_direct_sum(rng):
    pts = rng.random((1, 20, 2))
    prof = radial_power_spectrum(pts, f_max=2.0)
    ring1 = np.mean([_dft_power(pts[0], np.array(f, float)) for f in [(1, 0), (-1, 0), (0, 1), (0, -1)]])
    assert prof.freq_bins[0] == pytest.approx(1.0)
    assert prof.power[0] == pytest.approx(ring1)


def test_poisson_spectrum_flat():
    rng = np.random.default_rng(11)
    prof = radial_power_spectrum(rng.random((600, 32, 2)))
    assert np.all(np.abs(prof.power - 1.0) < 0.1)


def test_spectrum_helpers():
    p = SpectrumProfile([1, 2, 3, 4], [0.1, 0.5, 1.0, 1.0], 1)
    assert low_frequency_ratio(p, 0.25, 0.5) == pytest.approx(0.1)
    assert "freq,power" in p.to_csv()
    assert spectrum_compare(p, p)["pearson"] == pytest.approx(1.0)
    with pytest.raises(NumericError):
        spectrum_compare(SpectrumProfile([1, 2], [1, 1], 1), p.__class__([1, 2], [1, 2], 1))
    with pytest.raises(ContractError):
        SpectrumProfile([2, 1], [1, 1], 1)


def test_min_surface_metrics_on_regular_polygon():
    th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    r = np.sqrt(0.7 * 4 / (64 / 2 * np.sin(2 * np.pi / 64)))
    poly = r * np.column_stack([np.cos(th), np.sin(th)])
    m = min_surface_metrics(poly)
    assert m["area_err"] < 1e-12 and m["uniformity_cv"] < 1e-12 and m["valid"]
    assert np.allclose(turning_angles(poly), 2 * np.pi / 64)
    bowtie = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], float)
    assert self_intersects(bowtie) and not self_intersects(poly)


def test_thomson_metrics_octahedron():
    x = np.vstack([np.eye(3), -np.eye(3)])
    m = thomson_metrics(x, np.zeros(6))
    assert m["cv_avg"] < 1e-12 and m["ftan_rms"] < 1e-12


def test_normal_stats_and_matching(rng):
    n = rng.normal(size=(50, 2))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    s = normal_stats(n, n)
    assert s["median_cos"] == pytest.approx(1.0)
    s = normal_stats(-n, n)
    assert s["median_cos"] == pytest.approx(-1.0) and s["median_unoriented_deg"] == pytest.approx(0.0, abs=1e-6)
    perm = rng.permutation(50)
    s = normal_stats(n[perm], n, pred_points=n[perm], gt_points=n)
    assert s["mean_cos"] == pytest.approx(1.0)


def test_evaluate_reports_and_json(tmp_path):
    circle = gen_circle(n_points=16, n_samples=2)
    rep = evaluate("circle", circle)
    assert rep.metrics["median_cos"] == pytest.approx(1.0, abs=1e-6)
    doc = json.loads(rep.to_json())
    assert doc["task"] == "circle"
    with pytest.raises(NumericError):
        MetricReport("x", {"bad": float("nan")})
    with pytest.raises(ConfigError):
        evaluate("weather", circle)
    rng = np.random.default_rng(0)
    ref = ParticleSet(rng.random((40, 64, 2)), domain=np.array([[0, 1], [0, 1]]), task="bluenoise")
    gen = ParticleSet(rng.random((40, 64, 2)), domain=np.array([[0, 1], [0, 1]]), task="bluenoise")
    rep = evaluate("bluenoise", gen, ref)
    assert {"pearson", "rel_l2", "low_freq_ratio"} <= set(rep.metrics)
