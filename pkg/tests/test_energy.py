import numpy as np
import pytest

from ogpp._validation import ConfigError, ContractError
from ogpp.canon import signed_area
from ogpp.energy import (
    ParticleSet,
    gaussian_energy,
    gen_blue_noise,
    gen_circle,
    gen_dla,
    gen_min_surface,
    gen_thomson,
    min_surface_anchors,
    sample_square_anchors,
    solve_min_curve,
    thomson_energy,
)
from ogpp.metrics import self_intersects, thomson_metrics, turning_angles


def _brute_gaussian(x, sigma):
    e = 0.0
    for i in range(len(x)):
        for j in range(i + 1, len(x)):
            d = x[i] - x[j]
            d -= np.round(d)
            e += np.exp(-(d @ d) / (2 * sigma**2))
    return e


def test_gaussian_energy_against_pairwise_loop(rng):
    x = rng.random((12, 2))
    e, g = gaussian_energy(x, 0.1)
    assert e == pytest.approx(_brute_gaussian(x, 0.1), rel=1e-12)
    h = 1e-6
    xp = x.copy()
    xp[3, 1] += h
    xm = x.copy()
    xm[3, 1] -= h
    assert g[3, 1] == pytest.approx((gaussian_energy(xp, 0.1)[0] - gaussian_energy(xm, 0.1)[0]) / (2 * h), rel=1e-6)


def test_thomson_energy_gradient(rng):
    x = rng.normal(size=(6, 3))
    r = np.full(6, 1.0)
    _, g = thomson_energy(x, r, 10.0)
    h = 1e-6
    for i, k in [(0, 0), (4, 2)]:
        xp, xm = x.copy(), x.copy()
        xp[i, k] += h
        xm[i, k] -= h
        fd = (thomson_energy(xp, r, 10.0)[0] - thomson_energy(xm, r, 10.0)[0]) / (2 * h)
        assert g[i, k] == pytest.approx(fd, rel=1e-6)


def test_blue_noise_energy_nonincreasing_and_deterministic():
    ps, hist = gen_blue_noise(n_points=64, n_samples=2, iters=50, seed=3, return_history=True)
    for h in hist:
        assert np.all(np.diff(h) <= 0)
    assert ps.shape == (2, 64, 2) and ps.task == "bluenoise"
    assert np.all((ps.data >= 0) & (ps.data < 1))
    again = gen_blue_noise(n_points=64, n_samples=2, iters=50, seed=3, n_jobs=2)
    assert again == ps


def test_dla_cluster_is_connected_and_ordered():
    ps = gen_dla(n_particles=200, grid_size=128, seed=5)
    g = 128
    cells = np.rint(ps.data[0].astype(float) * (g / 2) + g // 2).astype(int)
    assert len({tuple(c) for c in cells}) == 200
    for k in range(1, 200):
        dist = np.abs(cells[:k] - cells[k]).sum(axis=1)
        assert dist.min() == 1
    assert np.array_equal(ps.attrs[0, :, 0], np.arange(200))
    assert gen_dla(n_particles=200, grid_size=128, seed=5) == ps


def test_thomson_two_and_four_particles():
    ps = gen_thomson(n_shells=1, per_shell=2, radii=(1.0,), seed=0)
    x = ps.data[0].astype(float)
    assert np.linalg.norm(x[0] + x[1]) < 1e-3
    ps = gen_thomson(n_shells=1, per_shell=4, radii=(1.0,), seed=1)
    x = ps.data[0].astype(float)
    d = np.linalg.norm(x[:, None] - x[None], axis=-1)[np.triu_indices(4, 1)]
    assert np.ptp(d) < 1e-5
    m = thomson_metrics(x, ps.attrs[0, :, 0])
    assert m["cv_avg"] < 1e-5


def test_thomson_config_validation():
    with pytest.raises(ConfigError):
        gen_thomson(n_shells=2, per_shell=3, radii=(1.0,))
    with pytest.raises(ConfigError):
        gen_thomson(n_shells=2, per_shell=3, radii=(2.0, 1.0))
    with pytest.raises(ConfigError):
        gen_thomson(nonsense=1)


def test_square_anchors_on_perimeter(rng):
    a = sample_square_anchors(rng, 5)
    assert a.shape == (5, 2)
    assert np.all(np.isclose(np.abs(a).max(axis=1), 1.0))


def test_min_curve_area_and_constant_curvature(rng):
    anchors = sample_square_anchors(rng, 3)
    curve, idx, pressure = solve_min_curve(anchors, 128, 0.7 * 4.0)
    assert abs(abs(signed_area(curve)) - 2.8) < 1e-6
    assert not self_intersects(curve)
    assert np.allclose(curve[idx], anchors, atol=1e-9)
    turn = turning_angles(curve)
    for k in range(3):
        lo, hi = sorted((idx[k], idx[(k + 1) % 3]))
        inner = turn[lo + 2 : hi - 1] if k < 2 else None
        if inner is not None and inner.size > 4:
            assert np.std(inner) / abs(np.mean(inner)) < 0.05


def test_min_surface_dataset_contract():
    ps = gen_min_surface(n_samples=2, boundary_points=64, seed=4)
    assert ps.shape == (2, 64, 2) and ps.n_attrs == 1
    for s in range(2):
        assert ps.attrs[s, 0, 0] == 1.0 and ps.attrs[s, :, 0].sum() == 3
        assert signed_area(ps.data[s].astype(float)) > 0
        assert min_surface_anchors(ps, s).shape == (3, 2)


def test_circle_normals():
    ps = gen_circle(n_points=32, n_samples=3, seed=2)
    assert np.allclose(np.linalg.norm(ps.attrs, axis=-1), 1.0, atol=1e-6)
    assert np.allclose(ps.data, ps.attrs, atol=1e-6)


def test_particle_set_validation():
    with pytest.raises(ContractError):
        ParticleSet(np.zeros((2, 3)))
    with pytest.raises(ContractError):
        ParticleSet(np.full((1, 2, 2), np.nan))
    with pytest.raises(ContractError):
        ParticleSet(np.ones((1, 2, 2)), domain=np.array([[0, 0.5], [0, 0.5]]))
    with pytest.raises(ContractError):
        ParticleSet(np.ones((1, 2, 2)), attrs=np.ones((1, 3, 1)))
    with pytest.raises(ContractError):
        ParticleSet(np.ones((1, 2, 2)), task="weather")
    ps = ParticleSet(np.arange(12.0).reshape(3, 2, 2), attrs=np.ones((3, 2)))
    assert ps.n_attrs == 1 and ps.subset([0, 2]).n_samples == 2
