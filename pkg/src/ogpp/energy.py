"""Dataset generators for equilibrium particle systems.

Four generators are provided, each returning a :class:`ParticleSet`:

* ``gen_blue_noise``: periodic Gaussian-kernel repulsion on the unit torus.
* ``gen_dla``: on-lattice diffusion-limited aggregation with attachment order.
* ``gen_thomson``: Coulomb particles confined to concentric shells by springs.
* ``gen_min_surface``: area-constrained shortest closed curves through pinned
  boundary anchors (2-D soap films).

``gen_circle`` is a small auxiliary dataset (points on the unit circle with
outward normals) used to exercise normal prediction.

Every sample ``s`` of a run draws from its own counter-based stream
``sub_rng(seed, s, ...)``, so results do not depend on thread count or order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._validation import ConfigError, ContractError, NumericError, sub_rng
from .canon import polygon_ccw_canon, signed_area
from .metrics import self_intersects

TASKS = ("bluenoise", "dla", "thomson", "minsurf", "circle", "custom")


class GenerationError(RuntimeError):
    """A generator could not produce a valid sample."""


@dataclass
class ParticleSet:
    """``S x N x D`` particle configurations with optional ``S x N x A`` attributes."""

    data: np.ndarray
    attrs: np.ndarray | None = None
    domain: np.ndarray | None = None
    task: str = "custom"
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ContractError(f"data must be S x N x D, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ContractError("data contains non-finite values")
        S, N, D = self.data.shape
        if self.attrs is not None:
            self.attrs = np.ascontiguousarray(self.attrs, dtype=np.float32)
            if self.attrs.ndim == 2:
                self.attrs = self.attrs[..., None]
            if self.attrs.ndim != 3 or self.attrs.shape[:2] != (S, N):
                raise ContractError(f"attrs shape {self.attrs.shape} does not match data {self.data.shape}")
        if self.domain is None:
            lo, hi = self.data.min(axis=(0, 1)), self.data.max(axis=(0, 1))
            self.domain = np.stack([lo, hi], axis=1).astype(np.float64)
        self.domain = np.asarray(self.domain, dtype=np.float64).reshape(D, 2)
        if np.any(self.domain[:, 0] > self.domain[:, 1]):
            raise ContractError("domain lower bounds exceed upper bounds")
        if np.any(self.data < self.domain[:, 0].astype(np.float32)) or np.any(self.data > self.domain[:, 1].astype(np.float32)):
            raise ContractError("coordinates outside the declared domain")
        if self.task not in TASKS:
            raise ContractError(f"unknown task tag {self.task!r}")
        self.seed = int(self.seed)

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_samples(self):
        return self.data.shape[0]

    @property
    def n_particles(self):
        return self.data.shape[1]

    @property
    def dim(self):
        return self.data.shape[2]

    @property
    def n_attrs(self):
        return 0 if self.attrs is None else self.attrs.shape[2]

    def subset(self, idx):
        idx = np.atleast_1d(idx)
        return ParticleSet(self.data[idx], None if self.attrs is None else self.attrs[idx], self.domain, self.task, self.seed, dict(self.meta))

    def __eq__(self, other):
        if not isinstance(other, ParticleSet):
            return NotImplemented
        same_attrs = (self.attrs is None and other.attrs is None) or (
            self.attrs is not None and other.attrs is not None and np.array_equal(self.attrs, other.attrs)
        )
        return (
            np.array_equal(self.data, other.data)
            and same_attrs
            and np.array_equal(self.domain, other.domain)
            and self.task == other.task
            and self.seed == other.seed
        )


def _resolve(cls, cfg, kwargs):
    if cfg is None:
        cfg = {}
    if isinstance(cfg, cls):
        cfg = asdict(cfg)
    cfg = {**dict(cfg), **kwargs}
    names = {f.name for f in fields(cls)}
    unknown = set(cfg) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**cfg)


def _map_samples(fn, n_samples, n_jobs):
    if n_jobs is None or n_jobs <= 1 or n_samples <= 1:
        return [fn(s) for s in range(n_samples)]
    with ThreadPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, range(n_samples)))


# --------------------------------------------------------------------------- blue noise


@dataclass(frozen=True)
class BlueNoiseConfig:
    n_points: int = 256
    n_samples: int = 1
    sigma_factor: float = 0.35
    step: float = 0.5
    iters: int = 300
    tol: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if self.n_points < 2:
            raise ConfigError("n_points must be >= 2")
        if self.sigma_factor <= 0 or self.step <= 0 or self.tol <= 0:
            raise ConfigError("sigma_factor, step and tol must be positive")


def _torus_diff(x):
    d = x[:, None, :] - x[None, :, :]
    d -= np.round(d)
    return d


def gaussian_energy(x, sigma):
    """Periodic Gaussian pair energy of points ``x`` in the unit torus and its gradient."""
    d = _torus_diff(x)
    k = np.exp(-np.einsum("ijk,ijk->ij", d, d) / (2 * sigma * sigma))
    np.fill_diagonal(k, 0.0)
    energy = 0.5 * float(k.sum())
    grad = -np.einsum("ij,ijk->ik", k, d) / (sigma * sigma)
    return energy, grad


def _blue_noise_sample(cfg, s):
    rng = sub_rng(cfg.seed, s)
    x = rng.random((cfg.n_points, 2))
    sigma = cfg.sigma_factor / math.sqrt(cfg.n_points)
    energy, grad = gaussian_energy(x, sigma)
    step = cfg.step * sigma * sigma
    history = [energy]
    for _ in range(cfg.iters):
        while True:
            trial = np.mod(x - step * grad, 1.0)
            e_new, g_new = gaussian_energy(trial, sigma)
            if not np.isfinite(e_new):
                raise NumericError("non-finite blue-noise energy")
            if e_new <= energy:
                break
            step *= 0.5
            if step < 1e-16:
                break
        if e_new > energy:
            break
        converged = energy - e_new <= cfg.tol * max(abs(energy), 1.0)
        x, energy, grad = trial, e_new, g_new
        history.append(energy)
        step *= 1.2
        if converged:
            break
    x[x >= 1.0] = 0.0
    return x, history


def gen_blue_noise(cfg=None, n_jobs=None, return_history=False, **kwargs):
    """Blue-noise point sets on ``[0, 1)^2`` by periodic Gaussian repulsion descent.

    Steps that would raise the energy are rejected and retried with half the step,
    so the energy sequence is nonincreasing.
    """
    cfg = _resolve(BlueNoiseConfig, cfg, kwargs)
    out = _map_samples(lambda s: _blue_noise_sample(cfg, s), cfg.n_samples, n_jobs)
    data = np.stack([o[0] for o in out])
    data = np.minimum(data.astype(np.float32), np.float32(1.0 - 2**-24))
    ps = ParticleSet(data, None, np.array([[0.0, 1.0], [0.0, 1.0]]), "bluenoise", cfg.seed, {"config": asdict(cfg)})
    return (ps, [o[1] for o in out]) if return_history else ps


# --------------------------------------------------------------------------- DLA

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = lambda *a, **k: (lambda f: f)


@njit(cache=True)
def _dla_grow(grid, cells, count, n_target, r_cluster, center, moves, angles, budget_used, budget):
    """Advance the aggregate until ``n_target`` cells or the random buffers run out.

    Returns ``(count, r_cluster, moves_used, angles_used, budget_used, status)``
    with ``status`` 0 = done, 1 = needs more random numbers, 2 = budget exhausted.
    """
    g = grid.shape[0]
    mi = 0
    ai = 0
    max_r = g // 2 - 2
    while count < n_target:
        if ai >= angles.shape[0]:
            return count, r_cluster, mi, ai, budget_used, 1
        launch = r_cluster + 5.0
        kill = min(2.0 * launch, max_r)
        if launch >= kill:
            launch = kill - 1.0
        th = angles[ai]
        ai += 1
        x = center + int(np.floor(launch * np.cos(th) + 0.5))
        y = center + int(np.floor(launch * np.sin(th) + 0.5))
        while True:
            if grid[x + 1, y] or grid[x - 1, y] or grid[x, y + 1] or grid[x, y - 1]:
                grid[x, y] = True
                cells[count, 0] = x
                cells[count, 1] = y
                count += 1
                r = np.sqrt(float((x - center) ** 2 + (y - center) ** 2))
                if r > r_cluster:
                    r_cluster = r
                break
            if mi >= moves.shape[0]:
                # rewind this walker; it is relaunched with the next buffers
                return count, r_cluster, mi, ai - 1, budget_used, 1
            m = moves[mi]
            mi += 1
            budget_used += 1
            if budget_used > budget:
                return count, r_cluster, mi, ai, budget_used, 2
            if m == 0:
                x += 1
            elif m == 1:
                x -= 1
            elif m == 2:
                y += 1
            else:
                y -= 1
            dx = x - center
            dy = y - center
            if dx * dx + dy * dy > kill * kill:
                break
    return count, r_cluster, mi, ai, budget_used, 0


@dataclass(frozen=True)
class DLAConfig:
    n_particles: int = 512
    n_samples: int = 1
    grid_size: int = 256
    seed: int = 0
    max_steps: int = 10**9
    chunk: int = 1 << 20

    def __post_init__(self):
        if self.grid_size < 64:
            raise ConfigError("grid_size must be >= 64")
        if self.n_particles < 1 or self.n_particles > self.grid_size**2 // 8:
            raise ConfigError("n_particles must lie in [1, grid_size^2 / 8]")


def _dla_sample(cfg, s):
    rng = sub_rng(cfg.seed, s)
    g = cfg.grid_size
    c = g // 2
    grid = np.zeros((g, g), dtype=np.bool_)
    cells = np.zeros((cfg.n_particles, 2), dtype=np.int64)
    grid[c, c] = True
    cells[0] = (c, c)
    count, r_cluster, used = 1, 0.0, 0
    while count < cfg.n_particles:
        moves = rng.integers(0, 4, size=cfg.chunk, dtype=np.int8)
        angles = rng.uniform(0.0, 2 * np.pi, size=max(cfg.chunk // 64, 16))
        count, r_cluster, _, _, used, status = _dla_grow(
            grid, cells, count, cfg.n_particles, r_cluster, c, moves, angles, used, cfg.max_steps
        )
        if status == 2:
            raise GenerationError(f"DLA walker budget of {cfg.max_steps} steps exhausted")
    pos = (cells - c) / (g / 2.0)
    return pos


def gen_dla(cfg=None, n_jobs=None, **kwargs):
    """Lattice DLA clusters; ``attrs[..., 0]`` holds each particle's attachment order."""
    cfg = _resolve(DLAConfig, cfg, kwargs)
    data = np.stack(_map_samples(lambda s: _dla_sample(cfg, s), cfg.n_samples, n_jobs))
    order = np.broadcast_to(np.arange(cfg.n_particles, dtype=np.float32)[None, :, None], data.shape[:2] + (1,))
    return ParticleSet(data, order.copy(), np.array([[-1.0, 1.0], [-1.0, 1.0]]), "dla", cfg.seed, {"config": asdict(cfg)})


# --------------------------------------------------------------------------- Thomson


@dataclass(frozen=True)
class ThomsonConfig:
    n_shells: int = 3
    per_shell: int = 32
    radii: tuple = (1.0, 1.5, 2.0)
    spring_k: float = 100.0
    lr: float = 1e-3
    iters: int = 100_000
    tol: float = 1e-6
    n_samples: int = 1
    seed: int = 0

    def __post_init__(self):
        radii = tuple(float(r) for r in np.atleast_1d(self.radii))
        if len(radii) != self.n_shells and len(radii) >= self.n_shells:
            radii = radii[: self.n_shells]
        object.__setattr__(self, "radii", radii)
        if len(radii) != self.n_shells:
            raise ConfigError("radii must have length n_shells")
        if any(r <= 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
            raise ConfigError("radii must be positive and strictly increasing")
        if self.per_shell < 1 or self.n_shells < 1 or self.n_shells * self.per_shell < 2:
            raise ConfigError("need at least two particles")
        if self.spring_k <= 0 or self.lr <= 0 or self.tol <= 0:
            raise ConfigError("spring_k, lr and tol must be positive")


def thomson_energy(x, shell_radius, spring_k):
    """Coulomb plus shell-spring energy and its gradient."""
    d = x[:, None, :] - x[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", d, d)
    np.fill_diagonal(r2, 1.0)
    inv = 1.0 / np.sqrt(r2)
    np.fill_diagonal(inv, 0.0)
    rad = np.linalg.norm(x, axis=1)
    stretch = rad - shell_radius
    energy = 0.5 * float(inv.sum()) + 0.5 * spring_k * float(stretch @ stretch)
    grad = -np.einsum("ij,ijk->ik", inv**3, d) + (spring_k * stretch / rad)[:, None] * x
    return energy, grad


def tangential(vec, x):
    """Component of ``vec`` orthogonal to the radial direction of ``x``."""
    r_hat = x / np.linalg.norm(x, axis=-1, keepdims=True)
    return vec - np.sum(vec * r_hat, axis=-1, keepdims=True) * r_hat


def _thomson_attempt(cfg, rng, shell_radius):
    n = shell_radius.size
    x = rng.normal(size=(n, 3))
    x *= (shell_radius / np.linalg.norm(x, axis=1))[:, None]
    energy, grad = thomson_energy(x, shell_radius, cfg.spring_k)
    step = cfg.lr
    for _ in range(cfg.iters):
        if np.max(np.abs(tangential(grad, x))) < cfg.tol:
            return x, True
        while True:
            trial = x - step * grad
            e_new, g_new = thomson_energy(trial, shell_radius, cfg.spring_k)
            if np.isfinite(e_new) and e_new <= energy:
                break
            step *= 0.5
            if step < 1e-20:
                return x, False
        x, energy, grad = trial, e_new, g_new
        step *= 1.1
    return x, bool(np.max(np.abs(tangential(grad, x))) < cfg.tol)


def _thomson_sample(cfg, s):
    shell_radius = np.repeat(np.asarray(cfg.radii), cfg.per_shell)
    for retry in range(6):
        x, ok = _thomson_attempt(cfg, sub_rng(cfg.seed, s, retry), shell_radius)
        if ok:
            return x
    raise GenerationError("Thomson descent did not converge after 5 retries")


def gen_thomson(cfg=None, n_jobs=None, **kwargs):
    """Shell-confined Thomson configurations; ``attrs[..., 0]`` is the shell index."""
    cfg = _resolve(ThomsonConfig, cfg, kwargs)
    data = np.stack(_map_samples(lambda s: _thomson_sample(cfg, s), cfg.n_samples, n_jobs))
    shells = np.repeat(np.arange(cfg.n_shells, dtype=np.float32), cfg.per_shell)
    attrs = np.broadcast_to(shells[None, :, None], data.shape[:2] + (1,)).copy()
    bound = 1.5 * cfg.radii[-1] + 1.0
    meta = {"config": asdict(cfg)}
    return ParticleSet(data, attrs, np.tile([-bound, bound], (3, 1)), "thomson", cfg.seed, meta)


# --------------------------------------------------------------------------- minimal surface


@dataclass(frozen=True)
class MinSurfaceConfig:
    n_anchors: int = 3
    boundary_points: int = 256
    area_fraction: float = 0.7
    domain: tuple = (-1.0, 1.0)
    iters: int = 400
    tol: float = 1e-12
    n_samples: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_anchors < 3:
            raise ConfigError("n_anchors must be >= 3")
        if not 0.0 < self.area_fraction < 1.0:
            raise ConfigError("area_fraction must lie in (0, 1)")
        if self.boundary_points < 4 * self.n_anchors:
            raise ConfigError("boundary_points must be at least 4 per anchor")
        lo, hi = self.domain
        if not hi > lo:
            raise ConfigError("domain must be (lo, hi) with hi > lo")


def _square_point(u, lo, hi):
    # counterclockwise from the bottom-left corner; u in [0, 4)
    w = hi - lo
    side, f = int(u) % 4, u - int(u)
    return [(lo + f * w, lo), (hi, lo + f * w), (hi - f * w, hi), (lo, hi - f * w)][side]


def sample_square_anchors(rng, n_anchors, lo=-1.0, hi=1.0):
    """Anchors spread around the square boundary: one per equal perimeter stratum."""
    offset = rng.uniform(0.0, 4.0)
    jitter = rng.uniform(0.15, 0.85, size=n_anchors)
    u = np.mod(offset + 4.0 * (np.arange(n_anchors) + jitter) / n_anchors, 4.0)
    u.sort()
    return np.array([_square_point(v, lo, hi) for v in u])


def _segment_counts(lengths, total):
    raw = total * lengths / lengths.sum()
    counts = np.maximum(np.floor(raw).astype(int), 2)
    while counts.sum() < total:
        counts[np.argmax(raw - counts)] += 1
    while counts.sum() > total:
        counts[np.argmax(counts - raw)] -= 1
    return counts


def _resample(curve, anchor_idx, total):
    """Uniform arc-length resampling between consecutive anchors (anchors kept)."""
    n = curve.shape[0]
    pieces, lengths = [], []
    for j, a in enumerate(anchor_idx):
        b = anchor_idx[(j + 1) % len(anchor_idx)]
        idx = np.arange(a, b + (n if b <= a else 0) + 1) % n
        seg = curve[idx]
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(seg, axis=0), axis=1))])
        pieces.append((seg, s))
        lengths.append(s[-1])
    counts = _segment_counts(np.array(lengths), total)
    out, new_idx = [], []
    for (seg, s), m in zip(pieces, counts):
        new_idx.append(sum(len(o) for o in out))
        q = np.linspace(0.0, s[-1], m + 1)[:-1]
        out.append(np.stack([np.interp(q, s, seg[:, 0]), np.interp(q, s, seg[:, 1])], axis=1))
    return np.concatenate(out), np.array(new_idx)


def _cross_sum(u, v):
    return 0.5 * float(np.sum(u[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * u[:, 1]))


def _evolve_step(x, pinned, target, tau, p_prev):
    """One semi-implicit curve-shortening step with exact area projection.

    Solves ``(I - tau L) x_new = x + tau p n`` where ``L`` is the arc-length
    Laplacian with frozen weights, ``n`` the outward unit normal and ``p`` the
    pressure chosen so the new polygon encloses exactly ``target``.
    """
    n = x.shape[0]
    fwd = np.roll(x, -1, axis=0) - x
    h = np.linalg.norm(fwd, axis=1)
    h_prev = np.roll(h, 1)
    w_next = 2.0 / ((h + h_prev) * h)
    w_prev = 2.0 / ((h + h_prev) * h_prev)
    tang = np.roll(x, -1, axis=0) - np.roll(x, 1, axis=0)
    normal = np.stack([tang[:, 1], -tang[:, 0]], axis=1)
    normal /= np.linalg.norm(normal, axis=1, keepdims=True)
    i = np.arange(n)
    diag = 1.0 + tau * (w_next + w_prev)
    off_next = -tau * w_next
    off_prev = -tau * w_prev
    diag[pinned] = 1.0
    off_next[pinned] = 0.0
    off_prev[pinned] = 0.0
    A = sp.csc_matrix(
        (np.concatenate([diag, off_next, off_prev]), (np.concatenate([i, i, i]), np.concatenate([i, (i + 1) % n, (i - 1) % n]))),
        shape=(n, n),
    )
    rhs_p = tau * normal
    rhs_p[pinned] = 0.0
    solve = spla.factorized(A)
    sol = solve(np.concatenate([x, rhs_p], axis=1))
    x0, x1 = sol[:, :2], sol[:, 2:]
    c0 = _cross_sum(x0, x0) - target
    c1 = _cross_sum(x0, x1) + _cross_sum(x1, x0)
    c2 = _cross_sum(x1, x1)
    if abs(c2) < 1e-14 * max(abs(c1), 1e-300):
        p = -c0 / c1
    else:
        disc = c1 * c1 - 4 * c2 * c0
        if disc < 0:
            p = -c1 / (2 * c2)
        else:
            r = np.sqrt(disc)
            roots = ((-c1 + r) / (2 * c2), (-c1 - r) / (2 * c2))
            p = min(roots, key=lambda v: abs(v - p_prev))
    return x0 + p * x1, p


def solve_min_curve(anchors, n_points, target_area, iters=400, tol=1e-12):
    """Shortest closed curve through ``anchors`` (CCW order) enclosing ``target_area``.

    Returns ``(curve, anchor_idx, pressure)``; the curve is uniformly spaced between
    consecutive anchors, and ``pressure`` is the converged curvature of the arcs.
    """
    anchors = np.asarray(anchors, float)
    k = anchors.shape[0]
    chords = np.linalg.norm(np.roll(anchors, -1, axis=0) - anchors, axis=1)
    counts = _segment_counts(chords, n_points)
    pts, idx = [], []
    for j in range(k):
        idx.append(sum(len(q) for q in pts))
        f = np.arange(counts[j])[:, None] / counts[j]
        pts.append(anchors[j] + f * (anchors[(j + 1) % k] - anchors[j]))
    x, anchor_idx = np.concatenate(pts), np.array(idx)
    p = 0.0
    perimeter = float(np.sum(np.linalg.norm(np.roll(x, -1, axis=0) - x, axis=1)))
    tau = 0.05 * perimeter**2
    for it in range(iters):
        x_new, p = _evolve_step(x, anchor_idx, target_area, tau, p)
        move = float(np.max(np.abs(x_new - x)))
        x = x_new
        if it % 10 == 9:
            x, anchor_idx = _resample(x, anchor_idx, n_points)
        if move < tol:
            break
    for _ in range(3):
        x, anchor_idx = _resample(x, anchor_idx, n_points)
        x, p = _evolve_step(x, anchor_idx, target_area, tau, p)
    return x, anchor_idx, p


def _min_surface_sample(cfg, s):
    lo, hi = cfg.domain
    target = cfg.area_fraction * (hi - lo) ** 2
    bound = _min_surface_bound(cfg)
    for retry in range(6):
        rng = sub_rng(cfg.seed, s, retry)
        anchors = sample_square_anchors(rng, cfg.n_anchors, lo, hi)
        curve, anchor_idx, _ = solve_min_curve(anchors, cfg.boundary_points, target, cfg.iters, cfg.tol)
        if self_intersects(curve) or np.any(np.abs(curve) > bound):
            continue
        canon, perm = polygon_ccw_canon(curve, curve[anchor_idx])
        flag = np.zeros(cfg.boundary_points)
        flag[anchor_idx] = 1.0
        return canon, flag[perm]
    raise GenerationError("minimal-surface solve failed after 5 retries")


def _min_surface_bound(cfg):
    lo, hi = cfg.domain
    return max(abs(lo), abs(hi)) + 0.75 * (hi - lo)


def gen_min_surface(cfg=None, n_jobs=None, **kwargs):
    """Area-constrained minimal closed curves through anchors on the square boundary.

    ``attrs[..., 0]`` is 1 for anchor particles and 0 otherwise. The target area is
    ``area_fraction`` times the area of the square ``domain x domain``; arcs may
    bulge past the square, so the declared domain is enlarged accordingly.
    """
    cfg = _resolve(MinSurfaceConfig, cfg, kwargs)
    out = _map_samples(lambda s: _min_surface_sample(cfg, s), cfg.n_samples, n_jobs)
    data = np.stack([o[0] for o in out])
    attrs = np.stack([o[1] for o in out])[..., None]
    b = _min_surface_bound(cfg)
    meta = {"config": asdict(cfg), "target_area": cfg.area_fraction * (cfg.domain[1] - cfg.domain[0]) ** 2}
    return ParticleSet(data, attrs, np.tile([-b, b], (2, 1)), "minsurf", cfg.seed, meta)


def min_surface_anchors(ps: ParticleSet, s):
    """Anchor coordinates of sample ``s`` in particle order."""
    return ps.data[s][ps.attrs[s, :, 0] > 0.5]


# --------------------------------------------------------------------------- circle


@dataclass(frozen=True)
class CircleConfig:
    n_points: int = 64
    n_samples: int = 1
    radius: float = 1.0
    seed: int = 0


def gen_circle(cfg=None, **kwargs):
    """Points drawn uniformly on a circle, with outward unit normals as ``attrs``."""
    cfg = _resolve(CircleConfig, cfg, kwargs)
    th = np.stack([sub_rng(cfg.seed, s).uniform(0.0, 2 * np.pi, cfg.n_points) for s in range(cfg.n_samples)])
    normals = np.stack([np.cos(th), np.sin(th)], axis=-1)
    b = 1.01 * cfg.radius
    return ParticleSet(cfg.radius * normals, normals, np.tile([-b, b], (2, 1)), "circle", cfg.seed, {"config": asdict(cfg)})


GENERATORS = {
    "bluenoise": gen_blue_noise,
    "dla": gen_dla,
    "thomson": gen_thomson,
    "minsurf": gen_min_surface,
    "circle": gen_circle,
}
