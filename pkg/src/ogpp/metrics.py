"""Evaluation metrics for generated particle configurations.

Spectra are normalized so a Poisson process has unit power at every nonzero
frequency. Distribution metrics (Chamfer, exact EMD, 1-NNA) operate on sets of
configurations. Task-level summaries are collected in :class:`MetricReport`.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from ._validation import ConfigError, ContractError, NumericError, as_float_array, check_batch, check_config, check_unit

EMD_MAX_POINTS = 512


# --------------------------------------------------------------------------- spectra


@dataclass
class SpectrumProfile:
    freq_bins: np.ndarray
    power: np.ndarray
    n_samples_averaged: int

    def __post_init__(self):
        self.freq_bins = np.asarray(self.freq_bins, float)
        self.power = np.asarray(self.power, float)
        if np.any(self.power < 0) or np.any(np.diff(self.freq_bins) <= 0):
            raise ContractError("spectrum power must be nonnegative with strictly increasing bins")

    def to_csv(self):
        return "freq,power\n" + "".join(f"{f:.10g},{p:.10g}\n" for f, p in zip(self.freq_bins, self.power))


def _lattice(f_max):
    k = np.arange(-int(math.floor(f_max)), int(math.floor(f_max)) + 1)
    fx, fy = np.meshgrid(k, k, indexing="ij")
    radius = np.hypot(fx, fy)
    keep = (radius <= f_max) & (radius > 0)
    return k, radius, keep


def radial_power_spectrum(points_batch, n_freq_bins=None, f_max=None, block=64):
    """Azimuthally averaged power spectrum ``|sum_j exp(-2 pi i f.x_j)|^2 / N``.

    Frequencies are the integer lattice with ``0 < |f| <= f_max`` (default
    ``2 sqrt(N)``); bins have unit width by default. Empty bins are dropped.
    """
    pts = check_batch(points_batch, "points_batch", d=2)
    S, N, _ = pts.shape
    f_max = 2.0 * math.sqrt(N) if f_max is None else float(f_max)
    k, radius, keep = _lattice(f_max)
    acc = np.zeros(radius.shape)
    for s0 in range(0, S, block):
        p = pts[s0 : s0 + block]
        ex = np.exp(-2j * np.pi * p[..., 0, None] * k)  # B x N x K
        ey = np.exp(-2j * np.pi * p[..., 1, None] * k)
        amp = np.matmul(ex.transpose(0, 2, 1), ey)  # B x K x K
        acc += np.sum(amp.real**2 + amp.imag**2, axis=0)
    power2d = acc / (S * N)
    n_bins = int(math.ceil(f_max)) if n_freq_bins is None else int(n_freq_bins)
    edges = np.linspace(0.0, f_max, n_bins + 1)
    r, pw = radius[keep], power2d[keep]
    which = np.clip(np.searchsorted(edges, r, side="left") - 1, 0, n_bins - 1)
    counts = np.bincount(which, minlength=n_bins)
    sums = np.bincount(which, weights=pw, minlength=n_bins)
    rsum = np.bincount(which, weights=r, minlength=n_bins)
    nz = counts > 0
    return SpectrumProfile(rsum[nz] / counts[nz], sums[nz] / counts[nz], S)


def low_frequency_ratio(profile: SpectrumProfile, low_frac=0.1, high_frac=0.5):
    """Mean power of the lowest ``low_frac`` bins over that of the top ``high_frac`` bins."""
    n = profile.power.size
    lo = max(1, int(round(low_frac * n)))
    hi = max(1, int(round(high_frac * n)))
    return float(profile.power[:lo].mean() / profile.power[-hi:].mean())


def spectrum_compare(gen: SpectrumProfile, gt: SpectrumProfile):
    if gen.freq_bins.shape != gt.freq_bins.shape or not np.allclose(gen.freq_bins, gt.freq_bins):
        raise ContractError("spectra must share the same binning")
    if np.std(gen.power) == 0 or np.std(gt.power) == 0:
        raise NumericError("Pearson correlation undefined for a constant profile")
    pearson = float(np.corrcoef(gen.power, gt.power)[0, 1])
    rel_l2 = float(np.linalg.norm(gen.power - gt.power) / np.linalg.norm(gt.power))
    return {"pearson": pearson, "rel_l2": rel_l2}


# --------------------------------------------------------------------------- fractal dimension


@dataclass
class FractalFit:
    d_f: float
    fit_r2: float
    n_range: tuple


def gyration_radii(cluster):
    """Radius of gyration of every prefix ``cluster[:n]``, ``n = 1..N``."""
    x = check_config(cluster, "cluster")
    n = np.arange(1, x.shape[0] + 1)[:, None]
    mean = np.cumsum(x, axis=0) / n
    msq = np.cumsum(np.sum(x * x, axis=1)) / n[:, 0]
    return np.sqrt(np.maximum(msq - np.sum(mean * mean, axis=1), 0.0))


def fractal_dimension(cluster, min_prefix_frac=0.125):
    """Fractal dimension from the slope of log R_g against log n over large prefixes."""
    x = check_config(cluster, "cluster")
    N = x.shape[0]
    if N < 64:
        raise ContractError("fractal_dimension needs at least 64 particles")
    rg = gyration_radii(x)
    n0 = max(2, int(math.ceil(min_prefix_frac * N)))
    n = np.arange(n0, N + 1)
    ln, lr = np.log(n), np.log(rg[n - 1])
    slope, intercept = np.polyfit(ln, lr, 1)
    if not slope > 0:
        raise NumericError(f"non-positive gyration slope {slope}")
    resid = lr - (slope * ln + intercept)
    r2 = 1.0 - float(resid @ resid) / float(np.sum((lr - lr.mean()) ** 2))
    return FractalFit(float(1.0 / slope), r2, (int(n0), int(N)))


# --------------------------------------------------------------------------- minimal surface


def turning_angles(poly):
    e = np.roll(poly, -1, axis=0) - poly
    ang = np.arctan2(e[:, 1], e[:, 0])
    return np.angle(np.exp(1j * (ang - np.roll(ang, 1))))


def self_intersects(poly):
    """True if any two non-adjacent edges of the closed polyline cross."""
    a, b = poly, np.roll(poly, -1, axis=0)
    n = poly.shape[0]

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    A, B, C, D = a[:, None], b[:, None], a[None, :], b[None, :]
    hit = (orient(A, B, C) * orient(A, B, D) < 0) & (orient(C, D, A) * orient(C, D, B) < 0)
    i, j = np.indices((n, n))
    gap = np.abs(i - j)
    return bool(np.any(hit & (gap > 1) & (gap < n - 1)))


def min_surface_metrics(boundary, anchors=None, target_fraction=0.7, domain_area=4.0):
    """Area-fraction error, turning-angle smoothness and spacing uniformity of a closed curve.

    ``anchors`` is accepted for interface symmetry; the scores depend only on the curve.
    """
    b = check_config(boundary, "boundary", d=2)
    x, y = b[:, 0], b[:, 1]
    area = 0.5 * abs(float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)))
    seg = np.linalg.norm(np.roll(b, -1, axis=0) - b, axis=1)
    return {
        "area_err": abs(area / domain_area - target_fraction),
        "angle_smoothness": float(np.std(turning_angles(b))),
        "uniformity_cv": float(seg.std() / seg.mean()) if seg.mean() > 0 else float("inf"),
        "valid": not self_intersects(b),
    }


# --------------------------------------------------------------------------- Thomson


def thomson_metrics(config, shell_assignment, radii=None):
    """Nearest-neighbour distance CV per shell (averaged) and RMS tangential Coulomb force."""
    x = check_config(config, "config", d=3)
    shell = np.asarray(shell_assignment).astype(int).reshape(-1)
    if shell.size != x.shape[0]:
        raise ContractError("shell_assignment length must equal the particle count")
    d = x[:, None, :] - x[None, :, :]
    r = np.linalg.norm(d, axis=-1)
    np.fill_diagonal(r, np.inf)
    valid = bool(np.all(r > 0))
    cvs = []
    for s in np.unique(shell):
        idx = np.flatnonzero(shell == s)
        if idx.size < 2:
            continue
        nn = r[np.ix_(idx, idx)].min(axis=1)
        cvs.append(nn.std() / nn.mean())
    with np.errstate(divide="ignore", invalid="ignore"):
        force = np.einsum("ij,ijk->ik", 1.0 / r**3, d)
    r_hat = x / np.linalg.norm(x, axis=1, keepdims=True)
    ft = force - np.sum(force * r_hat, axis=1, keepdims=True) * r_hat
    ftan = float(np.sqrt(np.mean(np.sum(ft * ft, axis=1)))) if valid else float("inf")
    return {"cv_avg": float(np.mean(cvs)) if cvs else 0.0, "ftan_rms": ftan, "valid": valid}


# --------------------------------------------------------------------------- point-set distances


def _sqdist(a, b):
    d = np.sum(a * a, -1)[..., :, None] + np.sum(b * b, -1)[..., None, :] - 2.0 * a @ np.swapaxes(b, -1, -2)
    return np.maximum(d, 0.0)


def chamfer(a, b):
    """Symmetric Chamfer distance: mean nearest squared distance a->b plus b->a."""
    a, b = as_float_array(a, "a", ndim=2), as_float_array(b, "b", ndim=2)
    d = _sqdist(a, b)
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def emd(a, b):
    """Exact earth mover's distance: minimal mean Euclidean matching distance."""
    a, b = as_float_array(a, "a", ndim=2), as_float_array(b, "b", ndim=2)
    if a.shape != b.shape:
        raise ContractError("emd requires equal-size point sets")
    if a.shape[0] > EMD_MAX_POINTS:
        raise ConfigError(f"emd is exact and capped at {EMD_MAX_POINTS} points")
    cost = np.sqrt(_sqdist(a, b))
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].mean())


def emd_brute_force(a, b):
    """Exhaustive EMD over all permutations (tiny sets only; used as an oracle)."""
    cost = np.sqrt(_sqdist(np.asarray(a, float), np.asarray(b, float)))
    n = cost.shape[0]
    if n > 9:
        raise ConfigError("brute-force EMD limited to 9 points")
    idx = np.arange(n)
    return float(min(cost[idx, list(p)].mean() for p in itertools.permutations(range(n))))


def pairwise_set_distances(sets_a, sets_b, dist="chamfer", max_block=2**24):
    """Matrix of set distances between every configuration of ``sets_a`` and ``sets_b``."""
    A, B = check_batch(sets_a, "sets_a"), check_batch(sets_b, "sets_b")
    out = np.empty((A.shape[0], B.shape[0]))
    if dist == "chamfer":
        per = max(1, max_block // max(1, B.shape[0] * A.shape[1] * B.shape[1]))
        for i0 in range(0, A.shape[0], per):
            blk = A[i0 : i0 + per]
            d = _sqdist(blk[:, None], B[None])  # b x Sb x n x m
            out[i0 : i0 + per] = d.min(axis=3).mean(axis=2) + d.min(axis=2).mean(axis=2)
    elif dist == "emd":
        for i, a in enumerate(A):
            for j, b in enumerate(B):
                out[i, j] = emd(a, b)
    else:
        raise ConfigError(f"unknown set distance {dist!r}")
    return out


def one_nna(set_a, set_b, dist="chamfer"):
    """Leave-one-out 1-nearest-neighbour accuracy of telling ``set_a`` from ``set_b``.

    Ties in the nearest distance are resolved in favour of the other set's label,
    so exact duplicates across the sets drive the score toward zero.
    """
    A, B = check_batch(set_a, "set_a"), check_batch(set_b, "set_b")
    if A.shape[0] < 2 or B.shape[0] < 2:
        raise ContractError("1-NNA needs at least two samples per set")
    pooled = np.concatenate([A, B])
    labels = np.r_[np.zeros(A.shape[0], bool), np.ones(B.shape[0], bool)]
    d = pairwise_set_distances(pooled, pooled, dist)
    np.fill_diagonal(d, np.inf)
    best = d.min(axis=1, keepdims=True)
    at_best = d <= best
    other_at_best = np.any(at_best & (labels[None, :] != labels[:, None]), axis=1)
    correct = ~other_at_best
    return float(correct.mean())


# --------------------------------------------------------------------------- normals


def normal_stats(pred, gt, pred_points=None, gt_points=None, tol=1e-3):
    """Cosine agreement between predicted and reference unit normals.

    With ``pred_points``/``gt_points`` each prediction is compared to the normal of
    its nearest reference point; otherwise rows are compared one-to-one.
    """
    pred = check_unit(np.asarray(pred, float).reshape(-1, np.shape(pred)[-1]), "pred", tol)
    gt = check_unit(np.asarray(gt, float).reshape(-1, np.shape(gt)[-1]), "gt", tol)
    if pred_points is not None:
        pp = np.asarray(pred_points, float).reshape(pred.shape)
        gp = np.asarray(gt_points, float).reshape(gt.shape)
        _, nearest = cKDTree(gp).query(pp)
        gt = gt[nearest]
    elif pred.shape != gt.shape:
        raise ContractError("pred and gt must have the same shape without point matching")
    pred = pred / np.linalg.norm(pred, axis=1, keepdims=True)
    gt = gt / np.linalg.norm(gt, axis=1, keepdims=True)
    cos = np.clip(np.sum(pred * gt, axis=1), -1.0, 1.0)
    return {
        "mean_cos": float(cos.mean()),
        "std_cos": float(cos.std()),
        "median_cos": float(np.median(cos)),
        "median_unoriented_deg": float(np.degrees(np.median(np.arccos(np.abs(cos))))),
    }


# --------------------------------------------------------------------------- reports


@dataclass
class MetricReport:
    task: str
    metrics: dict
    profiles: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.metrics.items():
            if isinstance(v, (bool, np.bool_)):
                self.metrics[k] = bool(v)
            elif isinstance(v, (int, float, np.integer, np.floating)):
                if not np.isfinite(v):
                    raise NumericError(f"metric {k} is not finite")
                self.metrics[k] = float(v) if isinstance(v, (float, np.floating)) else int(v)

    def to_dict(self):
        prof = {k: {"freq": p.freq_bins.tolist(), "power": p.power.tolist()} for k, p in self.profiles.items()}
        return {"task": self.task, "metrics": self.metrics, "profiles": prof}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), indent=kw.pop("indent", 2), sort_keys=True, **kw)


def _mean_valid(rows, keys):
    ok = [r for r in rows if r.get("valid", True)]
    out = {k: float(np.mean([r[k] for r in ok])) if ok else float("nan") for k in keys}
    out["n_invalid"] = len(rows) - len(ok)
    return out


def evaluate(task, gen, ref=None, **kw):
    """Task-specific metric summary of generated ``ParticleSet`` ``gen`` against ``ref``."""
    if task == "bluenoise":
        if ref is None:
            raise ConfigError("bluenoise evaluation needs a reference set")
        f_max = 2.0 * math.sqrt(gen.n_particles)
        pg = radial_power_spectrum(np.mod(gen.data, 1.0), f_max=f_max)
        pr = radial_power_spectrum(np.mod(ref.data, 1.0), f_max=f_max)
        m = spectrum_compare(pg, pr)
        m["low_freq_ratio"] = low_frequency_ratio(pg)
        return MetricReport(task, m, {"gen": pg, "ref": pr})
    if task == "minsurf":
        target = kw.get("target_fraction", 0.7)
        area = kw.get("domain_area", 4.0)
        rows = [min_surface_metrics(x, None, target, area) for x in gen.data.astype(float)]
        keys = ("area_err", "angle_smoothness", "uniformity_cv")
        m = {k: float(np.mean([r[k] for r in rows])) for k in keys}
        m.update({f"{k}_median": float(np.median([r[k] for r in rows])) for k in keys})
        m["n_invalid"] = sum(not r["valid"] for r in rows)
        return MetricReport(task, m)
    if task == "dla":
        dims = [fractal_dimension(x).d_f for x in gen.data.astype(float)]
        m = {"d_f_mean": float(np.mean(dims)), "d_f_std": float(np.std(dims))}
        if ref is not None:
            m["d_f_ref_mean"] = float(np.mean([fractal_dimension(x).d_f for x in ref.data.astype(float)]))
            m["d_f_abs_diff"] = abs(m["d_f_mean"] - m["d_f_ref_mean"])
        return MetricReport(task, m)
    if task == "thomson":
        shells = gen.attrs[..., 0] if gen.attrs is not None else np.zeros(gen.data.shape[:2])
        rows = [thomson_metrics(x, s) for x, s in zip(gen.data.astype(float), shells)]
        return MetricReport(task, _mean_valid(rows, ("cv_avg", "ftan_rms")))
    if task == "circle":
        if gen.attrs is None:
            raise ConfigError("circle evaluation needs emitted normals")
        pts = gen.data.reshape(-1, 2).astype(float)
        true = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        pred = gen.attrs.reshape(-1, gen.attrs.shape[-1]).astype(float)
        pred = pred / np.linalg.norm(pred, axis=1, keepdims=True)
        return MetricReport(task, normal_stats(pred, true))
    if task == "custom":
        if ref is None:
            raise ConfigError("custom evaluation needs a reference set")
        return MetricReport(task, {"one_nna_chamfer": one_nna(gen.data, ref.data, "chamfer")})
    raise ConfigError(f"no metrics for task {task!r}")
