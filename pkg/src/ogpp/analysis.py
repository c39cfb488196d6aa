"""Diagnostics for how canonicalization shapes the regression problem.

* ``lipschitz_ratio`` / ``cancellation_score``: edge statistics between two
  coupled pairs ``(x0, x1)`` that are close at an intermediate time.
* ``midtime_study``: k-NN graphs over interpolants for the four canonicalization
  regimes, summarized in equal-frequency distance bins.
* ``cond_cov_study``: Monte-Carlo estimate of the trace of the conditional
  covariance of the linear-path target given the interpolant, with and without
  canonicalizing the data endpoint.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import chndtr
from scipy.stats import ncx2

from ._validation import ConfigError, ContractError, check_time, sub_rng
from .canon import CanonSpec, canonicalize_batch
from .energy import ParticleSet
from .flow import sample_prior

REGIMES = ("none", "x0_only", "x1_only", "both")


def _flat(a):
    a = np.asarray(a, float)
    return a.reshape(a.shape[0], -1) if a.ndim > 1 else a[None]


def lipschitz_ratio(d0, d1, t):
    """``|d1 - d0| / |(1-t) d0 + t d1|``; a denominator below 1e-12 gives ``inf``.

    Accepts single difference vectors or stacks (one edge per row, any trailing shape).
    """
    t = check_time(t)
    if not 0.0 < t < 1.0:
        raise ContractError("t must lie strictly inside (0, 1)")
    single = np.ndim(d0) == 1
    a, b = _flat(d0), _flat(d1)
    num = np.linalg.norm(b - a, axis=1)
    den = np.linalg.norm((1 - t) * a + t * b, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den < 1e-12, np.inf, num / np.where(den < 1e-12, 1.0, den))
    return float(out[0]) if single else out


def cancellation_score(d0, d1, t, eps=1e-12):
    """``|(1-t) d0 + t d1| / ((1-t)|d0| + t|d1| + eps)``, in ``[0, 1]``."""
    t = check_time(t)
    if not 0.0 < t < 1.0:
        raise ContractError("t must lie strictly inside (0, 1)")
    single = np.ndim(d0) == 1
    a, b = _flat(d0), _flat(d1)
    num = np.linalg.norm((1 - t) * a + t * b, axis=1)
    den = (1 - t) * np.linalg.norm(a, axis=1) + t * np.linalg.norm(b, axis=1) + eps
    out = num / den
    return float(out[0]) if single else out


@dataclass
class EdgeStats:
    delta0: np.ndarray
    delta1: np.ndarray
    t: float
    lipschitz: np.ndarray
    cancellation: np.ndarray
    dist_t: np.ndarray

    @classmethod
    def from_deltas(cls, delta0, delta1, t, eps=1e-12):
        d0, d1 = _flat(delta0), _flat(delta1)
        dt = np.linalg.norm((1 - t) * d0 + t * d1, axis=1)
        return cls(d0, d1, t, lipschitz_ratio(d0, d1, t), cancellation_score(d0, d1, t, eps), dt)


@dataclass
class RegimeStudy:
    regime: str
    bins: list
    summary: dict = field(default_factory=dict)

    def rows(self):
        keys = ("bin", "mean_dist", "median_L", "p90_L", "median_canc", "p90_canc", "count")
        return keys, [[i] + [b[k] for k in keys[1:]] for i, b in enumerate(self.bins)]


def _q(x, q):
    # no interpolation, so infinite sentinels never produce nan
    return float(np.quantile(x, q, method="inverted_cdf"))


def summarize_edges(stats: EdgeStats, n_bins):
    order = np.argsort(stats.dist_t, kind="stable")
    bins = []
    for chunk in np.array_split(order, n_bins):
        L, c = stats.lipschitz[chunk], stats.cancellation[chunk]
        bins.append(
            {
                "mean_dist": float(stats.dist_t[chunk].mean()),
                "median_L": _q(L, 0.5),
                "p90_L": _q(L, 0.9),
                "median_canc": _q(c, 0.5),
                "p90_canc": _q(c, 0.9),
                "count": int(chunk.size),
            }
        )
    L, c = stats.lipschitz, stats.cancellation
    summary = {
        "median_L": _q(L, 0.5),
        "p90_L": _q(L, 0.9),
        "median_canc": _q(c, 0.5),
        "p90_canc": _q(c, 0.9),
        "frac_inf": float(np.mean(~np.isfinite(L))),
        "n_edges": int(L.size),
    }
    return bins, summary


@dataclass(frozen=True)
class MidtimeConfig:
    n_pairs: int = 200_000
    n_anchors: int = 2000
    k: int = 32
    n_bins: int = 10
    t: float = 0.5
    seed: int = 0
    prior: str = "auto"
    prior_scale: float = 1.0
    canon: CanonSpec | None = None
    chunk: int = 256

    def __post_init__(self):
        if self.n_pairs < self.n_anchors * self.k:
            raise ConfigError("n_pairs must be at least n_anchors * k")
        if not 0.0 < self.t < 1.0:
            raise ConfigError("t must lie strictly inside (0, 1)")


def _knn(queries, pool, k, exclude, chunk):
    """Indices of the ``k`` nearest pool rows for every query (excluding ``exclude[i]``)."""
    pool_sq = np.einsum("ij,ij->i", pool, pool)
    out = np.empty((queries.shape[0], k), dtype=np.int64)
    for s in range(0, queries.shape[0], chunk):
        q = queries[s : s + chunk]
        d = pool_sq[None, :] - 2.0 * (q @ pool.T)
        d[np.arange(q.shape[0]), exclude[s : s + chunk]] = np.inf
        part = np.argpartition(d, k, axis=1)[:, :k]
        rows = np.arange(q.shape[0])[:, None]
        order = np.lexsort((part, d[rows, part]), axis=1)
        out[s : s + chunk] = part[rows, order]
    return out


def _regime_pairs(data, n_pairs, regime, canon, prior, prior_scale, rng):
    S, N, D = data.shape
    x1 = data[rng.integers(0, S, size=n_pairs)]
    x1 = np.take_along_axis(x1, np.argsort(rng.random((n_pairs, N)), axis=1)[..., None], axis=1)
    x0 = sample_prior(rng, (n_pairs, N, D), prior, prior_scale)
    if regime in ("x1_only", "both"):
        x1 = canonicalize_batch(x1, None, canon)[0]
    if regime in ("x0_only", "both"):
        x0 = canonicalize_batch(x0, None, canon)[0]
    return x0, x1


def midtime_study(dataset: ParticleSet, regimes=REGIMES, cfg: MidtimeConfig = MidtimeConfig()):
    """Edge statistics of k-NN graphs over mid-time interpolants, per regime.

    For each regime, ``n_pairs`` noise/data pairs are drawn (data rows shuffled,
    then canonicalized on the regime's sides), anchors are the first
    ``n_anchors`` pairs, and each anchor is joined to its ``k`` nearest
    interpolants. Deterministic for a fixed seed.
    """
    if isinstance(regimes, str):
        regimes = REGIMES if regimes == "all" else (regimes,)
    for r in regimes:
        if r not in REGIMES:
            raise ConfigError(f"unknown regime {r!r}")
    data = dataset.data.astype(np.float64)
    D = data.shape[2]
    canon = cfg.canon or CanonSpec("hilbert", dims=D)
    prior = cfg.prior
    if prior == "auto":
        prior = "gaussian" if dataset.task == "bluenoise" else "uniform_box"
    t = cfg.t
    out = {}
    for ri, regime in enumerate(regimes):
        rng = sub_rng(cfg.seed, REGIMES.index(regime))
        x0, x1 = _regime_pairs(data, cfg.n_pairs, regime, canon, prior, cfg.prior_scale, rng)
        f0 = x0.reshape(cfg.n_pairs, -1)
        f1 = x1.reshape(cfg.n_pairs, -1)
        ft = ((1 - t) * f0 + t * f1).astype(np.float32)
        anchors = np.arange(cfg.n_anchors)
        nbr = _knn(ft[anchors], ft, cfg.k, anchors, cfg.chunk)
        i = np.repeat(anchors, cfg.k)
        j = nbr.reshape(-1)
        stats = EdgeStats.from_deltas(f0[i] - f0[j], f1[i] - f1[j], t)
        bins, summary = summarize_edges(stats, cfg.n_bins)
        out[regime] = RegimeStudy(regime, bins, summary)
    return out


# --------------------------------------------------------------------------- conditional covariance


def make_orbit_dataset(n_base=1, n_particles=4, dim=2, n_samples=1000, scale=0.5, seed=0, permute=True):
    """Random row permutations of ``n_base`` fixed configurations.

    With ``permute=False`` every sample keeps its base configuration's canonical
    order, so there is no permutation ambiguity to remove.
    """
    rng = sub_rng(seed, 0x0B17)
    base = rng.uniform(-scale, scale, size=(n_base, n_particles, dim))
    base = np.stack([canonicalize_batch(b[None], None, CanonSpec("hilbert", dims=dim))[0][0] for b in base])
    which = rng.integers(0, n_base, size=n_samples)
    data = base[which]
    if permute:
        perm = np.argsort(rng.random((n_samples, n_particles)), axis=1)
        data = np.take_along_axis(data, perm[..., None], axis=1)
    return ParticleSet(data, None, None, "custom", seed, {"n_base": n_base})


@dataclass(frozen=True)
class CovConfig:
    t_grid: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    n_anchors: int = 2000
    n_candidates: int = 2000
    radius: float | None = None
    seed: int = 0


@dataclass
class CovCurve:
    t: np.ndarray
    trace_raw: np.ndarray
    se_raw: np.ndarray
    trace_canon: np.ndarray
    se_canon: np.ndarray

    @property
    def diff(self):
        return self.trace_raw - self.trace_canon

    @property
    def se_diff(self):
        return np.sqrt(self.se_raw**2 + self.se_canon**2)

    def rows(self):
        keys = ("t", "trace_raw", "se_raw", "trace_canon", "se_canon", "diff", "se_diff")
        return keys, [list(r) for r in zip(self.t, self.trace_raw, self.se_raw, self.trace_canon, self.se_canon, self.diff, self.se_diff)]


def _ball_params(anchors, cands, t, radius):
    # P(|(1-t) x0 + t c - x| <= r) for x0 ~ N(0, I) is a noncentral chi-square cdf
    mu_sq = (
        np.einsum("ij,ij->i", anchors, anchors)[:, None]
        - 2.0 * t * anchors @ cands.T
        + t * t * np.einsum("ij,ij->i", cands, cands)[None, :]
    ) / (1 - t) ** 2
    return (radius / (1 - t)) ** 2, np.maximum(mu_sq, 1e-300)


def _ball_log_weights(anchor, cands, t, radius):
    q, nc = _ball_params(np.atleast_2d(anchor), cands, t, radius)
    return ncx2.logcdf(q, anchor.size, nc[0])


def _ball_weights(anchors, cands, t, radius):
    """Normalized ball probabilities per anchor row; rows that underflow are redone in log space."""
    F = anchors.shape[1]
    q, nc = _ball_params(anchors, cands, t, radius)
    p = chndtr(q, F, nc)
    tot = p.sum(axis=1)
    for i in np.flatnonzero(~(tot > 0)):
        lw = ncx2.logcdf(q, F, nc[i])
        if not np.max(lw) > -700:
            p[i] = np.nan
            continue
        p[i] = np.exp(lw - lw.max())
    return p / p.sum(axis=1, keepdims=True)


def _trace_at(anchors, cands, t, radius, chunk=256):
    traces = np.empty(anchors.shape[0])
    c_sq = np.einsum("ij,ij->i", cands, cands)
    widened = 0
    for s in range(0, anchors.shape[0], chunk):
        x = anchors[s : s + chunk]
        w = _ball_weights(x, cands, t, radius)
        r = radius
        while np.any(np.isnan(w[:, 0])):
            bad = np.isnan(w[:, 0])
            r *= 2.0
            widened += int(bad.sum())
            w[bad] = _ball_weights(x[bad], cands, t, r)
        # E|Y|^2 - |E Y|^2 with Y = (c - x) / (1 - t)
        x_sq = np.einsum("ij,ij->i", x, x)
        mean_c = w @ cands
        second = w @ c_sq - 2.0 * np.einsum("ij,ij->i", mean_c, x) + x_sq
        mean = mean_c - x
        traces[s : s + chunk] = (second - np.einsum("ij,ij->i", mean, mean)) / (1 - t) ** 2
    if widened:
        warnings.warn(f"conditioning ball widened {widened} times (empty neighbourhoods)", RuntimeWarning)
    return traces


def cond_cov_study(dataset: ParticleSet, canon: CanonSpec | None = None, cfg: CovConfig = CovConfig()):
    """Trace of Cov(Y | X_t near x) for the linear path with a standard normal prior.

    The conditional law of the data endpoint given ``X_t`` in a ball around ``x``
    is a reweighting of candidate data configurations by the exact probability
    that the prior noise lands the interpolant in the ball; ``Y`` is evaluated at
    the ball centre. Anchors ``x`` are drawn from the interpolant marginal of each
    setting, so both traces are averages under their own marginals.
    """
    data = dataset.data.astype(np.float64)
    S, N, D = data.shape
    canon = canon or CanonSpec("hilbert", dims=D)
    F = N * D
    if cfg.radius is None:
        lo, hi = data.min(axis=(0, 1)), data.max(axis=(0, 1))
        radius = 0.05 * float(np.linalg.norm(hi - lo)) * math.sqrt(N)
    else:
        radius = float(cfg.radius)
    res = {"raw": ([], []), "canon": ([], [])}
    for ti, t in enumerate(cfg.t_grid):
        for mode in ("raw", "canon"):
            rng = sub_rng(cfg.seed, ti, 0)
            cands = data[rng.integers(0, S, size=cfg.n_candidates)]
            anchor_x1 = data[rng.integers(0, S, size=cfg.n_anchors)]
            x0 = rng.normal(size=(cfg.n_anchors, N, D))
            if mode == "canon":
                cands = canonicalize_batch(cands, None, canon)[0]
                anchor_x1 = canonicalize_batch(anchor_x1, None, canon)[0]
            xt = ((1 - t) * x0 + t * anchor_x1).reshape(cfg.n_anchors, F)
            tr = _trace_at(xt, cands.reshape(-1, F), t, radius)
            res[mode][0].append(tr.mean())
            res[mode][1].append(tr.std(ddof=1) / math.sqrt(tr.size))
    return CovCurve(
        np.asarray(cfg.t_grid, float),
        np.asarray(res["raw"][0]),
        np.asarray(res["raw"][1]),
        np.asarray(res["canon"][0]),
        np.asarray(res["canon"][1]),
    )
