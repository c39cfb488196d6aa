"""Conditional probability paths between a noise endpoint and a data endpoint.

Families: straight lines, straight lines on the unit torus, and quadratic or cubic
Hermite curves whose terminal tangent carries a per-particle unit attribute
(e.g. a surface normal). The scalar helpers act on single ``D``-vectors; the
``*_batch`` functions broadcast over leading axes and are what training uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._validation import ConfigError, ContractError, as_float_array, check_time, check_unit

FAMILIES = ("linear", "toroidal_linear", "hermite_quadratic", "hermite_cubic")
TERMINAL_MODES = ("none", "ntv", "atv", "atv_optimal")
_GEOMETRIC = ("hermite_quadratic", "hermite_cubic")
_DEGENERATE_CHORD = 1e-12
_VAR_NODES = 129


class DegenerateChordError(ContractError):
    pass


@dataclass(frozen=True)
class PathSpec:
    family: str = "linear"
    terminal_mode: str = "none"
    lam: float = 1.0
    n0_mode: str = "zero"
    alpha_range: tuple = field(default=(0.5, 15.0))

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown path family {self.family!r}")
        if self.terminal_mode not in TERMINAL_MODES:
            raise ConfigError(f"unknown terminal mode {self.terminal_mode!r}")
        if self.terminal_mode != "none" and self.family not in _GEOMETRIC:
            raise ConfigError("a terminal velocity mode needs a Hermite family")
        if self.family in _GEOMETRIC and self.terminal_mode == "none":
            raise ConfigError("Hermite families need a terminal velocity mode")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if self.n0_mode not in ("zero", "chord"):
            raise ConfigError("n0_mode must be 'zero' or 'chord'")
        lo, hi = self.alpha_range
        if not (0 < lo < hi):
            raise ConfigError("alpha_range must satisfy 0 < lo < hi")

    @property
    def geometric(self):
        return self.family in _GEOMETRIC


class PathSample(NamedTuple):
    x_t: np.ndarray
    u_ref: np.ndarray
    t: float


# --------------------------------------------------------------------------- linear


def linear_sample(x0, x1, t):
    t = check_time(t)
    x0, x1 = np.asarray(x0, float), np.asarray(x1, float)
    return PathSample((1.0 - t) * x0 + t * x1, x1 - x0, t)


def minimal_image(d):
    """Wrap displacements into ``[-0.5, 0.5)``."""
    return np.mod(np.asarray(d, float) + 0.5, 1.0) - 0.5


def toroidal_sample(x0, x1, t):
    t = check_time(t)
    x0, x1 = np.asarray(x0, float), np.asarray(x1, float)
    d = minimal_image(x1 - x0)
    return PathSample(np.mod(x0 + t * d, 1.0), d, t)


# --------------------------------------------------------------------------- quadratic Hermite


def hermite_eval(x0, x1, v1, t):
    """Point on the quadratic Hermite curve ``x0 + (2t - t^2)(x1 - x0) + (t^2 - t) v1``."""
    t = check_time(t)
    x0, x1, v1 = (np.asarray(a, float) for a in (x0, x1, v1))
    return x0 + (2 * t - t * t) * (x1 - x0) + (t * t - t) * v1


def hermite_derivative(x0, x1, v1, t):
    x0, x1, v1 = (np.asarray(a, float) for a in (x0, x1, v1))
    t = np.asarray(t, float)
    return (2 - 2 * t) * (x1 - x0) + (2 * t - 1) * v1


def hermite_velocity(x_t, x1, v1, t):
    """Conditional velocity ``2/(1-t) (x1 - x_t) - v1``; at ``t = 1`` the limit ``v1``."""
    t = float(t)
    if not np.isfinite(t) or t < 0 or t > 1:
        raise ContractError(f"time {t} outside [0, 1]")
    x_t, x1, v1 = (np.asarray(a, float) for a in (x_t, x1, v1))
    if t == 1.0:
        return v1.copy()
    return 2.0 / (1.0 - t) * (x1 - x_t) - v1


# --------------------------------------------------------------------------- terminal velocities


def _chord(x0, x1):
    c = np.asarray(x1, float) - np.asarray(x0, float)
    dist = np.linalg.norm(c, axis=-1)
    if np.any(dist <= _DEGENERATE_CHORD):
        raise DegenerateChordError("x0 and x1 coincide; the chord direction is undefined")
    return c, dist


def atv(x0, x1, n_hat, lam=1.0):
    """Arc-length-aware terminal velocity ``D (1 + lam (1 - S)) n_hat``.

    ``D`` is the chord length and ``S`` the cosine between chord and normal.
    """
    n_hat = check_unit(n_hat, "n_hat")
    c, dist = _chord(x0, x1)
    s = np.sum(c * n_hat, axis=-1) / dist
    l_arc = dist * (1.0 + lam * (1.0 - s))
    return l_arc[..., None] * n_hat if np.ndim(l_arc) else l_arc * n_hat


def ntv(n_hat):
    """Unit-norm terminal velocity: the normal itself."""
    n = as_float_array(n_hat, "n_hat")
    norms = np.linalg.norm(n, axis=-1)
    if np.any(norms == 0):
        raise ContractError("zero-norm normal")
    check_unit(n, "n_hat")
    return n / norms[..., None] if n.ndim > 1 else n / norms


def speed_profile(x0, x1, v1, n_nodes=_VAR_NODES):
    """Speeds ``|gamma'(t)|`` at ``n_nodes`` uniform times in ``[0, 1]``."""
    t = np.linspace(0.0, 1.0, n_nodes)
    x0, x1, v1 = (np.asarray(a, float) for a in (x0, x1, v1))
    c = x1 - x0
    g = (2 - 2 * t)[:, None] * c[None] + (2 * t - 1)[:, None] * v1[None]
    return np.linalg.norm(g, axis=-1)


def _speed_var_coeffs(c, n):
    # |(2-2t)c + (2t-1) a n|^2 expanded as polynomial in a for each t node
    t = np.linspace(0.0, 1.0, _VAR_NODES)
    p, q = 2 - 2 * t, 2 * t - 1
    cc, cn = c @ c, c @ n
    return p * p * cc, 2 * p * q * cn, q * q


def _speed_variance(alpha, coeffs, normalized=True):
    k0, k1, k2 = coeffs
    s = np.sqrt(np.maximum(k0 + k1 * alpha + k2 * alpha * alpha, 0.0))
    if normalized:
        m = s.mean()
        return s.var() / (m * m) if m > 0 else np.inf
    return s.var()


def atv_optimal(x0, x1, n_hat, alpha_range=(0.5, 15.0), tol=1e-7, objective="normalized"):
    """Terminal velocity ``alpha* n_hat`` making the speed profile as uniform as possible.

    The speed variance is taken over 129 uniform time nodes. With
    ``objective="normalized"`` (default) it is divided by the squared mean speed, so
    the score does not reward simply slowing the whole curve down; ``"raw"`` uses
    the plain variance. A 64-point scan brackets the global minimum and
    golden-section search refines inside the bracket.
    """
    if objective not in ("normalized", "raw"):
        raise ConfigError(f"unknown objective {objective!r}")
    norm = objective == "normalized"
    n_hat = check_unit(n_hat, "n_hat")
    c, _ = _chord(x0, x1)
    coeffs = _speed_var_coeffs(c, n_hat)
    lo, hi = map(float, alpha_range)
    f = lambda a: _speed_variance(a, coeffs, norm)
    grid = np.linspace(lo, hi, 64)
    vals = np.array([f(a) for a in grid])
    k = int(np.argmin(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    x1_, x2_ = b - invphi * (b - a), a + invphi * (b - a)
    f1, f2 = f(x1_), f(x2_)
    while b - a > tol:
        if f1 <= f2:
            b, x2_, f2 = x2_, x1_, f1
            x1_ = b - invphi * (b - a)
            f1 = f(x1_)
        else:
            a, x1_, f1 = x1_, x2_, f2
            x2_ = a + invphi * (b - a)
            f2 = f(x2_)
    cand = [(f(0.5 * (a + b)), 0.5 * (a + b)), (vals[k], grid[k])]
    alpha = min(cand)[1]
    return alpha * n_hat


def terminal_velocity(x0, x1, n_hat, spec: PathSpec):
    """Terminal velocity for arrays of particles (``... x D``) per ``spec.terminal_mode``."""
    mode = spec.terminal_mode
    if mode == "ntv":
        return ntv(n_hat)
    if mode == "atv":
        return atv(x0, x1, n_hat, spec.lam)
    if mode == "atv_optimal":
        x0, x1, n_hat = np.broadcast_arrays(*(np.asarray(a, float) for a in (x0, x1, n_hat)))
        flat = [a.reshape(-1, a.shape[-1]) for a in (x0, x1, n_hat)]
        out = np.stack([atv_optimal(a, b, n, spec.alpha_range) for a, b, n in zip(*flat)])
        return out.reshape(x0.shape)
    raise ConfigError(f"terminal mode {mode!r} has no terminal velocity")


# --------------------------------------------------------------------------- arc length

_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


def _gauss(f, a, b):
    x = 0.5 * (b - a) * _GL_X + 0.5 * (b + a)
    return 0.5 * (b - a) * float(np.sum(_GL_W * f(x)))


def hermite_arc_length(x0, x1, v1):
    """Length of the quadratic Hermite curve on ``[0, 1]`` in closed form.

    The speed squared is the quadratic ``a t^2 + b t + c``; its root integral has an
    ``asinh`` antiderivative. When the discriminant vanishes (chord parallel to
    ``v1``) the speed is piecewise linear and Gauss-Legendre on each piece is used.
    """
    x0, x1, v1 = (np.asarray(v, float) for v in (x0, x1, v1))
    p = 2 * (x1 - x0) - v1
    q = 2 * (v1 - (x1 - x0))
    a, b, c = q @ q, 2 * (p @ q), p @ p
    if a <= 1e-300:
        return float(np.sqrt(c))
    disc = 4 * a * c - b * b
    if disc <= 1e-12 * max(4 * a * c, 1e-300):
        speed = lambda t: np.sqrt(np.maximum(a * t * t + b * t + c, 0.0))
        kink = -b / (2 * a)
        if 0.0 < kink < 1.0:
            return _gauss(speed, 0.0, kink) + _gauss(speed, kink, 1.0)
        return _gauss(speed, 0.0, 1.0)
    k = np.sqrt(disc) / (2 * a)

    def prim(u):
        return 0.5 * (u * np.sqrt(u * u + k * k) + k * k * np.arcsinh(u / k))

    u0 = b / (2 * a)
    return float(np.sqrt(a) * (prim(1.0 + u0) - prim(u0)))


# --------------------------------------------------------------------------- cubic Hermite


def _cubic_v0(x0, x1, n0_mode):
    if n0_mode == "zero":
        return np.zeros_like(np.asarray(x0, float))
    c, dist = _chord(x0, x1)
    return c / (dist[..., None] if np.ndim(dist) else dist)


def cubic_hermite_sample(x0, x1, n0_mode, v1, t):
    """Cubic Hermite path with tangents ``v0`` (zero or unit chord) and ``v1``."""
    t = check_time(t)
    x0, x1, v1 = (np.asarray(a, float) for a in (x0, x1, v1))
    if n0_mode not in ("zero", "chord"):
        raise ConfigError("n0_mode must be 'zero' or 'chord'")
    v0 = _cubic_v0(x0, x1, n0_mode)
    t2, t3 = t * t, t * t * t
    x_t = (2 * t3 - 3 * t2 + 1) * x0 + (t3 - 2 * t2 + t) * v0 + (-2 * t3 + 3 * t2) * x1 + (t3 - t2) * v1
    u = (6 * t2 - 6 * t) * x0 + (3 * t2 - 4 * t + 1) * v0 + (-6 * t2 + 6 * t) * x1 + (3 * t2 - 2 * t) * v1
    return PathSample(x_t, u, t)


# --------------------------------------------------------------------------- batched


def path_batch(x0, x1, t, spec: PathSpec, v1=None):
    """Interpolants and reference velocities for whole batches.

    ``x0``, ``x1`` (and ``v1`` for Hermite families) are ``B x N x D``; ``t`` has one
    entry per configuration. The Hermite reference velocity is evaluated as the
    exact curve derivative, which equals ``2/(1-t)(x1 - x_t) - v1`` without the
    division.
    """
    t = np.asarray(t, float).reshape(-1, *([1] * (np.ndim(x0) - 1)))
    fam = spec.family
    if fam == "linear":
        return (1 - t) * x0 + t * x1, x1 - x0
    if fam == "toroidal_linear":
        d = minimal_image(x1 - x0)
        return np.mod(x0 + t * d, 1.0), d
    if v1 is None:
        raise ContractError("Hermite paths need terminal velocities")
    if fam == "hermite_quadratic":
        c = x1 - x0
        return x0 + (2 * t - t * t) * c + (t * t - t) * v1, (2 - 2 * t) * c + (2 * t - 1) * v1
    v0 = _cubic_v0(x0, x1, spec.n0_mode)
    t2, t3 = t * t, t * t * t
    x_t = (2 * t3 - 3 * t2 + 1) * x0 + (t3 - 2 * t2 + t) * v0 + (-2 * t3 + 3 * t2) * x1 + (t3 - t2) * v1
    u = (6 * t2 - 6 * t) * x0 + (3 * t2 - 4 * t + 1) * v0 + (-6 * t2 + 6 * t) * x1 + (3 * t2 - 2 * t) * v1
    return x_t, u
