"""Orbit-space canonicalization of particle configurations.

A configuration is an ``N x D`` array whose rows are interchangeable particles.
Canonicalization picks one deterministic row order per permutation orbit, either by
sorting particles along a space-filling curve (Hilbert, Morton/Z-order, Moore) or,
for closed 2-D boundaries, by walking the polygon counterclockwise from an anchor.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import ConfigError, ContractError, as_float_array, check_batch, check_config

CURVES = ("none", "hilbert", "morton", "moore", "polygon_ccw")
SFC_CURVES = ("hilbert", "morton", "moore")
_CLAMP_TOL = 1e-9


class DegenerateAxisWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CanonSpec:
    """Canonicalization strategy.

    ``dims`` is the dimension of the vector that is indexed along the curve: the
    particle dimension for position-only sorting, or position plus attribute
    dimension for joint sorting (e.g. 6 for 3-D points with normals).
    """

    curve: str = "hilbert"
    bits: int | None = None
    dims: int = 2
    pose_normalize: bool = False

    def __post_init__(self):
        if self.curve not in CURVES:
            raise ConfigError(f"unknown curve {self.curve!r}; expected one of {CURVES}")
        if self.bits is None:
            object.__setattr__(self, "bits", 16 if self.dims <= 3 else 10)
        if self.bits < 1:
            raise ConfigError("bits must be >= 1")
        if self.dims < 1:
            raise ConfigError("dims must be >= 1")
        if self.bits * self.dims > 63:
            raise ConfigError(f"bits*dims = {self.bits * self.dims} does not fit a 64-bit index")
        if self.curve == "polygon_ccw" and self.dims != 2:
            raise ConfigError("polygon_ccw requires dims = 2")
        if self.curve == "moore" and self.dims != 2:
            raise ConfigError("the Moore curve is implemented for dims = 2 only")


@dataclass(frozen=True)
class PoseFrame:
    center: np.ndarray
    rotation: np.ndarray

    def apply(self, config):
        return (np.asarray(config) - self.center) @ self.rotation


# --------------------------------------------------------------------------- permutations


def is_permutation(perm, n=None):
    perm = np.asarray(perm)
    n = perm.size if n is None else n
    return perm.ndim == 1 and perm.size == n and np.array_equal(np.sort(perm), np.arange(n))


def invert_permutation(perm):
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


# --------------------------------------------------------------------------- curve indices


def _hilbert_from_cells(cells, bits):
    """Skilling's transpose-form Hilbert index, vectorized over the leading axes.

    ``cells`` holds integer grid coordinates (``... x n``) in ``[0, 2**bits)``.
    """
    X = [cells[..., i].astype(np.uint64) for i in range(cells.shape[-1])]
    n = len(X)
    M = np.uint64(1 << (bits - 1))
    Q = M
    while Q > 1:
        P = Q - np.uint64(1)
        for i in range(n):
            hit = (X[i] & Q) != 0
            # invert low bits of X[0] where the bit is set, exchange them otherwise
            t = (X[0] ^ X[i]) & P
            x0_inv = X[0] ^ P
            x0_exc = X[0] ^ t
            xi_exc = X[i] ^ t
            if i == 0:
                X[0] = np.where(hit, x0_inv, X[0])
            else:
                X[0], X[i] = np.where(hit, x0_inv, x0_exc), np.where(hit, X[i], xi_exc)
        Q = Q >> np.uint64(1)
    for i in range(1, n):
        X[i] = X[i] ^ X[i - 1]
    t = np.zeros_like(X[0])
    Q = M
    while Q > 1:
        t = np.where((X[n - 1] & Q) != 0, t ^ (Q - np.uint64(1)), t)
        Q = Q >> np.uint64(1)
    X = [x ^ t for x in X]
    return _interleave(X, bits)


def _interleave(X, bits):
    out = np.zeros_like(X[0])
    one = np.uint64(1)
    for b in range(bits - 1, -1, -1):
        bb = np.uint64(b)
        for x in X:
            out = (out << one) | ((x >> bb) & one)
    return out


def _moore_from_cells(cells, bits):
    if bits == 1:
        return _hilbert_from_cells(cells, 1)
    h = 1 << (bits - 1)
    x = cells[..., 0].astype(np.int64)
    y = cells[..., 1].astype(np.int64)
    left = x < h
    top = y >= h
    lx = np.where(left, x, x - h)
    ly = np.where(top, y - h, y)
    # left quadrants run bottom-to-top, right quadrants top-to-bottom
    u = np.where(left, ly, h - 1 - ly)
    v = np.where(left, h - 1 - lx, lx)
    quadrant = np.where(left, np.where(top, 1, 0), np.where(top, 2, 3)).astype(np.uint64)
    sub = _hilbert_from_cells(np.stack([u, v], axis=-1), bits - 1)
    return quadrant * np.uint64(h * h) + sub


def _morton_from_cells(cells, bits):
    return _interleave([cells[..., i].astype(np.uint64) for i in range(cells.shape[-1])], bits)


def curve_index_from_cells(cells, curve, bits):
    """Curve index of integer cells (``... x dims``) at ``2**bits`` cells per axis."""
    cells = np.asarray(cells)
    if curve == "hilbert":
        return _hilbert_from_cells(cells, bits)
    if curve == "morton":
        return _morton_from_cells(cells, bits)
    if curve == "moore":
        return _moore_from_cells(cells, bits)
    raise ConfigError(f"curve {curve!r} has no cell index")


def _quantize(unit, bits):
    return np.minimum(np.floor(unit * (1 << bits)), (1 << bits) - 1).astype(np.uint64)


def sfc_index(point, spec: CanonSpec):
    """Index of the grid cell containing ``point`` (in the unit cube) along the curve.

    Accepts a single point or an array of points with the coordinate axis last.
    """
    if spec.curve not in SFC_CURVES:
        raise ConfigError(f"sfc_index needs a space-filling curve, got {spec.curve!r}")
    p = as_float_array(point, name="point")
    if p.shape[-1] != spec.dims:
        raise ContractError(f"point has {p.shape[-1]} coordinates, spec.dims = {spec.dims}")
    if np.any(p < -_CLAMP_TOL) or np.any(p >= 1.0 + _CLAMP_TOL):
        raise ContractError("point coordinates must lie in [0, 1)")
    p = np.clip(p, 0.0, np.nextafter(1.0, 0.0))
    idx = curve_index_from_cells(_quantize(p, spec.bits), spec.curve, spec.bits)
    return int(idx) if np.ndim(idx) == 0 else idx


def unit_rescale(x, axis=-2):
    """Per-axis min-max rescale into ``[0, 1]``; zero-extent axes map to 0.5."""
    lo = x.min(axis=axis, keepdims=True)
    hi = x.max(axis=axis, keepdims=True)
    extent = hi - lo
    flat = extent <= 0
    if np.any(flat):
        warnings.warn("degenerate bounding box axis mapped to 0.5", DegenerateAxisWarning, stacklevel=3)
    safe = np.where(flat, 1.0, extent)
    return np.where(flat, 0.5, (x - lo) / safe)


# --------------------------------------------------------------------------- pose


def pose_normalize(config):
    """Recenter and rotate a configuration into its PCA frame.

    Axes are ordered by decreasing variance. Each axis is oriented so that the
    third moment of the projected coordinates is positive, which makes the result
    invariant under rigid motions of the input; near-symmetric axes fall back to
    "largest component positive". The last axis is flipped if needed so the frame
    is a proper rotation.

    Returns
    -------
    config : ndarray (N, D)
    frame : PoseFrame
    """
    x = check_config(config)
    n, d = x.shape
    if n < d:
        raise ContractError(f"pose normalization needs N >= D, got N={n}, D={d}")
    center = x.mean(axis=0)
    xc = x - center
    cov = xc.T @ xc / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if d > 1 and np.min(np.abs(np.diff(evals))) < 1e-8:
        warnings.warn("near-degenerate PCA eigenvalues; frame may be unstable", RuntimeWarning, stacklevel=2)
    scale = np.sqrt(max(evals[0], 1e-300))
    for k in range(d):
        proj = xc @ evecs[:, k]
        skew = np.mean(proj**3) / scale**3
        if abs(skew) > 1e-9:
            sign = np.sign(skew)
        else:
            sign = np.sign(evecs[np.argmax(np.abs(evecs[:, k])), k]) or 1.0
        evecs[:, k] *= sign
    if np.linalg.det(evecs) < 0:
        evecs[:, -1] *= -1.0
    frame = PoseFrame(center=center, rotation=evecs)
    return xc @ evecs, frame


# --------------------------------------------------------------------------- polygons


def signed_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_ccw_canon(boundary, anchors):
    """Order a closed polyline counterclockwise starting at its left-bottom anchor.

    ``boundary`` rows are in polyline order; ``anchors`` are boundary points (within
    1e-6). Index 0 goes to the boundary point nearest the lexicographically smallest
    anchor.
    """
    b = check_config(boundary, "boundary", d=2)
    a = check_config(anchors, "anchors", d=2)
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    if np.any(np.sqrt(d2.min(axis=1)) > 1e-6):
        raise ContractError("anchors must lie on the boundary within 1e-6")
    area = signed_area(b)
    if abs(area) <= 1e-15:
        raise ContractError("degenerate polygon (zero signed area)")
    first = np.lexsort((a[:, 1], a[:, 0]))[0]
    start = int(np.argmin(d2[first]))
    n = b.shape[0]
    if area > 0:
        perm = (start + np.arange(n)) % n
    else:
        perm = (start - np.arange(n)) % n
    return b[perm], perm


def angular_order(points):
    """Cyclic order of an unordered boundary sample by angle about its centroid."""
    c = points.mean(axis=0)
    rel = points - c
    ang = np.arctan2(rel[:, 1], rel[:, 0])
    return np.lexsort((np.hypot(rel[:, 0], rel[:, 1]), ang))


# --------------------------------------------------------------------------- canonicalize


def _sort_keys(feat, spec):
    unit = unit_rescale(feat)
    idx = curve_index_from_cells(_quantize(unit, spec.bits), spec.curve, spec.bits)
    # primary key: curve index; ties broken by raw coordinates, first axis first
    keys = [feat[..., k] for k in range(feat.shape[-1] - 1, -1, -1)]
    return tuple(keys) + (idx,)


def _features(x, attrs, spec):
    d = x.shape[-1]
    if spec.dims == d:
        return x
    if attrs is not None and spec.dims == d + attrs.shape[-1]:
        # positions and attributes are rescaled independently per axis anyway
        return np.concatenate([x, attrs], axis=-1)
    raise ContractError(
        f"spec.dims={spec.dims} matches neither the position dimension {d} "
        f"nor position+attribute dimension {d + (0 if attrs is None else attrs.shape[-1])}"
    )


def canonicalize(config, attrs=None, spec: CanonSpec = CanonSpec()):
    """Canonical representative of the permutation orbit of ``config``.

    Returns ``(config', attrs', perm)`` with ``config' = config[perm]``. With
    ``spec.pose_normalize`` the configuration is first moved to its PCA frame
    (attributes of the same dimension are rotated with it).
    """
    x = check_config(config)
    a = None if attrs is None else as_float_array(attrs, "attrs", ndim=2)
    if a is not None and a.shape[0] != x.shape[0]:
        raise ContractError("attrs must have one row per particle")
    n = x.shape[0]
    if spec.pose_normalize:
        x, frame = pose_normalize(x)
        if a is not None and a.shape[1] == x.shape[1]:
            a = a @ frame.rotation
    if spec.curve == "none":
        perm = np.arange(n)
    elif spec.curve == "polygon_ccw":
        if x.shape[1] != 2:
            raise ContractError("polygon_ccw needs 2-D positions")
        ring = angular_order(x)
        if a is not None and np.any(a[:, 0] > 0.5):
            anchors = x[a[:, 0] > 0.5]
        else:
            anchors = x[np.lexsort((x[:, 1], x[:, 0]))[:1]]
        _, sub = polygon_ccw_canon(x[ring], anchors)
        perm = ring[sub]
    else:
        perm = np.lexsort(_sort_keys(_features(x, a, spec), spec))
    return x[perm], (None if a is None else a[perm]), perm


def canonicalize_batch(batch, attrs=None, spec: CanonSpec = CanonSpec()):
    """Vectorized :func:`canonicalize` over an ``S x N x D`` batch.

    Returns ``(batch', attrs', perms)`` where ``perms`` is ``S x N``.
    """
    x = check_batch(batch)
    a = None if attrs is None else np.asarray(attrs, dtype=np.float64).reshape(x.shape[0], x.shape[1], -1)
    s, n, _ = x.shape
    if spec.curve in SFC_CURVES and not spec.pose_normalize:
        perms = np.lexsort(_sort_keys(_features(x, a, spec), spec), axis=-1)
        rows = np.arange(s)[:, None]
        return x[rows, perms], (None if a is None else a[rows, perms]), perms
    outs, outa, perms = [], [], []
    for i in range(s):
        xi, ai, pi = canonicalize(x[i], None if a is None else a[i], spec)
        outs.append(xi)
        outa.append(ai)
        perms.append(pi)
    xa = None if a is None else np.stack(outa)
    return np.stack(outs), xa, np.stack(perms)


class Canonicalizer(TransformerMixin, BaseEstimator):
    """Transformer that maps each configuration in a batch to its canonical order.

    Parameters mirror :class:`CanonSpec`. ``transform`` accepts ``S x N x D`` (or a
    single ``N x D``) and returns the canonicalized positions; the permutations of
    the last call are kept in ``permutations_``.
    """

    def __init__(self, curve="hilbert", bits=None, dims=None, pose_normalize=False):
        self.curve = curve
        self.bits = bits
        self.dims = dims
        self.pose_normalize = pose_normalize

    def _spec(self, d):
        return CanonSpec(self.curve, self.bits, self.dims or d, self.pose_normalize)

    def fit(self, X, y=None, attrs=None):
        X = check_batch(X)
        self.n_particles_ = X.shape[1]
        self.n_features_in_ = X.shape[2]
        self.spec_ = self._spec(X.shape[2] + (0 if attrs is None or self.dims in (None, X.shape[2]) else np.shape(attrs)[-1]))
        return self

    def transform(self, X, attrs=None):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "spec_")
        X = check_batch(X, d=self.n_features_in_)
        out, out_attrs, perms = canonicalize_batch(X, attrs, self.spec_)
        self.permutations_ = perms
        self.attrs_ = out_attrs
        return out
