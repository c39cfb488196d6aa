"""Training and sampling of particle flow-matching models.

``make_batch`` turns a dataset into regression targets: it pairs data with prior
noise, optionally canonicalizes either endpoint, draws one time per
configuration and evaluates the chosen probability path. ``train`` runs Adam on
the squared error; ``sample`` integrates the learned field with forward Euler and,
for geometric paths, reads unit normals off the terminal velocity.
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator

from ._validation import ConfigError, ContractError, NumericError, check_batch, sub_rng
from .canon import CanonSpec, canonicalize_batch
from .energy import ParticleSet
from .net import AdamState, NetConfig, VelocityNet, adam_step, clip_grads, forward, loss_and_grads
from .paths import PathSpec, path_batch, terminal_velocity

CANON_SIDES = ("none", "x0_only", "x1_only", "both")
PRIORS = ("uniform_box", "gaussian", "scaled_gaussian", "sphere", "shell", "torus")
ATTR_ROLES = ("auto", "normals", "curve_normals", "coords", "ignore")
COND_ROLES = ("auto", "anchors", "none")


class TrainingDiverged(NumericError):
    """Raised when the loss or gradients become non-finite; ``net`` holds the last finite state."""

    def __init__(self, msg, net=None, step=None, losses=None):
        super().__init__(msg)
        self.net, self.step, self.losses = net, step, losses


# --------------------------------------------------------------------------- coupling


@dataclass(frozen=True)
class CouplingSpec:
    kind: str = "independent"
    max_batch: int = 128

    def __post_init__(self):
        if self.kind not in ("independent", "minibatch_ot"):
            raise ConfigError(f"unknown coupling {self.kind!r}")


def couple(noise_batch, data_batch, spec: CouplingSpec = CouplingSpec()):
    """Pairs ``(noise index, data index)`` for a batch.

    Minibatch OT solves the assignment minimizing the summed squared distance
    between flattened configurations exactly.
    """
    x0, x1 = check_batch(noise_batch, "noise_batch"), check_batch(data_batch, "data_batch")
    if x0.shape[0] != x1.shape[0]:
        raise ContractError("noise and data batches must have equal size")
    b = x0.shape[0]
    if spec.kind == "independent":
        return np.stack([np.arange(b), np.arange(b)], axis=1)
    if b > spec.max_batch:
        raise ConfigError(f"minibatch OT is capped at batch size {spec.max_batch}")
    f0, f1 = x0.reshape(b, -1), x1.reshape(b, -1)
    cost = np.sum(f0 * f0, 1)[:, None] + np.sum(f1 * f1, 1)[None, :] - 2.0 * f0 @ f1.T
    rows, cols = linear_sum_assignment(cost)
    return np.stack([rows, cols], axis=1)


# --------------------------------------------------------------------------- priors


def sample_prior(rng, shape, prior="uniform_box", scale=1.0):
    """Noise configurations of ``shape = (B, N, D)``."""
    if prior == "uniform_box":
        return rng.uniform(-scale, scale, size=shape)
    if prior == "gaussian":
        return rng.normal(size=shape)
    if prior == "scaled_gaussian":
        return scale * rng.normal(size=shape)
    if prior in ("sphere", "shell"):
        v = rng.normal(size=shape)
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        if prior == "sphere":
            return scale * v
        r = rng.uniform(0.5, 1.0, size=shape[:-1] + (1,))
        return scale * r * v
    if prior == "torus":
        return rng.random(size=shape)
    raise ConfigError(f"unknown prior {prior!r}")


# --------------------------------------------------------------------------- configuration


@dataclass(frozen=True)
class TrainConfig:
    path: PathSpec = field(default_factory=PathSpec)
    canon: CanonSpec | None = None
    canon_side: str = "x1_only"
    coupling: CouplingSpec = field(default_factory=CouplingSpec)
    prior: str = "uniform_box"
    prior_scale: float = 1.0
    batch_size: int = 32
    steps: int = 1000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0
    lr_schedule: str = "cosine"
    warmup: int = 100
    seed: int = 0
    shuffle_particles: bool = True
    attrs_as: str = "auto"
    cond_from: str = "auto"
    d_emb: int = 128
    n_layers: int = 4
    n_heads: int = 4
    use_index_embedding: bool = True
    param_dtype: str = "float32"
    log_every: int = 100

    def __post_init__(self):
        if self.canon_side not in CANON_SIDES:
            raise ConfigError(f"canon_side must be one of {CANON_SIDES}")
        if self.prior not in PRIORS:
            raise ConfigError(f"prior must be one of {PRIORS}")
        if self.attrs_as not in ATTR_ROLES:
            raise ConfigError(f"attrs_as must be one of {ATTR_ROLES}")
        if self.cond_from not in COND_ROLES:
            raise ConfigError(f"cond_from must be one of {COND_ROLES}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError("lr_schedule must be constant or cosine")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be >= 1 and steps >= 0")
        if self.coupling.kind == "minibatch_ot" and self.batch_size > self.coupling.max_batch:
            raise ConfigError("batch_size exceeds the minibatch-OT cap")

    def to_dict(self):
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("path"), dict):
            p = dict(d["path"])
            p["alpha_range"] = tuple(p.get("alpha_range", (0.5, 15.0)))
            d["path"] = PathSpec(**p)
        if isinstance(d.get("canon"), dict):
            d["canon"] = CanonSpec(**d["canon"])
        if isinstance(d.get("coupling"), dict):
            d["coupling"] = CouplingSpec(**d["coupling"])
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class DataRoles(NamedTuple):
    """How a dataset's attributes are used: terminal attributes, extra coordinates, conditioning."""

    attr_role: str
    cond_role: str
    d_model: int
    canon: CanonSpec | None


def resolve_roles(dataset: ParticleSet, cfg: TrainConfig) -> DataRoles:
    D, A = dataset.dim, dataset.n_attrs
    role = cfg.attrs_as
    cond = cfg.cond_from
    if cond == "auto":
        cond = "anchors" if dataset.task == "minsurf" else "none"
    if cond == "anchors" and A < 1:
        raise ConfigError("anchor conditioning needs an anchor-flag attribute")
    if role == "auto":
        if cfg.path.geometric:
            role = "curve_normals" if dataset.task == "minsurf" else "normals"
        elif dataset.task == "dla":
            role = "ignore"
        else:
            role = "ignore"
    if cfg.path.geometric and role not in ("normals", "curve_normals"):
        raise ConfigError("a geometric path needs normals (attrs_as=normals or curve_normals)")
    if role == "normals" and A != D:
        raise ConfigError(f"attrs_as=normals needs {D}-dimensional attributes, dataset has {A}")
    if role in ("normals", "curve_normals") and not cfg.path.geometric:
        raise ConfigError("normal attributes are only used by geometric paths")
    if role == "curve_normals" and D != 2:
        raise ConfigError("curve normals are defined for 2-D closed curves")
    if role == "coords" and A < 1:
        raise ConfigError("attrs_as=coords needs attributes")
    d_model = D + (A if role == "coords" else 0)
    canon = cfg.canon
    if canon is None and cfg.canon_side != "none":
        if dataset.task == "minsurf" and d_model == 2:
            canon = CanonSpec("polygon_ccw", dims=2)
        elif role in ("normals", "curve_normals"):
            canon = CanonSpec("hilbert", dims=2 * D)
        else:
            canon = CanonSpec("hilbert", dims=d_model)
    return DataRoles(role, cond, d_model, canon)


def curve_normals(curves):
    """Outward unit normals of closed polylines ``B x N x 2`` given in traversal order."""
    tang = np.roll(curves, -1, axis=-2) - np.roll(curves, 1, axis=-2)
    area = 0.5 * np.sum(curves[..., 0] * np.roll(curves[..., 1], -1, axis=-1) - np.roll(curves[..., 0], -1, axis=-1) * curves[..., 1], axis=-1)
    sign = np.where(area >= 0, 1.0, -1.0)[..., None, None]
    n = sign * np.stack([tang[..., 1], -tang[..., 0]], axis=-1)
    return n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-300)


def anchor_tokens(points, flags):
    """Anchor coordinates per configuration, sorted lexicographically (``B x M x D``)."""
    out = []
    for x, f in zip(points, flags):
        a = x[f > 0.5]
        out.append(a[np.lexsort(a.T[::-1])])
    m = {len(a) for a in out}
    if len(m) != 1:
        raise ContractError("every configuration must carry the same number of anchors")
    return np.stack(out)


def _spec_for(canon: CanonSpec, d):
    return canon if canon.dims == d or canon.curve in ("none", "polygon_ccw") else replace(canon, dims=d)


@dataclass
class TrainingBatch:
    x_t: np.ndarray
    t: np.ndarray
    u_ref: np.ndarray
    cond: np.ndarray | None = None
    x0: np.ndarray | None = None
    x1: np.ndarray | None = None
    v1: np.ndarray | None = None


def prepare_data(dataset: ParticleSet, roles: DataRoles):
    """Model-space data ``S x N x d_model``, per-particle extras, and condition tokens."""
    x = dataset.data.astype(np.float64)
    attrs = None if dataset.attrs is None else dataset.attrs.astype(np.float64)
    normals = None
    if roles.attr_role == "normals":
        normals = attrs / np.linalg.norm(attrs, axis=-1, keepdims=True)
    elif roles.attr_role == "curve_normals":
        normals = curve_normals(x)
    elif roles.attr_role == "coords":
        x = np.concatenate([x, attrs], axis=-1)
    flags = attrs[..., 0] if roles.cond_role == "anchors" else None
    cond = anchor_tokens(x[..., : dataset.dim], flags) if flags is not None else None
    return x, normals, flags, cond


def make_batch(dataset: ParticleSet, cfg: TrainConfig, rng, roles: DataRoles | None = None, prepared=None):
    """Regression targets ``(x_t, t, u_ref)`` for one optimizer step."""
    roles = roles or resolve_roles(dataset, cfg)
    x_all, n_all, f_all, c_all = prepared or prepare_data(dataset, roles)
    B = cfg.batch_size
    S, N, d = x_all.shape
    idx = rng.integers(0, S, size=B)
    x1 = x_all[idx]
    n1 = None if n_all is None else n_all[idx]
    f1 = None if f_all is None else f_all[idx]
    cond = None if c_all is None else c_all[idx]
    rows = np.arange(B)[:, None]
    if cfg.shuffle_particles:
        perm = np.argsort(rng.random((B, N)), axis=1)
        x1 = x1[rows, perm]
        n1 = None if n1 is None else n1[rows, perm]
        f1 = None if f1 is None else f1[rows, perm]
    x0 = sample_prior(rng, (B, N, d), cfg.prior, cfg.prior_scale)
    canon = roles.canon
    if cfg.canon_side in ("x1_only", "both"):
        if canon.curve == "polygon_ccw":
            key = None if f1 is None else f1[..., None]
        elif canon.dims == d:
            key = None
        else:
            key = n1
        _, _, perm = canonicalize_batch(x1, key, canon)
        x1 = x1[rows, perm]
        n1 = None if n1 is None else n1[rows, perm]
    if cfg.canon_side in ("x0_only", "both"):
        _, _, perm = canonicalize_batch(x0, None, _spec_for(canon, d))
        x0 = x0[rows, perm]
    pairs = couple(x0, x1, cfg.coupling)
    x0 = x0[pairs[np.argsort(pairs[:, 1]), 0]]
    t = rng.uniform(0.0, 1.0, size=B)
    v1 = None
    if cfg.path.geometric:
        v1 = terminal_velocity(x0, x1, n1, cfg.path)
    x_t, u_ref = path_batch(x0, x1, t, cfg.path, v1)
    if not np.all(np.isfinite(u_ref)):
        raise NumericError("non-finite reference velocity")
    return TrainingBatch(x_t, t, u_ref, cond, x0, x1, v1)


# --------------------------------------------------------------------------- training


def build_net(dataset: ParticleSet, cfg: TrainConfig, roles: DataRoles | None = None):
    roles = roles or resolve_roles(dataset, cfg)
    n_cond = 0
    if roles.cond_role == "anchors":
        n_cond = int(np.max(np.sum(dataset.attrs[..., 0] > 0.5, axis=1)))
    nc = NetConfig(
        d_in=roles.d_model,
        d_emb=cfg.d_emb,
        n_layers=cfg.n_layers,
        n_heads=cfg.n_heads,
        n_particles=dataset.n_particles,
        n_cond=n_cond,
        d_cond=dataset.dim,
        param_dtype=cfg.param_dtype,
        use_index_embedding=cfg.use_index_embedding,
    )
    return VelocityNet(nc, seed=int(sub_rng(cfg.seed, 0xC0DE).integers(2**31)))


def learning_rate(cfg: TrainConfig, step):
    warm = min(1.0, (step + 1) / max(cfg.warmup, 1))
    if cfg.lr_schedule == "constant":
        return cfg.lr * warm
    frac = step / max(cfg.steps - 1, 1)
    return cfg.lr * warm * (0.05 + 0.95 * 0.5 * (1.0 + math.cos(math.pi * frac)))


def train(dataset: ParticleSet, cfg: TrainConfig, net: VelocityNet | None = None, log=sys.stderr, callback=None):
    """Fit a velocity network; returns ``(net, losses)``.

    The run is a deterministic function of ``cfg`` (including its seed) when BLAS
    runs single-threaded. Non-finite losses or gradients raise
    :class:`TrainingDiverged` before the offending update is applied.
    """
    roles = resolve_roles(dataset, cfg)
    prepared = prepare_data(dataset, roles)
    net = net or build_net(dataset, cfg, roles)
    state = AdamState.zeros_like(net.params)
    rng = sub_rng(cfg.seed, 0xDA7A)
    losses = np.empty(cfg.steps)
    for step in range(cfg.steps):
        batch = make_batch(dataset, cfg, rng, roles, prepared)
        try:
            loss, grads = loss_and_grads(net, batch.x_t, batch.t, batch.u_ref, batch.cond)
        except NumericError as exc:
            raise TrainingDiverged(str(exc), net, step, losses[:step]) from exc
        grads, gnorm = clip_grads(grads, cfg.grad_clip)
        if not math.isfinite(gnorm):
            raise TrainingDiverged("non-finite gradient", net, step, losses[:step])
        adam_step(net, grads, state, learning_rate(cfg, step), cfg.beta1, cfg.beta2, cfg.eps)
        losses[step] = loss
        if log is not None and cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            print(f"step={step} loss={loss:.6g}", file=log, flush=True)
        if callback is not None:
            callback(step, loss, net)
    return net, losses


# --------------------------------------------------------------------------- sampling


def sample(
    net: VelocityNet,
    n_samples,
    n_steps=10,
    prior="uniform_box",
    prior_scale=1.0,
    seed=0,
    cond=None,
    emit_normals=False,
    batch_size=64,
    task="custom",
    n_pos=None,
    return_trajectory=False,
):
    """Euler integration of the learned field from prior noise.

    Each sample ``s`` starts from noise drawn from its own stream ``(seed, s)``.
    With ``emit_normals`` the field is evaluated once more at ``t = 1`` and
    normalized per particle; vectors shorter than 1e-8 are left at zero and
    counted in ``meta["n_flagged_normals"]``. ``cond`` may hold one condition set
    per sample or a single set shared by all.
    """
    if n_steps < 1:
        raise ContractError("n_steps must be >= 1")
    cfg = net.config
    N, d = cfg.n_particles, cfg.d_in
    n_pos = d if n_pos is None else n_pos
    if cond is not None:
        cond = np.asarray(cond, float)
        if cond.ndim == 2:
            cond = np.broadcast_to(cond[None], (n_samples,) + cond.shape)
        if cond.shape[0] != n_samples:
            raise ContractError("cond must have one entry per sample")
    x = np.stack([sample_prior(sub_rng(seed, s), (1, N, d), prior, prior_scale)[0] for s in range(n_samples)])
    traj = [x.copy()] if return_trajectory else None
    dt = 1.0 / n_steps
    normals = np.zeros((n_samples, N, n_pos)) if emit_normals else None
    for b0 in range(0, n_samples, batch_size):
        sl = slice(b0, b0 + batch_size)
        xb = x[sl]
        cb = None if cond is None else cond[sl]
        for k in range(n_steps):
            t = np.full(xb.shape[0], k * dt)
            xb = xb + dt * forward(net, xb, t, cb).astype(np.float64)
            if not np.all(np.isfinite(xb)):
                raise NumericError("non-finite state during sampling")
            if return_trajectory and b0 == 0:
                traj.append(xb.copy())
        x[sl] = xb
        if emit_normals:
            u1 = forward(net, xb, np.ones(xb.shape[0]), cb).astype(np.float64)[..., :n_pos]
            normals[sl] = u1
    meta = {"n_steps": n_steps, "prior": prior}
    attrs = None
    pos = x[..., :n_pos]
    if emit_normals:
        norm = np.linalg.norm(normals, axis=-1, keepdims=True)
        small = norm[..., 0] < 1e-8
        attrs = np.where(small[..., None], 0.0, normals / np.maximum(norm, 1e-300))
        meta["n_flagged_normals"] = int(small.sum())
    elif d > n_pos:
        attrs = x[..., n_pos:]
    ps = ParticleSet(pos, attrs, None, task, seed, meta)
    return (ps, traj) if return_trajectory else ps


# --------------------------------------------------------------------------- estimator


class OGPPFlow(BaseEstimator):
    """Flow-matching generator for particle configurations.

    Parameters mirror :class:`TrainConfig` in flat form. ``fit`` accepts a
    :class:`ParticleSet` (or an ``S x N x D`` array plus optional ``attrs``);
    ``sample`` draws new configurations.
    """

    def __init__(
        self,
        path="linear",
        terminal_mode="none",
        lam=1.0,
        canon_curve="auto",
        canon_dims=None,
        canon_side="x1_only",
        coupling="independent",
        prior="uniform_box",
        prior_scale=1.0,
        batch_size=32,
        steps=1000,
        lr=1e-3,
        grad_clip=1.0,
        d_emb=128,
        n_layers=4,
        n_heads=4,
        use_index_embedding=True,
        attrs_as="auto",
        cond_from="auto",
        shuffle_particles=True,
        seed=0,
        log_every=0,
    ):
        self.path = path
        self.terminal_mode = terminal_mode
        self.lam = lam
        self.canon_curve = canon_curve
        self.canon_dims = canon_dims
        self.canon_side = canon_side
        self.coupling = coupling
        self.prior = prior
        self.prior_scale = prior_scale
        self.batch_size = batch_size
        self.steps = steps
        self.lr = lr
        self.grad_clip = grad_clip
        self.d_emb = d_emb
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.use_index_embedding = use_index_embedding
        self.attrs_as = attrs_as
        self.cond_from = cond_from
        self.shuffle_particles = shuffle_particles
        self.seed = seed
        self.log_every = log_every

    def train_config(self):
        canon = None
        if self.canon_curve != "auto":
            canon = CanonSpec(self.canon_curve, dims=self.canon_dims or 2)
        return TrainConfig(
            path=PathSpec(self.path, self.terminal_mode, self.lam),
            canon=canon,
            canon_side=self.canon_side,
            coupling=CouplingSpec(self.coupling),
            prior=self.prior,
            prior_scale=self.prior_scale,
            batch_size=self.batch_size,
            steps=self.steps,
            lr=self.lr,
            grad_clip=self.grad_clip,
            seed=self.seed,
            shuffle_particles=self.shuffle_particles,
            attrs_as=self.attrs_as,
            cond_from=self.cond_from,
            d_emb=self.d_emb,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            use_index_embedding=self.use_index_embedding,
            log_every=self.log_every,
        )

    def fit(self, X, y=None, attrs=None, task="custom"):
        ds = X if isinstance(X, ParticleSet) else ParticleSet(check_batch(X), attrs, None, task)
        cfg = self.train_config()
        if cfg.canon is not None and cfg.canon.dims not in (ds.dim, ds.dim + ds.n_attrs):
            cfg = replace(cfg, canon=replace(cfg.canon, dims=ds.dim))
        self.roles_ = resolve_roles(ds, cfg)
        self.config_ = cfg
        self.net_, self.loss_curve_ = train(ds, cfg, log=sys.stderr if self.log_every else None)
        self.task_ = ds.task
        self.n_pos_ = ds.dim
        return self

    def sample(self, n_samples=1, n_steps=10, cond=None, seed=None):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "net_")
        return sample(
            self.net_,
            n_samples,
            n_steps,
            self.prior,
            self.prior_scale,
            self.seed if seed is None else seed,
            cond,
            emit_normals=self.config_.path.geometric,
            task=self.task_,
            n_pos=self.n_pos_,
        )
