"""Particle velocity network: a plain pre-LN transformer encoder in numpy.

Every particle is a token: ``W_in x_i + e_i + phi(t)``, where ``e_i`` is a learned
embedding of the particle's (canonical) index and ``phi`` a sinusoidal time
embedding passed through a learned linear map. Optional condition tokens (e.g.
anchor points) are appended to the sequence with their own slot embeddings and
are dropped before the shared linear output head.

Gradients are computed by an explicit reverse pass over the cached forward
activations (:class:`Tape`), so no autodiff framework is required.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ._validation import ConfigError, ContractError, NumericError

_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class NetConfig:
    d_in: int = 2
    d_out: int | None = None
    d_emb: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_mlp: int | None = None
    n_particles: int = 64
    n_cond: int = 0
    d_cond: int | None = None
    param_dtype: str = "float32"
    use_index_embedding: bool = True

    def __post_init__(self):
        if self.d_out is None:
            object.__setattr__(self, "d_out", self.d_in)
        if self.d_mlp is None:
            object.__setattr__(self, "d_mlp", 4 * self.d_emb)
        if self.d_cond is None:
            object.__setattr__(self, "d_cond", self.d_in)
        if self.d_emb % self.n_heads:
            raise ConfigError("d_emb must be divisible by n_heads")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.d_emb % 2:
            raise ConfigError("d_emb must be even for the sinusoidal time embedding")
        if self.param_dtype not in ("float32", "float64"):
            raise ConfigError("param_dtype must be float32 or float64")

    def to_dict(self):
        return asdict(self)


def time_features(t, dim):
    """Sinusoidal features of ``t`` with frequencies from 1e-4 to 1 (times 1000)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(1e4) * np.arange(half) / max(half - 1, 1))
    arg = 1000.0 * t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def _trunc_normal(rng, shape, std, dtype):
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2 * std
    while np.any(bad):
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2 * std
    return x.astype(dtype)


def init_params(cfg: NetConfig, seed=0):
    rng = np.random.default_rng(seed)
    dt = np.dtype(cfg.param_dtype)
    E, F = cfg.d_emb, cfg.d_mlp
    tn = lambda *shape: _trunc_normal(rng, shape, 0.02, dt)
    z = lambda *shape: np.zeros(shape, dt)
    p = {
        "w_in": tn(cfg.d_in, E),
        "b_in": z(E),
        "index_table": tn(cfg.n_particles, E) if cfg.use_index_embedding else z(cfg.n_particles, E),
        "time_w": tn(E, E),
        "time_b": z(E),
    }
    if cfg.n_cond:
        p["w_cond"] = tn(cfg.d_cond, E)
        p["b_cond"] = z(E)
        p["cond_table"] = tn(cfg.n_cond, E)
    for l in range(cfg.n_layers):
        p[f"l{l}.ln1_g"] = np.ones(E, dt)
        p[f"l{l}.ln1_b"] = z(E)
        p[f"l{l}.w_qkv"] = tn(E, 3 * E)
        p[f"l{l}.b_qkv"] = z(3 * E)
        p[f"l{l}.w_o"] = tn(E, E)
        p[f"l{l}.b_o"] = z(E)
        p[f"l{l}.ln2_g"] = np.ones(E, dt)
        p[f"l{l}.ln2_b"] = z(E)
        p[f"l{l}.w_1"] = tn(E, F)
        p[f"l{l}.b_1"] = z(F)
        p[f"l{l}.w_2"] = tn(F, E)
        p[f"l{l}.b_2"] = z(E)
    p["lnf_g"] = np.ones(E, dt)
    p["lnf_b"] = z(E)
    p["w_out"] = z(E, cfg.d_out)
    p["b_out"] = z(cfg.d_out)
    return p


class VelocityNet:
    """Parameter store plus forward/backward for the particle transformer."""

    def __init__(self, config: NetConfig, params=None, seed=0):
        self.config = config
        self.params = init_params(config, seed) if params is None else params
        self._check_shapes()

    def _check_shapes(self):
        ref = init_params(self.config, 0) if not hasattr(self, "_ref_shapes") else None
        shapes = {k: v.shape for k, v in ref.items()}
        if set(shapes) != set(self.params):
            missing = set(shapes) ^ set(self.params)
            raise ContractError(f"parameter names do not match the config: {sorted(missing)[:5]}")
        for k, s in shapes.items():
            if self.params[k].shape != s:
                raise ContractError(f"parameter {k}: shape {self.params[k].shape} != expected {s}")

    @property
    def n_params(self):
        return int(sum(v.size for v in self.params.values()))

    @property
    def dtype(self):
        return np.dtype(self.config.param_dtype)

    def copy(self):
        return VelocityNet(self.config, {k: v.copy() for k, v in self.params.items()})

    def __call__(self, x_t, t, cond=None):
        return forward(self, x_t, t, cond)


# --------------------------------------------------------------------------- primitives


def _ln_fwd(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def _ln_bwd(dy, cache):
    xhat, rstd, g = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(0)
    db = dy.reshape(-1, dy.shape[-1]).sum(0)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu_fwd(z):
    inner = z * z
    inner *= 0.044715
    inner += 1.0
    inner *= z
    inner *= _GELU_C
    th = np.tanh(inner, out=inner)
    return 0.5 * z * (1.0 + th), th


def _gelu_bwd(dy, z, th):
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * z * z)
    return dy * (0.5 * (1.0 + th) + 0.5 * z * (1.0 - th * th) * dinner)


def _linear_grads(x, dy):
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dy.reshape(-1, dy.shape[-1])
    return x2.T @ d2, d2.sum(0)


class Tape:
    """Activations recorded by a forward pass, consumed by :func:`backward`."""

    def __init__(self):
        self.records = {}


def _prepare(net, x_t, t, cond):
    cfg = net.config
    dt = net.dtype
    x = np.asarray(x_t, dtype=dt)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != cfg.n_particles or x.shape[2] != cfg.d_in:
        raise ContractError(f"x_t shape {np.shape(x_t)} incompatible with N={cfg.n_particles}, d_in={cfg.d_in}")
    B = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (B,))
    if not np.all((t >= 0.0) & (t <= 1.0)):
        raise ContractError("times must lie in [0, 1]")
    c = None
    if cond is not None:
        c = np.asarray(cond, dtype=dt)
        if c.ndim == 2:
            c = np.broadcast_to(c[None], (B,) + c.shape)
        if c.shape[0] != B or c.shape[2] != cfg.d_cond or c.shape[1] > cfg.n_cond:
            raise ContractError(f"cond shape {np.shape(cond)} incompatible with n_cond={cfg.n_cond}, d_cond={cfg.d_cond}")
    elif cfg.n_cond:
        raise ContractError("this network expects condition tokens")
    return x, t, c, squeeze


def forward(net: VelocityNet, x_t, t, cond=None, tape: Tape | None = None):
    """Velocity prediction ``B x N x d_out`` (or ``N x d_out`` for a single config)."""
    p, cfg = net.params, net.config
    x, t, c, squeeze = _prepare(net, x_t, t, cond)
    B, N, _ = x.shape
    E, H = cfg.d_emb, cfg.n_heads
    dh = E // H
    rec = {} if tape is None else tape.records

    tf = time_features(t, E).astype(net.dtype)
    temb = tf @ p["time_w"] + p["time_b"]
    h = x @ p["w_in"] + p["b_in"] + p["index_table"][None] + temb[:, None, :]
    M = 0
    if c is not None:
        M = c.shape[1]
        hc = c @ p["w_cond"] + p["b_cond"] + p["cond_table"][None, :M] + temb[:, None, :]
        h = np.concatenate([h, hc], axis=1)
    T = N + M
    rec.update(x=x, tf=tf, c=c, N=N, M=M)
    scale = 1.0 / math.sqrt(dh)
    for l in range(cfg.n_layers):
        pre = f"l{l}."
        a, ln1 = _ln_fwd(h, p[pre + "ln1_g"], p[pre + "ln1_b"])
        qkv = a @ p[pre + "w_qkv"] + p[pre + "b_qkv"]
        qkv = qkv.reshape(B, T, 3, H, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        s = (q @ k.transpose(0, 1, 3, 2)) * scale
        s = s - s.max(-1, keepdims=True)
        pr = np.exp(s)
        pr /= pr.sum(-1, keepdims=True)
        o = (pr @ v).transpose(0, 2, 1, 3).reshape(B, T, E)
        h = h + o @ p[pre + "w_o"] + p[pre + "b_o"]
        m, ln2 = _ln_fwd(h, p[pre + "ln2_g"], p[pre + "ln2_b"])
        z = m @ p[pre + "w_1"] + p[pre + "b_1"]
        gz, th = _gelu_fwd(z)
        h = h + gz @ p[pre + "w_2"] + p[pre + "b_2"]
        if tape is not None:
            rec[l] = (ln1, a, q, k, v, pr, o, ln2, m, z, th, gz)
    f, lnf = _ln_fwd(h[:, :N], p["lnf_g"], p["lnf_b"])
    out = f @ p["w_out"] + p["b_out"]
    if tape is not None:
        rec.update(lnf=lnf, f=f)
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite network output")
    return out[0] if squeeze else out


def backward(net: VelocityNet, tape: Tape, dout):
    """Gradients of a scalar objective w.r.t. every parameter, given ``d obj / d out``."""
    p, cfg = net.params, net.config
    rec = tape.records
    x, tf, c, N, M = rec["x"], rec["tf"], rec["c"], rec["N"], rec["M"]
    B = x.shape[0]
    E, H = cfg.d_emb, cfg.n_heads
    dh = E // H
    T = N + M
    scale = 1.0 / math.sqrt(dh)
    g = {}
    dout = np.asarray(dout, dtype=net.dtype).reshape(B, N, cfg.d_out)

    g["w_out"], g["b_out"] = _linear_grads(rec["f"], dout)
    df = dout @ p["w_out"].T
    dhN, g["lnf_g"], g["lnf_b"] = _ln_bwd(df, rec["lnf"])
    dh_ = np.zeros((B, T, E), dtype=net.dtype)
    dh_[:, :N] = dhN
    for l in range(cfg.n_layers - 1, -1, -1):
        pre = f"l{l}."
        ln1, a, q, k, v, pr, o, ln2, m, z, th, gz = rec[l]
        # MLP branch
        g[pre + "w_2"], g[pre + "b_2"] = _linear_grads(gz, dh_)
        dgz = dh_ @ p[pre + "w_2"].T
        dz = _gelu_bwd(dgz, z, th)
        g[pre + "w_1"], g[pre + "b_1"] = _linear_grads(m, dz)
        dm = dz @ p[pre + "w_1"].T
        dx2, g[pre + "ln2_g"], g[pre + "ln2_b"] = _ln_bwd(dm, ln2)
        dh_ = dh_ + dx2
        # attention branch
        g[pre + "w_o"], g[pre + "b_o"] = _linear_grads(o, dh_)
        do = (dh_ @ p[pre + "w_o"].T).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        dpr = do @ v.transpose(0, 1, 3, 2)
        dv = pr.transpose(0, 1, 3, 2) @ do
        ds = pr * (dpr - (dpr * pr).sum(-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dqkv = np.stack([dq, dk, dv], axis=0).transpose(1, 3, 0, 2, 4).reshape(B, T, 3 * E)
        g[pre + "w_qkv"], g[pre + "b_qkv"] = _linear_grads(a, dqkv)
        da = dqkv @ p[pre + "w_qkv"].T
        dx1, g[pre + "ln1_g"], g[pre + "ln1_b"] = _ln_bwd(da, ln1)
        dh_ = dh_ + dx1
    dtok = dh_[:, :N]
    g["w_in"], g["b_in"] = _linear_grads(x, dtok)
    g["index_table"] = dtok.sum(0)
    if not cfg.use_index_embedding:
        g["index_table"] = np.zeros_like(g["index_table"])
    dtemb = dh_.sum(1)
    if M:
        dc = dh_[:, N:]
        g["w_cond"], g["b_cond"] = _linear_grads(c, dc)
        ct = np.zeros_like(p["cond_table"])
        ct[:M] = dc.sum(0)
        g["cond_table"] = ct
    elif cfg.n_cond:
        g["w_cond"] = np.zeros_like(p["w_cond"])
        g["b_cond"] = np.zeros_like(p["b_cond"])
        g["cond_table"] = np.zeros_like(p["cond_table"])
    g["time_w"], g["time_b"] = tf.T @ dtemb, dtemb.sum(0)
    return {k: g[k].astype(net.dtype, copy=False) for k in p}


def loss_and_grads(net: VelocityNet, x_t, t, target, cond=None):
    """Mean squared error against ``target`` and its exact parameter gradients."""
    tape = Tape()
    out = forward(net, x_t, t, cond, tape=tape)
    target = np.asarray(target, dtype=net.dtype).reshape(out.shape)
    resid = out - target
    loss = float(np.mean(resid.astype(np.float64) ** 2))
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    grads = backward(net, tape, 2.0 * resid / resid.size)
    return loss, grads


# --------------------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(a) for k, a in params.items()}, {k: np.zeros_like(a) for k, a in params.items()})


def adam_step(net: VelocityNet, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update of ``net.params``; returns ``(net, state)``."""
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for k, w in net.params.items():
        gk = grads[k]
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * gk
        v *= beta2
        v += (1.0 - beta2) * gk * gk
        w -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(w.dtype, copy=False)
    return net, state


def clip_grads(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm and total > max_norm:
        s = max_norm / (total + 1e-12)
        grads = {k: g * s for k, g in grads.items()}
    return grads, total
