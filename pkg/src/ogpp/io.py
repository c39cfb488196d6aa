"""Binary dataset and checkpoint formats, plus CSV/JSON export helpers.

Particle files (little-endian)::

    offset  size  field
    0       4     magic b"OGPP"
    4       4     version (u32, = 1)
    8       4     task tag (u32)
    12      16    S, N, D, A (u32 each)
    28      4     reserved (u32, zero)
    32      8     seed (u64)
    40      16*D  domain bounds, (lo, hi) per axis (f64)
    ...           data S*N*D f32, then attrs S*N*A f32 when A > 0

Checkpoints::

    b"OGPN", version u32, header length u32, JSON header (NetConfig + metadata),
    then per parameter: name length u16, name, ndim u8, shape u32 * ndim, f32 data.
"""

from __future__ import annotations

import csv
import io as _io
import json
import struct

import numpy as np

from .energy import TASKS, ParticleSet
from .net import NetConfig, VelocityNet

PARTICLE_MAGIC = b"OGPP"
PARTICLE_VERSION = 1
CHECKPOINT_MAGIC = b"OGPN"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIIIQ")
assert _HEADER.size == 40


class FormatError(ValueError):
    """Malformed or incompatible file; the message names the byte offset."""


def _task_code(task):
    return TASKS.index(task)


def encode_particles(ps: ParticleSet) -> bytes:
    S, N, D = ps.data.shape
    A = ps.n_attrs
    head = _HEADER.pack(PARTICLE_MAGIC, PARTICLE_VERSION, _task_code(ps.task), S, N, D, A, 0, ps.seed & 0xFFFFFFFFFFFFFFFF)
    parts = [head, np.asarray(ps.domain, "<f8").tobytes(), np.asarray(ps.data, "<f4").tobytes()]
    if A:
        parts.append(np.asarray(ps.attrs, "<f4").tobytes())
    return b"".join(parts)


def decode_particles(buf: bytes) -> ParticleSet:
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header: expected {_HEADER.size} bytes at offset 0, got {len(buf)}")
    magic, version, task, S, N, D, A, _, seed = _HEADER.unpack_from(buf, 0)
    if magic != PARTICLE_MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0")
    if version != PARTICLE_VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    if task >= len(TASKS):
        raise FormatError(f"unknown task tag {task} at offset 8")
    expected = 40 + 16 * D + 4 * S * N * (D + A)
    if len(buf) != expected:
        raise FormatError(f"file length {len(buf)} does not match expected {expected} bytes (offset {min(len(buf), expected)})")
    off = 40
    domain = np.frombuffer(buf, "<f8", 2 * D, off).reshape(D, 2).astype(np.float64)
    off += 16 * D
    data = np.frombuffer(buf, "<f4", S * N * D, off).reshape(S, N, D).astype(np.float32)
    off += 4 * S * N * D
    attrs = np.frombuffer(buf, "<f4", S * N * A, off).reshape(S, N, A).astype(np.float32) if A else None
    return ParticleSet(data, attrs, domain, TASKS[task], seed)


def write_particles(ps: ParticleSet, path):
    with open(path, "wb") as fh:
        fh.write(encode_particles(ps))


def read_particles(path) -> ParticleSet:
    with open(path, "rb") as fh:
        return decode_particles(fh.read())


# --------------------------------------------------------------------------- checkpoints


def encode_checkpoint(net: VelocityNet, meta=None) -> bytes:
    header = json.dumps({"net_config": net.config.to_dict(), "meta": meta or {}}, sort_keys=True).encode()
    out = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(header)), header]
    for name in sorted(net.params):
        arr = np.asarray(net.params[name], "<f4")
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode_checkpoint(buf: bytes, expect_config: NetConfig | None = None):
    """Returns ``(net, meta)``; raises :class:`FormatError` on any inconsistency."""
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:4]!r} at offset 0")
    if len(buf) < 12:
        raise FormatError("truncated checkpoint header at offset 4")
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at offset 4")
    try:
        header = json.loads(buf[12 : 12 + hlen].decode())
        cfg = NetConfig(**header["net_config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"corrupted JSON header at offset 12: {exc}") from exc
    if expect_config is not None and expect_config != cfg:
        raise FormatError("checkpoint NetConfig does not match the expected configuration (offset 12)")
    ref = VelocityNet(cfg)
    params = {}
    off = 12 + hlen
    try:
        while off < len(buf):
            (nl,) = struct.unpack_from("<H", buf, off)
            name = buf[off + 2 : off + 2 + nl].decode()
            off += 2 + nl
            (ndim,) = struct.unpack_from("<B", buf, off)
            shape = struct.unpack_from(f"<{ndim}I", buf, off + 1)
            off += 1 + 4 * ndim
            if name not in ref.params:
                raise FormatError(f"unexpected parameter {name!r} at offset {off}")
            if tuple(shape) != ref.params[name].shape:
                raise FormatError(f"shape mismatch for {name!r}: file {tuple(shape)} vs config {ref.params[name].shape} at offset {off}")
            count = int(np.prod(shape))
            if off + 4 * count > len(buf):
                raise FormatError(f"truncated parameter {name!r} at offset {off}")
            params[name] = np.frombuffer(buf, "<f4", count, off).reshape(shape).astype(cfg.param_dtype)
            off += 4 * count
    except struct.error as exc:
        raise FormatError(f"truncated checkpoint at offset {off}") from exc
    missing = set(ref.params) - set(params)
    if missing:
        raise FormatError(f"missing parameters {sorted(missing)[:3]} (file ends at offset {off})")
    return VelocityNet(cfg, params), header.get("meta", {})


def write_checkpoint(net: VelocityNet, path, meta=None):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(net, meta))


def read_checkpoint(path, expect_config: NetConfig | None = None):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), expect_config)


# --------------------------------------------------------------------------- exports


def write_csv(path, header, rows):
    """CSV with a header row; floats formatted ``%.9g``."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v:.9g}" if isinstance(v, (float, np.floating)) else v for v in row])
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
