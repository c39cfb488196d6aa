import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ogpp.energy import ParticleSet
from ogpp.io import (
    FormatError,
    decode_checkpoint,
    decode_particles,
    encode_checkpoint,
    encode_particles,
    read_checkpoint,
    read_particles,
    write_checkpoint,
    write_csv,
    write_json,
    write_particles,
)
from ogpp.net import NetConfig, VelocityNet

VECTOR = Path(__file__).parent / "data" / "particles_v1.bin"


def test_committed_vector_decodes():
    ps = read_particles(VECTOR)
    assert ps.task == "minsurf" and ps.seed == 77 and ps.shape == (2, 3, 2) and ps.n_attrs == 1
    assert np.array_equal(ps.domain, [[-2.0, 2.0], [-1.5, 1.5]])
    assert ps.data[0, 2].tolist() == [-1.75, 0.125]
    assert ps.data[1, 2].tolist() == [-2.0, 1.25]
    assert ps.attrs[:, :, 0].tolist() == [[1, 0, 0], [0, 1, 0]]


def test_committed_vector_reencodes_bit_exact():
    raw = VECTOR.read_bytes()
    assert encode_particles(decode_particles(raw)) == raw


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 3), st.integers(1, 5), st.integers(1, 3), st.integers(0, 2), st.integers(0, 2**64 - 1))
def test_roundtrip(S, N, D, A, seed):
    rng = np.random.default_rng(seed % 2**32)
    data = rng.normal(size=(S, N, D)).astype(np.float32)
    attrs = rng.normal(size=(S, N, A)) if A else None
    ps = ParticleSet(data, attrs, np.tile([-10.0, 10.0], (D, 1)), "custom", seed)
    assert decode_particles(encode_particles(ps)) == ps


def test_decode_errors_name_offsets():
    raw = VECTOR.read_bytes()
    with pytest.raises(FormatError, match="offset 0"):
        decode_particles(raw[:20])
    with pytest.raises(FormatError, match="magic"):
        decode_particles(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="version"):
        decode_particles(raw[:4] + struct.pack("<I", 9) + raw[8:])
    with pytest.raises(FormatError, match="task"):
        decode_particles(raw[:8] + struct.pack("<I", 99) + raw[12:])
    with pytest.raises(FormatError, match="expected"):
        decode_particles(raw[:-4])
    with pytest.raises(FormatError, match="expected"):
        decode_particles(raw + b"\0")


def test_file_roundtrip(tmp_path):
    ps = read_particles(VECTOR)
    write_particles(ps, tmp_path / "p.bin")
    assert (tmp_path / "p.bin").read_bytes() == VECTOR.read_bytes()


def _net():
    return VelocityNet(NetConfig(d_emb=8, n_layers=1, n_heads=2, n_particles=3, n_cond=2), seed=4)


def test_checkpoint_roundtrip(tmp_path):
    net = _net()
    write_checkpoint(net, tmp_path / "c.ckpt", {"task": "minsurf"})
    back, meta = read_checkpoint(tmp_path / "c.ckpt", expect_config=net.config)
    assert meta == {"task": "minsurf"} and back.config == net.config
    assert all(np.array_equal(back.params[k], net.params[k]) for k in net.params)
    assert encode_checkpoint(back, meta) == encode_checkpoint(net, meta)


def test_checkpoint_errors():
    net = _net()
    raw = encode_checkpoint(net)
    with pytest.raises(FormatError, match="magic"):
        decode_checkpoint(b"NOPE" + raw[4:])
    with pytest.raises(FormatError, match="does not match"):
        decode_checkpoint(raw, expect_config=NetConfig(d_emb=8, n_layers=1, n_heads=2, n_particles=4))
    with pytest.raises(FormatError):
        decode_checkpoint(raw[:-10])
    with pytest.raises(FormatError, match="JSON"):
        decode_checkpoint(raw[:13] + b"#" + raw[14:])


def test_csv_and_json(tmp_path):
    write_csv(tmp_path / "a.csv", ["k", "v"], [[1, 0.1 + 0.2], [2, np.float32(1.5)]])
    assert (tmp_path / "a.csv").read_text() == "k,v\n1,0.3\n2,1.5\n"
    write_json(tmp_path / "a.json", {"x": np.arange(2), "y": np.float64(2.5), "z": (1, 2)})
    assert '"y": 2.5' in (tmp_path / "a.json").read_text()
