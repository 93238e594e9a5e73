import struct

import numpy as np
import pytest

from synthetic import small_config
from spikekws.checkpoint import MAGIC, read_container, write_container
from spikekws.errors import CheckpointError
from spikekws.optim import RAdam
from spikekws.tensor import Tensor
from spikekws.train import build_model, load_into, restore, save_checkpoint


def test_container_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"a": rng.normal(size=(3, 4)).astype(np.float32),
               "scalar": np.float32(2.5).reshape(()),
               "empty": np.zeros((0, 3), dtype=np.float32),
               "odd": np.array([np.float32(1e-45), -0.0, np.inf], dtype=np.float32)}
    path = tmp_path / "x.ckpt"
    write_container(path, tensors, {"hello": [1, 2]})
    back, meta = read_container(path)
    assert meta == {"hello": [1, 2]}
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert back[k].tobytes() == tensors[k].tobytes()
    assert not (tmp_path / "x.ckpt.tmp").exists()


def test_header_layout(tmp_path):
    path = tmp_path / "h.ckpt"
    write_container(path, {"w": np.arange(6, dtype=np.float32).reshape(2, 3)}, {})
    buf = path.read_bytes()
    assert buf[:8] == MAGIC
    version, meta_len = struct.unpack_from("<II", buf, 8)
    assert version == 1
    pos = 16 + meta_len
    (count,) = struct.unpack_from("<I", buf, pos)
    assert count == 1
    pos += 4
    (nlen,) = struct.unpack_from("<H", buf, pos)
    assert buf[pos + 2:pos + 2 + nlen] == b"w"
    pos += 2 + nlen
    dtype, rank = struct.unpack_from("<BB", buf, pos)
    assert (dtype, rank) == (0, 2)
    assert struct.unpack_from("<II", buf, pos + 2) == (2, 3)
    (offset,) = struct.unpack_from("<Q", buf, pos + 10)
    payload = pos + 18 + offset
    np.testing.assert_array_equal(np.frombuffer(buf, "<f4", 6, payload), np.arange(6))


def test_corrupt_containers_are_rejected(tmp_path):
    good = tmp_path / "g.ckpt"
    write_container(good, {"w": np.ones((4, 4), dtype=np.float32)}, {"k": 1})
    buf = good.read_bytes()

    cases = {
        "bad magic": b"NOTACKPT" + buf[8:],
        "unsupported format version": buf[:8] + struct.pack("<I", 99) + buf[12:],
        "truncated": buf[:-10],
        "truncated file": buf[:20],
    }
    for msg, data in cases.items():
        p = tmp_path / "bad.ckpt"
        p.write_bytes(data)
        with pytest.raises(CheckpointError, match=msg):
            read_container(p)

    # flip the dtype tag of the only tensor
    meta_len = struct.unpack_from("<I", buf, 12)[0]
    tag_pos = 16 + meta_len + 4 + 2 + 1
    bad = bytearray(buf)
    bad[tag_pos] = 7
    p = tmp_path / "dtype.ckpt"
    p.write_bytes(bytes(bad))
    with pytest.raises(CheckpointError, match="dtype"):
        read_container(p)
    with pytest.raises(CheckpointError):
        read_container(tmp_path / "missing.ckpt")


def _trained_pair(seed=0):
    cfg = small_config()
    model = build_model(cfg)
    opt = RAdam(model.named_parameters(), cfg.optim)
    x = np.random.default_rng(seed).normal(size=(2, 1, 20, 12)).astype(np.float32)
    for _ in range(3):
        opt.zero_grad()
        model(Tensor(x)).logits.sum().backward()
        opt.step(1e-2)
    return cfg, model, opt


def test_model_and_optimizer_round_trip(tmp_path):
    cfg, model, opt = _trained_pair()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, opt, {"config": cfg.to_dict(), "epoch": 4}, path)
    cfg2, model2, opt2, meta = restore(path, with_optimizer=True)
    assert meta["epoch"] == 4 and cfg2.hash() == cfg.hash()
    assert opt2.t == opt.t == 3
    for (n, p), (n2, p2) in zip(model.named_parameters(), model2.named_parameters()):
        assert n == n2 and p.data.tobytes() == p2.data.tobytes()
        assert opt.m[n].tobytes() == opt2.m[n].tobytes()
        assert opt.v[n].tobytes() == opt2.v[n].tobytes()


def test_load_into_wrong_architecture_names_tensor(tmp_path):
    cfg, model, opt = _trained_pair()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, None, {"config": cfg.to_dict()}, path)
    other = build_model(small_config(channels=4))
    with pytest.raises(CheckpointError, match=r"conv1\.weight"):
        load_into(other, path)


def test_restore_requires_config(tmp_path):
    _, model, _ = _trained_pair()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, None, {}, path)
    with pytest.raises(CheckpointError, match="config"):
        restore(path)
    write_container(tmp_path / "feat.spk", {"x": np.zeros(3, np.float32)}, {"kind": "other"})
    with pytest.raises(CheckpointError, match="not a model checkpoint"):
        restore(tmp_path / "feat.spk")
