import numpy as np
import pytest

from conftest import TINY
from jstegcnn.arch import build_net20_spec
from jstegcnn.checkpoint import (CheckpointError, CheckpointStore, load_checkpoint, network_from_checkpoint,
                                 restore, save_checkpoint, snapshot)
from jstegcnn.network import build_network


@pytest.fixture
def net():
    n = build_network(build_net20_spec(TINY), rng_seed=4)
    for i, p in enumerate(n.parameters()):
        p.momentum_buf[...] = i * 0.01
    for bn in n.batchnorms():
        bn.state.running_mean[...] = 0.5
    return n


def test_round_trip_bit_exact(tmp_path, net):
    ck = snapshot(net, 123, "cfg", {"rng": {"x": 1}})
    save_checkpoint(tmp_path / "a.ckpt", ck)
    back = load_checkpoint(tmp_path / "a.ckpt")
    assert back.iteration == 123 and back.config_hash == "cfg" and back.trainer_state == {"rng": {"x": 1}}
    assert set(back.arrays) == set(ck.arrays)
    for k in ck.arrays:
        assert back.arrays[k].dtype == ck.arrays[k].dtype
        np.testing.assert_array_equal(back.arrays[k], ck.arrays[k])
    other = network_from_checkpoint(back)
    for k, v in net.state_arrays().items():
        np.testing.assert_array_equal(v, other.state_arrays()[k])
    for p, q in zip(net.parameters(), other.parameters()):
        np.testing.assert_array_equal(p.momentum_buf, q.momentum_buf)


def test_header_and_corruption(tmp_path, net):
    path = save_checkpoint(tmp_path / "a.ckpt", snapshot(net, 1))
    raw = path.read_bytes()
    assert raw[:4] == b"JCK1"
    (tmp_path / "b.ckpt").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "b.ckpt")
    (tmp_path / "c.ckpt").write_bytes(raw[:10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "c.ckpt")
    bad = bytearray(raw)
    bad[8:12] = b"0000"
    (tmp_path / "d.ckpt").write_bytes(bytes(bad))
    with pytest.raises(CheckpointError, match="hash"):
        load_checkpoint(tmp_path / "d.ckpt")


def test_arch_mismatch_rejected(net):
    ck = snapshot(net, 1)
    with pytest.raises(CheckpointError, match="does not match"):
        restore(build_network(build_net20_spec(TINY, shortcuts=False)), ck)


def test_failed_write_keeps_previous(tmp_path, net):
    path = save_checkpoint(tmp_path / "a.ckpt", snapshot(net, 1))
    good = path.read_bytes()
    (tmp_path / "a.ckpt.tmp").mkdir()  # the temp name is taken, so the write fails
    with pytest.raises(CheckpointError, match="could not write"):
        save_checkpoint(path, snapshot(net, 2))
    assert path.read_bytes() == good


def test_store_names(tmp_path, net):
    store = CheckpointStore(tmp_path / "run")
    for it in (100, 20, 300):
        store.save(snapshot(net, it))
    (tmp_path / "run" / "ckbest.ckpt").write_bytes(b"")
    assert store.iterations() == [20, 100, 300]
    assert store.resolve("ck100") == store.path(100) == store.resolve("100")
    assert store.resolve(str(store.path(20))) == store.path(20)
    assert store.load(300).iteration == 300
