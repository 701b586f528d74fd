import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import TINY
from jstegcnn.arch import build_net20_spec, build_net6_spec
from jstegcnn.checkpoint import CheckpointError, load_checkpoint
from jstegcnn.frontend import JpegPlane, filter_bank_kernels, write_jcf
from jstegcnn.layers import softmax_cross_entropy
from jstegcnn.manifest import DatasetManifest, PairRecord
from jstegcnn.network import build_network
from jstegcnn.train import (ConfigError, DivergenceError, PairSampler, PlaneStore, TrainConfig, Trainer,
                            augment_pair, checkpoint_schedule, finetune_init, lr_at, make_batch,
                            refresh_bn_statistics, rigid_transform, train_loop, train_step)


@pytest.fixture(scope="module")
def stores(small_corpus):
    _, ms = small_corpus
    return PlaneStore(ms["train"]), PlaneStore(ms["val"])


def _desk_cfg(**kw):
    base = dict(batch_pairs=4, checkpoint_every=5, max_iters=10, bn_refresh_batches=2, rng_seed=2)
    base.update(kw)
    return TrainConfig(**base)


# -- schedule -------------------------------------------------------------------

@pytest.mark.parametrize("it,lr", [(0, 0.001), (4999, 0.001), (5000, 0.0009), (12000, 0.00081),
                                   (89999, 0.001 * 0.9 ** 17)])
def test_lr_at(it, lr):
    assert lr_at(it, TrainConfig()) == pytest.approx(lr, rel=1e-12)


def test_lr_piecewise_constant():
    cfg = TrainConfig()
    lrs = [lr_at(i, cfg) for i in range(0, 30001, 250)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    breaks = [i for i in range(1, 30001) if lr_at(i, cfg) != lr_at(i - 1, cfg)]
    assert breaks == [5000, 10000, 15000, 20000, 25000, 30000]
    with pytest.raises(ValueError):
        lr_at(-1, cfg)


def test_checkpoint_schedules():
    full = checkpoint_schedule(TrainConfig())
    assert len(full) == 18 and all(i % 5000 == 0 for i in full)
    assert {80000, 85000, 90000} <= set(full)
    assert checkpoint_schedule(TrainConfig(max_iters=200, checkpoint_every=100)) == [100, 200]
    # 90000 iterations of 32 images over 10000 training images
    assert TrainConfig().max_iters * TrainConfig().batch_size // 10000 == 288


# -- config ---------------------------------------------------------------------

def test_config_defaults_and_text_round_trip():
    cfg = TrainConfig()
    assert cfg.batch_size == 32 and cfg.momentum == 0.9 and cfg.base_lr == 0.001
    assert TrainConfig.from_text(cfg.to_text()) == cfg
    assert TrainConfig.from_text(cfg.to_text()).hash() == cfg.hash()
    assert TrainConfig(rng_seed=1).hash() != cfg.hash()


def test_config_parse(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# desk run\nmax_iters = 200\ncheckpoint_every=100  # often\naugment=false\n")
    cfg = TrainConfig.from_file(p, rng_seed=4)
    assert (cfg.max_iters, cfg.checkpoint_every, cfg.augment, cfg.rng_seed) == (200, 100, False, 4)


@pytest.mark.parametrize("text,msg", [("max_iters=200\nbogus=1\n", "line 2: unknown key"),
                                      ("base_lr\n", "line 1: expected key=value"),
                                      ("\nmax_iters=abc\n", "line 2: bad value"),
                                      ("augment=maybe\n", "line 1")])
def test_config_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        TrainConfig.from_text(text)


@pytest.mark.parametrize("kw", [dict(base_lr=0), dict(batch_pairs=0), dict(momentum=1.0),
                                dict(weight_decay=-1), dict(max_iters=-5)])
def test_config_invariants(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


# -- sampling and augmentation ----------------------------------------------------

def test_epoch_covers_every_pair_once():
    s = PairSampler(5000, 16, np.random.default_rng(0))
    seen = np.concatenate([s.next_batch() for _ in range(5000 // 16)])
    assert len(seen) == 4992 and len(set(seen.tolist())) == 4992
    rest = s.next_batch()
    epoch0 = np.concatenate([seen, rest[:8]])
    assert sorted(epoch0.tolist()) == list(range(5000))


def test_epoch_orders_reproducible_and_reshuffled():
    a, b = PairSampler(48, 16, np.random.default_rng(3)), PairSampler(48, 16, np.random.default_rng(3))
    ea = [np.concatenate([a.next_batch() for _ in range(3)]) for _ in range(2)]
    eb = [np.concatenate([b.next_batch() for _ in range(3)]) for _ in range(2)]
    np.testing.assert_array_equal(ea, eb)
    assert not np.array_equal(ea[0], ea[1])
    assert sorted(ea[1].tolist()) == list(range(48))


def test_small_split_wraps_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        s = PairSampler(5, 16, np.random.default_rng(0))
    assert "wrap" in caplog.text
    b = s.next_batch()
    assert len(b) == 16 and set(b.tolist()) == set(range(5))
    with pytest.raises(ValueError, match="empty"):
        PairSampler(0, 16, np.random.default_rng(0))


def test_rigid_transforms():
    x = np.arange(12.0).reshape(3, 4)
    np.testing.assert_array_equal(rigid_transform(x, False, 0), x)
    y = x
    for _ in range(4):
        y = rigid_transform(y, False, 1)
    np.testing.assert_array_equal(y, x)
    np.testing.assert_array_equal(rigid_transform(x, True, 0), x[:, ::-1])
    c, s = augment_pair(x, x + 1, np.random.default_rng(0))
    np.testing.assert_array_equal(s - c, 1)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_augmentation_difference_property(seed):
    r = np.random.default_rng(seed)
    cover = r.normal(128, 40, (16, 16))
    stego = cover + r.choice([-1.0, 0.0, 1.0], size=cover.shape)
    state = r.bit_generator.state
    ac, as_ = augment_pair(cover, stego, r)
    r.bit_generator.state = state
    mirror, k = bool(r.integers(2)), int(r.integers(4))
    assert np.array_equal(ac - as_, rigid_transform(cover - stego, mirror, k))


def test_augment_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        augment_pair(np.zeros((4, 4)), np.zeros((4, 8)), np.random.default_rng(0))


def test_batch_layout(stores):
    train, _ = stores
    x, y = make_batch(train, np.arange(8), np.random.default_rng(0))
    assert x.shape == (16, 16, 32, 32) and x.dtype == np.float32
    np.testing.assert_array_equal(y, [0, 1] * 8)
    assert (y == 0).sum() == (y == 1).sum() == 8
    assert x.min() >= 0 and x.max() <= 8


def test_full_batch_is_16_plus_16(stores):
    train, _ = stores
    s = PairSampler(len(train), 16, np.random.default_rng(0))
    x, y = make_batch(train, s.next_batch(), np.random.default_rng(0))
    assert x.shape[0] == 32 and (y == 0).sum() == 16 and (y == 1).sum() == 16


def test_plane_store_rejects_size_mismatch(tmp_path, small_corpus):
    root, ms = small_corpus
    rec = ms["train"].records[0]
    other = DatasetManifest([PairRecord("bad", str(root / rec.cover_path), str(root / rec.stego_path))])
    assert len(PlaneStore(other)) == 1
    write_jcf(tmp_path / "big.jcf", JpegPlane(64, 64, np.zeros((8, 8, 8, 8), np.int16), np.ones((8, 8))))
    bad = DatasetManifest([PairRecord("bad", str(root / rec.cover_path), str(tmp_path / "big.jcf"))])
    with pytest.raises(ValueError, match="differ in size"):
        PlaneStore(bad)


def test_plane_store_cache(tmp_path, small_corpus):
    _, ms = small_corpus
    a = PlaneStore(ms["val"], tmp_path / "cache")
    assert len(list((tmp_path / "cache").glob("*.npy"))) == 2 * len(ms["val"])
    b = PlaneStore(ms["val"], tmp_path / "cache")
    for x, y in zip(a.covers + a.stegos, b.covers + b.stegos):
        np.testing.assert_array_equal(x, y)


# -- steps ------------------------------------------------------------------------

def test_descent_on_frozen_batch(stores):
    train, _ = stores
    cfg = TrainConfig(base_lr=1e-4, weight_decay=0.0)
    for rep in range(5):
        net = build_network(build_net20_spec(TINY), rng_seed=rep, dtype=np.float64)
        x, y = make_batch(train, np.arange(8), np.random.default_rng(rep), dtype=np.float64)
        before = train_step(net, x, y, cfg, 0)
        after = softmax_cross_entropy(net.forward(x, "train"), y)[0]
        assert after < before, rep


def test_filter_bank_is_not_trainable(stores):
    train, _ = stores
    net = build_network(build_net20_spec(TINY))
    k = filter_bank_kernels(4).copy()
    assert all(p.shape != (16, 4, 4) and p.shape[-2:] != (4, 4) for p in net.parameters())
    assert net.param_count() == net.spec.param_count()
    x, y = make_batch(train, np.arange(4), np.random.default_rng(0))
    train_step(net, x, y, TrainConfig(), 0)
    np.testing.assert_array_equal(filter_bank_kernels(4), k)


def test_divergence_raises(stores):
    train, _ = stores
    net = build_network(build_net20_spec(TINY))
    net.fc().weight.value[...] = np.nan
    x, y = make_batch(train, np.arange(4), np.random.default_rng(0))
    with pytest.raises(DivergenceError, match="iteration 7"):
        train_step(net, x, y, TrainConfig(), 7)


def test_identical_runs_identical_losses(stores):
    train, _ = stores
    runs = []
    for _ in range(2):
        net = build_network(build_net20_spec(TINY), rng_seed=1)
        runs.append(Trainer(net, train, _desk_cfg(max_iters=6)).run().losses)
    assert runs[0] == runs[1] and len(runs[0]) == 6


def test_train_loop_writes_checkpoints_and_metrics(tmp_path, stores):
    train, val = stores
    net = build_network(build_net20_spec(TINY), rng_seed=0)
    store = train_loop(net, train, _desk_cfg(), tmp_path, val)
    assert store.iterations() == [5, 10]
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == "iter,lr,train_loss,val_error" and len(lines) == 11
    row5 = lines[5].split(",")
    assert row5[0] == "5" and 0 <= float(row5[3]) <= 1
    assert lines[4].split(",")[3] == ""
    ck = load_checkpoint(store.path(10))
    assert ck.iteration == 10 and ck.config_hash == _desk_cfg().hash()


def test_bn_refresh_leaves_parameters_and_rng(stores):
    train, _ = stores
    net = build_network(build_net20_spec(TINY), rng_seed=0)
    before = {k: v.copy() for k, v in net.state_arrays().items() if k.startswith("param")}
    refresh_bn_statistics(net, train, 4, 2)
    for k, v in before.items():
        np.testing.assert_array_equal(v, net.state_arrays()[k])
    bn = net.batchnorms()[0].state
    assert bn.momentum == 0.1 and bn.mode == "train" and bn.running_mean.any()


def test_finetune_init(tmp_path, stores):
    train, val = stores
    src = build_network(build_net20_spec(TINY), rng_seed=0)
    trainer = Trainer(src, train, _desk_cfg(max_iters=5), tmp_path)
    trainer.run()
    ck = load_checkpoint(trainer.ckpts.path(5))
    dst = finetune_init(build_network(build_net20_spec(TINY), rng_seed=9), ck)
    assert all(not p.momentum_buf.any() for p in dst.parameters())
    x = np.random.default_rng(0).uniform(0, 8, (2, 16, 32, 32)).astype(np.float32)
    np.testing.assert_array_equal(dst.forward(x), src.forward(x))
    t2 = Trainer(dst, train, _desk_cfg(max_iters=2))
    t2.step()
    assert t2.iteration == 1
    with pytest.raises(CheckpointError, match="does not match"):
        finetune_init(build_network(build_net6_spec("avg", TINY * 8 / 3)), ck)
