import filecmp

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jstegcnn.frontend import JpegPlane, compress, quality_qtable, read_jcf
from jstegcnn.manifest import DatasetManifest, PairRecord, read_manifest, write_manifest
from jstegcnn.sim import SimConfig, make_synthetic_corpus, simulate_stego, synthetic_cover


def _cover(seed=0, size=32):
    r = np.random.default_rng(seed)
    return compress(synthetic_cover(size, r), quality_qtable(75), 75)


def _nnz_ac(p):
    return int(((p.coeffs != 0) & p.ac_mask()).sum())


def test_rate_zero_is_identity():
    c = _cover()
    np.testing.assert_array_equal(simulate_stego(c, SimConfig(0.0)).coeffs, c.coeffs)


def test_rate_one_changes_every_nonzero_ac():
    c = _cover(1)
    s = simulate_stego(c, SimConfig(1.0, rng_seed=3))
    d = s.coeffs.astype(int) - c.coeffs
    nz = (c.coeffs != 0) & c.ac_mask()
    assert (np.abs(d[nz]) == 1).all()
    assert not d[~nz].any()


@pytest.mark.parametrize("rate", [0.1, 0.3, 0.5])
def test_l1_distance_is_change_count(rate):
    c = _cover(2)
    s = simulate_stego(c, SimConfig(rate, rng_seed=9))
    assert np.abs(s.coeffs.astype(int) - c.coeffs).sum() == int(np.floor(rate * _nnz_ac(c)))


@settings(max_examples=20, deadline=None)
@given(rate=st.floats(0, 1), seed=st.integers(0, 10**6))
def test_simulator_invariants(rate, seed):
    c = _cover(seed % 5)
    s = simulate_stego(c, SimConfig(rate, rng_seed=seed))
    assert (s.width, s.height) == (c.width, c.height)
    np.testing.assert_array_equal(s.qtable, c.qtable)
    np.testing.assert_array_equal(s.coeffs[..., 0, 0], c.coeffs[..., 0, 0])
    assert not s.coeffs[c.coeffs == 0].any()
    assert c.coeffs.dtype == s.coeffs.dtype


def test_bad_rate_rejected():
    with pytest.raises(ValueError):
        SimConfig(1.5)


def test_covers_have_realistic_ac_density():
    c = _cover(4, 64)
    frac = _nnz_ac(c) / c.ac_mask().sum()
    assert 0.05 < frac < 0.95


def test_corpus_layout(tmp_path):
    ms = make_synthetic_corpus(tmp_path, 8, 64, SimConfig(rng_seed=1))
    files = sorted(tmp_path.glob("*/*.jcf"))
    assert len(files) == 16
    assert sum(len(m) for m in ms.values()) == 8
    assert [len(ms[k]) for k in ("train", "val", "test")] == [4, 2, 2]
    ids = [r.pair_id for m in ms.values() for r in m.records]
    assert len(set(ids)) == 8
    back = read_manifest(tmp_path / "train.tsv")
    assert back.records == ms["train"].records and back.quality_factor == 75 and back.split == "train"
    for rec in back.records:
        c, s = read_jcf(back.resolve(rec.cover_path)), read_jcf(back.resolve(rec.stego_path))
        d = s.coeffs.astype(int) - c.coeffs
        assert d.any() and not d[..., 0, 0].any()


def test_corpus_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    make_synthetic_corpus(a, 4, 32, SimConfig(rng_seed=5))
    make_synthetic_corpus(b, 4, 32, SimConfig(rng_seed=5))
    names = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert names == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for n in names:
        assert filecmp.cmp(a / n, b / n, shallow=False)


def test_corpus_size_must_divide_16(tmp_path):
    with pytest.raises(ValueError, match="16"):
        make_synthetic_corpus(tmp_path, 2, 40, SimConfig())


def test_split_counts_must_add_up(tmp_path):
    with pytest.raises(ValueError, match="add up"):
        make_synthetic_corpus(tmp_path, 4, 32, SimConfig(), splits=(("train", 3), ("val", 2)))


def test_manifest_errors(tmp_path):
    with pytest.raises(ValueError, match="duplicate"):
        DatasetManifest([PairRecord("a", "x", "y"), PairRecord("a", "z", "w")])
    (tmp_path / "m.tsv").write_text("#qf=75\na\tonly-two\n")
    with pytest.raises(ValueError, match="m.tsv:2"):
        read_manifest(tmp_path / "m.tsv")


def test_manifest_round_trip(tmp_path):
    m = DatasetManifest([PairRecord("p1", "c/1.jcf", "/abs/s1.jcf")], 95, 0.1, "test")
    write_manifest(tmp_path / "m.tsv", m)
    text = (tmp_path / "m.tsv").read_text()
    assert text.startswith("#qf=95\n#rate=0.1\n#split=test\n")
    back = read_manifest(tmp_path / "m.tsv")
    assert back.records == m.records and back.embedding_rate == 0.1
    assert back.resolve("c/1.jcf") == tmp_path / "c/1.jcf"
    assert str(back.resolve("/abs/s1.jcf")) == "/abs/s1.jcf"
