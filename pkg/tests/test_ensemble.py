import csv
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import TINY
from jstegcnn.arch import build_net20_spec
from jstegcnn.ensemble import (ProbTable, classification_error, compare_runs, ensemble_probs, evaluate,
                               predict, read_metrics, report_from_table, write_table)
from jstegcnn.network import build_network
from jstegcnn.train import PlaneStore


def _table(stego_probs, names=None, labels=None):
    p = np.asarray(stego_probs, dtype=float)
    names = names or [f"im{i}" for i in range(len(p))]
    labels = np.zeros(len(p), int) if labels is None else np.asarray(labels)
    return ProbTable(names, np.stack([1 - p, p], axis=1), labels)


def test_mean_of_three():
    out = ensemble_probs([_table([0.6]), _table([0.7]), _table([0.8])])
    assert out.probs[0, 1] == pytest.approx(0.7)
    assert abs(out.probs.sum(axis=1) - 1).max() <= 1e-6


def test_single_table_identity():
    t = _table([0.1, 0.9])
    np.testing.assert_array_equal(ensemble_probs([t]).probs, t.probs)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), k=st.integers(1, 12))
def test_permutation_invariant_and_idempotent(seed, k):
    r = np.random.default_rng(seed)
    tables = [_table(r.uniform(0, 1, 5)) for _ in range(k)]
    a = ensemble_probs(tables).probs
    b = ensemble_probs([tables[i] for i in r.permutation(k)]).probs
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)
    np.testing.assert_allclose(ensemble_probs([tables[0]] * k).probs, tables[0].probs, atol=1e-15)
    assert abs(a.sum(axis=1) - 1).max() <= 1e-6


def test_mismatched_images_rejected():
    with pytest.raises(ValueError, match="different image lists"):
        ensemble_probs([_table([0.5], ["a"]), _table([0.5], ["b"])])
    with pytest.raises(ValueError):
        ensemble_probs([])


def test_tie_predicts_cover():
    np.testing.assert_array_equal(predict(np.array([[0.5, 0.5], [0.4, 0.6], [0.6, 0.4]])), [0, 1, 0])


def test_perfect_and_constant_classifiers():
    labels = np.array([0, 1] * 4)
    perfect = np.eye(2)[labels]
    assert classification_error(perfect, labels) == 0.0
    assert classification_error(np.full((8, 2), 0.5), labels) == 0.5
    rep = report_from_table(ProbTable([str(i) for i in range(8)], perfect, labels))
    assert rep.error == 0.0 and 0 <= rep.error <= 1


def test_constant_logit_network_error_half(small_corpus):
    _, ms = small_corpus
    net = build_network(build_net20_spec(TINY))
    net.fc().weight.value[...] = 0
    rep = evaluate(net, PlaneStore(ms["val"]))
    assert rep.error == 0.5 and (rep.preds == 0).all()


def test_evaluate_deterministic_and_csv(tmp_path, small_corpus):
    _, ms = small_corpus
    store = PlaneStore(ms["val"])
    nets = [build_network(build_net20_spec(TINY), rng_seed=s) for s in (0, 1)]
    a = evaluate(nets, store, checkpoints=["ck1", "ck2"])
    b = evaluate(nets, store, checkpoints=["ck1", "ck2"])
    np.testing.assert_array_equal(a.probs, b.probs)
    assert a.ensemble_size == 2 and len(a.images) == 2 * len(store)
    assert abs(a.probs.sum(axis=1) - 1).max() <= 1e-6
    a.write_csv(tmp_path / "r.csv")
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0] == "image,prob_cover,prob_stego,label,pred"
    assert rows[1].split(",")[0].endswith("/cover") and rows[-1].startswith("# error=")
    assert "ensemble_size=2" in rows[-1] and "ck1,ck2" in rows[-1]


def _log(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iter", "lr", "train_loss", "val_error"])
        w.writerows(rows)
    return path


def test_compare_runs(tmp_path, caplog):
    a = _log(tmp_path / "a.csv", [(1, 0.1, 0.7, ""), (5, 0.1, 0.6, 0.4), (10, 0.1, 0.5, 0.3)])
    b = _log(tmp_path / "b.csv", [(1, 0.1, 0.7, ""), (5, 0.1, 0.6, 0.45), (10, 0.1, 0.5, 0.35)])
    header, rows = compare_runs({"avg": a, "conv": b})
    assert header == ["iter", "avg", "conv"] and rows == [[5, 0.4, 0.45], [10, 0.3, 0.35]]
    c = _log(tmp_path / "c.csv", [(5, 0.1, 0.6, 0.5), (15, 0.1, 0.5, 0.2)])
    with caplog.at_level(logging.WARNING):
        _, rows = compare_runs({"a": a, "c": c})
    assert rows == [[5, 0.4, 0.5]] and "differ" in caplog.text
    d = _log(tmp_path / "d.csv", [(7, 0.1, 0.5, 0.2)])
    with pytest.raises(ValueError, match="no iterations"):
        compare_runs({"a": a, "d": d})
    with pytest.raises(ValueError, match="two"):
        compare_runs({"a": a})
    assert read_metrics(a, "train_loss") == {1: 0.7, 5: 0.6, 10: 0.5}
    write_table(tmp_path / "t.csv", header, [[5, 0.4, 0.45]])
    assert (tmp_path / "t.csv").read_text().splitlines() == ["iter,avg,conv", "5,0.4,0.45"]
