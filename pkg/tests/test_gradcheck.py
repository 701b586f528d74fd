import numpy as np

from jstegcnn.gradcheck import GradReport, check_net20, numeric_grad, relative_error, run_suite


def test_relative_error_and_numeric_grad():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert relative_error(np.array([1.0, 0.0]), np.array([0.5, 0.0])) == 0.5
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(numeric_grad(lambda: float((x ** 2).sum()), x), 2 * x, atol=1e-8)
    np.testing.assert_array_equal(x, [1.0, -2.0, 3.0])


def test_report_line():
    ok = GradReport("layer", {"x": 1e-9}, 1e-5)
    bad = GradReport("layer", {"x": 1e-3, "w": 1e-9}, 1e-5)
    assert ok.passed and ok.line().startswith("PASS") and not bad.passed and "FAIL" in bad.line()


def test_full_net_tiny(rng):
    rep = check_net20(rng)
    assert rep.passed, rep.line()


def test_suite_covers_every_layer():
    names = [r.name for r in run_suite(seed=3)[:-1]]
    for expect in ("conv3x3_s1", "conv3x3_s2", "batchnorm_train", "relu", "add", "global_avg_pool",
                   "avg_pool", "max_pool", "fully_connected", "softmax_cross_entropy"):
        assert expect in names
