import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

from fractions import Fraction

import numpy as np
import pytest

from jstegcnn.sim import SimConfig, make_synthetic_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """12 pairs of 32x32 images split 8/4, shared read-only by the suite."""
    root = tmp_path_factory.mktemp("corpus")
    manifests = make_synthetic_corpus(root, 12, 32, SimConfig(change_rate=0.5, rng_seed=7),
                                      splits=(("train", 8), ("val", 4)))
    return root, manifests


TINY = Fraction(1, 8)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
