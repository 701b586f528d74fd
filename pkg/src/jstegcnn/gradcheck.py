"""Central finite-difference checks of every hand-written backward pass.

The error for one tensor is ``max|analytic - numeric| / max(max|analytic|,
max|numeric|)``: a max-norm relative error, so that entries with tiny
gradients do not dominate through round-off.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import layers as L
from .arch import build_net20_spec
from .network import build_network

STEP = 1e-6


@dataclass
class GradReport:
    name: str
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def line(self) -> str:
        detail = " ".join(f"{k}={v:.2e}" for k, v in self.errors.items())
        return f"{'PASS' if self.passed else 'FAIL'} {self.name:<22} max={self.max_error:.2e} tol={self.tolerance:.0e}  {detail}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-300)
    return float(np.abs(analytic - numeric).max() / scale)


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Perturb ``x`` in place, element by element."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"], op_flags=["readwrite"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f()
        x[i] = orig - h
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


def gradient_check(name: str, forward: Callable[[], np.ndarray], backward: Callable[[np.ndarray], dict],
                   inputs: dict[str, np.ndarray], rng, tolerance: float = 1e-5) -> GradReport:
    """Check ``backward`` against finite differences of ``sum(forward() * R)``.

    ``backward(grad_out)`` returns analytic gradients keyed like ``inputs``.
    """
    out = forward()
    proj = rng.standard_normal(out.shape)
    analytic = backward(proj)

    def loss():
        return float(np.sum(forward() * proj))

    errors = {k: relative_error(analytic[k], numeric_grad(loss, v)) for k, v in inputs.items()}
    return GradReport(name, errors, tolerance)


# ---------------------------------------------------------------------------
# the suite
# ---------------------------------------------------------------------------

def check_conv(rng, shape=(2, 3, 8, 8), cout=4, k=3, stride=1, padding=1, tol=1e-5):
    x = rng.standard_normal(shape)
    w = rng.standard_normal((cout, shape[1], k, k))
    rep = gradient_check(
        f"conv{k}x{k}_s{stride}",
        lambda: L.conv2d_forward(x, w, stride, padding),
        lambda g: dict(zip(("x", "w"), L.conv2d_backward(x, w, g, stride, padding))),
        {"x": x, "w": w}, rng, tol)
    return rep


def check_batchnorm(rng, shape=(4, 3, 5, 5), tol=1e-5):
    x = rng.standard_normal(shape) * 2 + 0.5
    st = L.BatchNormState.create(shape[1], dtype=np.float64)
    st.gamma.value[...] = rng.uniform(0.5, 1.5, shape[1])
    st.beta.value[...] = rng.standard_normal(shape[1])

    def bwd(g):
        gx, gg, gb = L.batchnorm_backward(x, st, g)
        return {"x": gx, "gamma": gg, "beta": gb}

    return gradient_check("batchnorm_train", lambda: L.batchnorm_forward(x, st), bwd,
                          {"x": x, "gamma": st.gamma.value, "beta": st.beta.value}, rng, tol)


def _away_from_zero(rng, shape, band=1e-4):
    x = rng.standard_normal(shape)
    x[np.abs(x) < band] += np.sign(x[np.abs(x) < band] + 1e-12) * 2 * band
    return x


def check_relu(rng, shape=(2, 3, 4, 4), tol=1e-5):
    x = _away_from_zero(rng, shape)
    return gradient_check("relu", lambda: L.relu(x), lambda g: {"x": L.relu_backward(x, g)},
                          {"x": x}, rng, tol)


def check_add(rng, shape=(2, 3, 4, 4), tol=1e-5):
    a, b = rng.standard_normal(shape), rng.standard_normal(shape)
    return gradient_check("add", lambda: L.add(a, b),
                          lambda g: dict(zip(("a", "b"), L.add_backward(g))),
                          {"a": a, "b": b}, rng, tol)


def check_global_pool(rng, shape=(2, 3, 4, 4), tol=1e-5):
    x = rng.standard_normal(shape)
    return gradient_check("global_avg_pool", lambda: L.global_avg_pool(x),
                          lambda g: {"x": L.global_avg_pool_backward(x.shape, g)}, {"x": x}, rng, tol)


def check_avg_pool(rng, shape=(2, 3, 7, 8), tol=1e-5):
    x = rng.standard_normal(shape)
    return gradient_check("avg_pool", lambda: L.avg_pool(x),
                          lambda g: {"x": L.avg_pool_backward(x.shape, g)}, {"x": x}, rng, tol)


def check_max_pool(rng, shape=(2, 3, 7, 8), tol=1e-5):
    # a random permutation keeps every window free of near-ties
    x = rng.permutation(np.prod(shape)).reshape(shape) * 0.01
    return gradient_check("max_pool", lambda: L.max_pool(x),
                          lambda g: {"x": L.max_pool_backward(x, g)}, {"x": x}, rng, tol)


def check_fc(rng, n=4, c=6, k=2, tol=1e-5):
    x = rng.standard_normal((n, c, 1, 1))
    w, b = rng.standard_normal((k, c)), rng.standard_normal(k)
    return gradient_check("fully_connected", lambda: L.fully_connected(x, w, b),
                          lambda g: dict(zip(("x", "w", "b"), L.fully_connected_backward(x, w, g))),
                          {"x": x, "w": w, "b": b}, rng, tol)


def check_softmax_ce(rng, n=6, tol=1e-5):
    z = rng.standard_normal((n, 2, 1, 1)) * 3
    y = rng.integers(0, 2, n)
    _, _, g = L.softmax_cross_entropy(z, y)
    num = numeric_grad(lambda: L.softmax_cross_entropy(z, y)[0], z)
    return GradReport("softmax_cross_entropy", {"logits": relative_error(g, num)}, tol)


def check_net20(rng, width=1 / 8, size=8, batch=4, seed=0, tol=1e-4):
    """Loss gradient of the full 20-layer net w.r.t. its first conv kernel."""
    net = build_network(build_net20_spec(width), rng_seed=seed, dtype=np.float64)
    x = rng.uniform(0, 8, (batch, 16, size, size))
    y = np.tile([0, 1], batch // 2)
    first = net.conv_weights()[0]
    fc = net.fc().weight

    def loss():
        return L.softmax_cross_entropy(net.forward(x, "train", check=False), y)[0]

    net.zero_grad()
    _, _, g = L.softmax_cross_entropy(net.forward(x, "train", check=False), y)
    net.backward(g)
    a_first, a_fc = first.grad.copy(), fc.grad.copy()
    errors = {
        "conv0.w": relative_error(a_first, numeric_grad(loss, first.value)),
        "fc.w": relative_error(a_fc, numeric_grad(loss, fc.value)),
    }
    return GradReport(f"net20_w{width:.3g}_{size}x{size}", errors, tol)


def run_suite(seed: int = 0) -> list[GradReport]:
    rng = np.random.default_rng(seed)
    return [
        check_conv(rng, stride=1),
        check_conv(rng, shape=(2, 4, 9, 9), stride=2),
        check_conv(rng, shape=(2, 4, 9, 9), cout=3, k=1, stride=2, padding=0),
        check_batchnorm(rng),
        check_relu(rng),
        check_add(rng),
        check_global_pool(rng),
        check_avg_pool(rng),
        check_max_pool(rng),
        check_fc(rng),
        check_softmax_ce(rng),
        check_net20(rng),
    ]
