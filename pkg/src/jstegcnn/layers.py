"""Layer operations with explicit forward/backward passes.

All tensors are plain ``numpy`` arrays in NCHW layout.  Every op is a pure
function; learnable state lives in :class:`Parameter` and
:class:`BatchNormState`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .conv import conv2d_backward, conv2d_forward, conv_output_size  # noqa: F401  (re-export)


@dataclass
class Parameter:
    value: np.ndarray
    weight_decay_enabled: bool = False
    grad: np.ndarray = field(init=False)
    momentum_buf: np.ndarray = field(init=False)

    def __post_init__(self):
        self.grad = np.zeros_like(self.value)
        self.momentum_buf = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0


@dataclass
class BatchNormState:
    gamma: Parameter
    beta: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1
    mode: str = "train"

    @classmethod
    def create(cls, channels: int, dtype=np.float32, epsilon: float = 1e-5,
               momentum: float = 0.1) -> "BatchNormState":
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        return cls(
            gamma=Parameter(np.ones(channels, dtype=dtype)),
            beta=Parameter(np.zeros(channels, dtype=dtype)),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            epsilon=epsilon,
            momentum=momentum,
        )

    @property
    def channels(self) -> int:
        return self.gamma.value.shape[0]


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def _bn_check(x, state):
    if x.ndim != 4 or x.shape[1] != state.channels:
        raise ValueError(f"batchnorm: input {x.shape} does not match {state.channels} channels")


def _batch_stats(x):
    m = x.shape[0] * x.shape[2] * x.shape[3]
    if m < 2:
        raise ValueError(f"batchnorm in train mode needs N*H*W > 1, got input {x.shape}")
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    return mean, var, m


def batchnorm_forward(x: np.ndarray, state: BatchNormState) -> np.ndarray:
    _bn_check(x, state)
    g = state.gamma.value[None, :, None, None]
    b = state.beta.value[None, :, None, None]
    if state.mode == "eval":
        scale = g / np.sqrt(state.running_var[None, :, None, None] + state.epsilon)
        return (x - state.running_mean[None, :, None, None]) * scale + b
    mean, var, m = _batch_stats(x)
    mom = state.momentum
    state.running_mean[...] = (1 - mom) * state.running_mean + mom * mean
    state.running_var[...] = (1 - mom) * state.running_var + mom * var * (m / (m - 1))
    inv = 1.0 / np.sqrt(var + state.epsilon)
    return (x - mean[None, :, None, None]) * (g * inv[None, :, None, None]) + b


def batchnorm_backward(x: np.ndarray, state: BatchNormState, grad_out: np.ndarray):
    """Return ``(grad_x, grad_gamma, grad_beta)`` for a train-mode forward."""
    if state.mode != "train":
        raise ValueError("batchnorm_backward is only defined for train mode")
    _bn_check(x, state)
    mean, var, m = _batch_stats(x)
    inv = 1.0 / np.sqrt(var + state.epsilon)
    xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    coef = (state.gamma.value * inv / m)[None, :, None, None]
    grad_x = coef * (m * grad_out - grad_beta[None, :, None, None]
                     - xhat * grad_gamma[None, :, None, None])
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return grad_out * (x > 0)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return a + b


def add_backward(grad_out: np.ndarray):
    return grad_out, grad_out


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def global_avg_pool(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_pool_backward(x_shape, grad_out: np.ndarray) -> np.ndarray:
    n, c, h, w = x_shape
    return np.broadcast_to(grad_out / (h * w), x_shape).copy()


def _windows(xp, window, stride, ho, wo):
    n, c, hp, wp = xp.shape
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(n, c, ho, wo, window, window),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def _pool_geometry(x, window, stride, padding):
    n, c, h, w = x.shape
    ho = conv_output_size(h, window, stride, padding)
    wo = conv_output_size(w, window, stride, padding)
    return n, c, h, w, ho, wo


def _valid_counts(h, w, window, stride, padding, ho, wo, dtype):
    ones = np.zeros((1, 1, h + 2 * padding, w + 2 * padding), dtype=dtype)
    ones[:, :, padding:padding + h, padding:padding + w] = 1
    return _windows(ones, window, stride, ho, wo).sum(axis=(4, 5))


def avg_pool(x: np.ndarray, window: int = 3, stride: int = 2, padding: int = 1) -> np.ndarray:
    """Windowed mean; the divisor counts only non-padding elements."""
    n, c, h, w, ho, wo = _pool_geometry(x, window, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    sums = _windows(xp, window, stride, ho, wo).sum(axis=(4, 5))
    return sums / _valid_counts(h, w, window, stride, padding, ho, wo, x.dtype)


def avg_pool_backward(x_shape, grad_out, window=3, stride=2, padding=1):
    n, c, h, w = x_shape
    ho, wo = grad_out.shape[2], grad_out.shape[3]
    g = grad_out / _valid_counts(h, w, window, stride, padding, ho, wo, grad_out.dtype)
    gp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=grad_out.dtype)
    for i in range(window):
        for j in range(window):
            gp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g
    return gp[:, :, padding:padding + h, padding:padding + w].copy()


def _max_argmax(x, window, stride, padding):
    n, c, h, w, ho, wo = _pool_geometry(x, window, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                constant_values=-np.inf)
    win = _windows(xp, window, stride, ho, wo).reshape(n, c, ho, wo, window * window)
    # np.argmax returns the first maximum in row-major window order
    idx = win.argmax(axis=-1)
    return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0], idx


def max_pool(x: np.ndarray, window: int = 3, stride: int = 2, padding: int = 1) -> np.ndarray:
    return _max_argmax(x, window, stride, padding)[0]


def max_pool_backward(x, grad_out, window=3, stride=2, padding=1):
    n, c, h, w = x.shape
    _, idx = _max_argmax(x, window, stride, padding)
    ho, wo = idx.shape[2], idx.shape[3]
    gp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=grad_out.dtype)
    di, dj = np.divmod(idx, window)
    for i in range(window):
        for j in range(window):
            hit = (di == i) & (dj == j)
            gp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += grad_out * hit
    return gp[:, :, padding:padding + h, padding:padding + w].copy()


# ---------------------------------------------------------------------------
# classifier
# ---------------------------------------------------------------------------

def _flat_features(x):
    if x.ndim != 4 or x.shape[2:] != (1, 1):
        raise ValueError(f"fully_connected expects (N,C,1,1) input, got {x.shape}")
    return x[:, :, 0, 0]


def fully_connected(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    f = _flat_features(x)
    if weight.shape[1] != f.shape[1]:
        raise ValueError(f"fully_connected: input {x.shape} vs weight {weight.shape}")
    return (f @ weight.T + bias)[:, :, None, None]


def fully_connected_backward(x, weight, grad_out):
    """Return ``(grad_x, grad_weight, grad_bias)``."""
    f = _flat_features(x)
    g = grad_out[:, :, 0, 0]
    return (g @ weight)[:, :, None, None], g.T @ f, g.sum(axis=0)


def softmax_cross_entropy(logits: np.ndarray, labels):
    """Mean cross-entropy over the batch.

    Returns ``(loss, probs[N,K], grad_logits[N,K,1,1])``.
    """
    z = logits.reshape(logits.shape[0], -1).astype(np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = z.shape[0]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    probs = np.exp(logp)
    loss = float(-logp[np.arange(n), labels].mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    grad /= n
    return loss, probs, grad.astype(logits.dtype).reshape(logits.shape)
