from __future__ import annotations

from typing import Iterable

from .layers import Parameter


def sgd_momentum_step(params: Iterable[Parameter], lr: float, momentum: float = 0.9,
                      weight_decay: float = 0.0) -> None:
    """In-place momentum SGD, Caffe form: ``v = m*v - lr*(g + wd*w); w += v``.

    Weight decay only touches parameters flagged ``weight_decay_enabled``.
    Gradients are cleared afterwards.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for p in params:
        g = p.grad
        if weight_decay and p.weight_decay_enabled:
            g = g + weight_decay * p.value
        p.momentum_buf *= momentum
        p.momentum_buf -= lr * g
        p.value += p.momentum_buf
        p.zero_grad()
