"""Instantiated networks: parameters, BN state, forward and backward passes."""
from __future__ import annotations

import numpy as np

from . import layers as L
from .arch import INPUT, ArchSpec, LayerSpec


class Conv:
    def __init__(self, cin, spec: LayerSpec, dtype):
        self.stride, self.pad = spec.stride, spec.pad
        self.weight = L.Parameter(np.zeros((spec.out_ch, cin, spec.k, spec.k), dtype=dtype))
        self._x = None

    def params(self):
        return [self.weight]

    def forward(self, x, train):
        self._x = x if train else None
        return L.conv2d_forward(x, self.weight.value, self.stride, self.pad)

    def backward(self, g, need_input=True):
        gx, gw = L.conv2d_backward(self._x, self.weight.value, g, self.stride, self.pad, need_input)
        self.weight.grad += gw
        self._x = None
        return gx


class BatchNorm:
    def __init__(self, channels, dtype):
        self.state = L.BatchNormState.create(channels, dtype=dtype)
        self._x = None

    def params(self):
        return [self.state.gamma, self.state.beta]

    def forward(self, x, train):
        self.state.mode = "train" if train else "eval"
        self._x = x if train else None
        return L.batchnorm_forward(x, self.state)

    def backward(self, g):
        gx, gg, gb = L.batchnorm_backward(self._x, self.state, g)
        self.state.gamma.grad += gg
        self.state.beta.grad += gb
        self._x = None
        return gx


class ReLU:
    def params(self):
        return []

    def forward(self, x, train):
        y = L.relu(x)
        self._y = y if train else None
        return y

    def backward(self, g):
        # y > 0 exactly where x > 0
        gx = L.relu_backward(self._y, g)
        self._y = None
        return gx


class Pool:
    def __init__(self, spec: LayerSpec):
        self.kind, self.k, self.stride, self.pad = spec.kind, spec.k, spec.stride, spec.pad

    def params(self):
        return []

    def forward(self, x, train):
        self._x = x if train else None
        fn = L.avg_pool if self.kind == "avg_pool" else L.max_pool
        return fn(x, self.k, self.stride, self.pad)

    def backward(self, g):
        x, self._x = self._x, None
        if self.kind == "avg_pool":
            return L.avg_pool_backward(x.shape, g, self.k, self.stride, self.pad)
        return L.max_pool_backward(x, g, self.k, self.stride, self.pad)


class GlobalPool:
    def params(self):
        return []

    def forward(self, x, train):
        self._shape = x.shape
        return L.global_avg_pool(x)

    def backward(self, g):
        return L.global_avg_pool_backward(self._shape, g)


class FC:
    def __init__(self, cin, out, dtype):
        self.weight = L.Parameter(np.zeros((out, cin), dtype=dtype), weight_decay_enabled=True)
        self.bias = L.Parameter(np.zeros(out, dtype=dtype), weight_decay_enabled=True)

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, train):
        self._x = x if train else None
        return L.fully_connected(x, self.weight.value, self.bias.value)

    def backward(self, g):
        gx, gw, gb = L.fully_connected_backward(self._x, self.weight.value, g)
        self.weight.grad += gw
        self.bias.grad += gb
        self._x = None
        return gx


class Projection:
    """1x1 stride-2 conv + BN on a shortcut edge."""

    def __init__(self, cin, cout, dtype):
        self.conv = Conv(cin, LayerSpec("conv", cout, 1, 2, 0), dtype)
        self.bn = BatchNorm(cout, dtype)

    def params(self):
        return self.conv.params() + self.bn.params()

    def forward(self, x, train):
        return self.bn.forward(self.conv.forward(x, train), train)

    def backward(self, g):
        return self.conv.backward(self.bn.backward(g))


class Identity:
    def params(self):
        return []

    def forward(self, x, train):
        return x

    def backward(self, g):
        return g


class Network:
    def __init__(self, spec: ArchSpec, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        shapes = spec.node_shapes()
        self.modules = []
        cin = spec.in_channels
        for i, ls in enumerate(spec.layers):
            if ls.kind == "conv":
                m = Conv(cin, ls, self.dtype)
            elif ls.kind == "bn":
                m = BatchNorm(cin, self.dtype)
            elif ls.kind == "relu":
                m = ReLU()
            elif ls.kind in ("avg_pool", "max_pool"):
                m = Pool(ls)
            elif ls.kind == "global_pool":
                m = GlobalPool()
            else:
                m = FC(cin, ls.out_ch, self.dtype)
            self.modules.append(m)
            cin = shapes[i][0]
        self.edges = []
        for sc in spec.shortcuts:
            if sc.kind == "projection":
                src_c = spec.in_channels if sc.src == INPUT else shapes[sc.src][0]
                self.edges.append((sc, Projection(src_c, shapes[sc.dst][0], self.dtype)))
            else:
                self.edges.append((sc, Identity()))
        self._incoming: dict[int, list] = {}
        for sc, mod in self.edges:
            self._incoming.setdefault(sc.dst, []).append((sc.src, mod))
        self._sources = {sc.src for sc, _ in self.edges}

    # -- parameter access --------------------------------------------------
    def parameters(self) -> list[L.Parameter]:
        out = []
        for m in self.modules:
            out += m.params()
        for _, e in self.edges:
            out += e.params()
        return out

    def conv_weights(self) -> list[L.Parameter]:
        out = [m.weight for m in self.modules if isinstance(m, Conv)]
        return out + [e.conv.weight for _, e in self.edges if isinstance(e, Projection)]

    def batchnorms(self) -> list[BatchNorm]:
        out = [m for m in self.modules if isinstance(m, BatchNorm)]
        return out + [e.bn for _, e in self.edges if isinstance(e, Projection)]

    def fc(self) -> FC:
        return self.modules[-1]

    def param_count(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Named views of every parameter value and BN running statistic."""
        out = {}
        for i, p in enumerate(self.parameters()):
            out[f"param{i}"] = p.value
        for i, bn in enumerate(self.batchnorms()):
            out[f"bn{i}.mean"] = bn.state.running_mean
            out[f"bn{i}.var"] = bn.state.running_var
        return out

    # -- passes ------------------------------------------------------------
    def check_input(self, x: np.ndarray):
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ValueError(f"expected (N,{self.spec.in_channels},H,W) input, got {x.shape}")
        f = self.spec.total_stride()
        if x.shape[2] % f or x.shape[3] % f:
            raise ValueError(
                f"{self.spec.name}: spatial size {x.shape[2]}x{x.shape[3]} must be divisible by {f}"
            )

    def forward(self, x: np.ndarray, mode: str = "eval", check: bool = True) -> np.ndarray:
        """Logits ``(N, 2, 1, 1)``; ``check=False`` skips the divisibility rule."""
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        if check:
            self.check_input(x)
        train = mode == "train"
        x = np.asarray(x, dtype=self.dtype)
        saved = {INPUT: x} if INPUT in self._sources else {}
        v = x
        for i, m in enumerate(self.modules):
            v = m.forward(v, train)
            for src, e in self._incoming.get(i, []):
                v = L.add(v, e.forward(saved[src], train))
            if i in self._sources:
                saved[i] = v
        return v

    def backward(self, grad_logits: np.ndarray, input_grad: bool = False):
        """Accumulate parameter gradients.

        Returns the gradient w.r.t. the network input when ``input_grad`` is
        set, else None (the first conv then skips its input-gradient GEMMs).
        """
        pending: dict[int, np.ndarray] = {}
        g = grad_logits
        for i in range(len(self.modules) - 1, -1, -1):
            if i in pending:
                g = g + pending.pop(i)
            for src, e in self._incoming.get(i, []):
                gs = e.backward(g)
                pending[src] = pending[src] + gs if src in pending else gs
            if i == 0 and not input_grad and isinstance(self.modules[0], Conv) \
                    and INPUT not in pending:
                self.modules[0].backward(g, need_input=False)
                return None
            g = self.modules[i].backward(g)
        if INPUT in pending:
            g = g + pending.pop(INPUT)
        return g

    def features(self, x: np.ndarray) -> np.ndarray:
        """Eval-mode activation right before global pooling."""
        v = np.asarray(x, dtype=self.dtype)
        saved = {INPUT: v}
        for i, m in enumerate(self.modules):
            if isinstance(m, GlobalPool):
                return v
            v = m.forward(v, False)
            for src, e in self._incoming.get(i, []):
                v = v + e.forward(saved[src], False)
            saved[i] = v
        raise ValueError("network has no global pooling layer")


def init_params(net: Network, rng_seed: int, conv_std: float = 0.01) -> Network:
    """Gaussian(0, conv_std) conv kernels, BN (1, 0), Xavier-uniform FC, zero FC bias."""
    rng = np.random.default_rng(rng_seed)
    for p in net.conv_weights():
        p.value[...] = rng.normal(0.0, conv_std, size=p.shape)
    for bn in net.batchnorms():
        st = bn.state
        st.gamma.value[...] = 1
        st.beta.value[...] = 0
        st.running_mean[...] = 0
        st.running_var[...] = 1
    fc = net.fc()
    fan_out, fan_in = fc.weight.shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    fc.weight.value[...] = rng.uniform(-bound, bound, size=fc.weight.shape)
    fc.bias.value[...] = 0
    for p in net.parameters():
        p.momentum_buf[...] = 0
        p.grad[...] = 0
    return net


def build_network(spec: ArchSpec, rng_seed: int = 0, dtype=np.float32) -> Network:
    return init_params(Network(spec, dtype=dtype), rng_seed)
