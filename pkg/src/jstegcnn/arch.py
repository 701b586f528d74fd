"""Declarative network descriptions.

An :class:`ArchSpec` is a chain of layer nodes plus a list of additive
shortcut edges.  Node ``i`` is the i-th layer; its value is the layer output
plus every shortcut that ends at ``i``.  Node ``-1`` is the network input.

Text format (one entry per line, ``#`` starts a comment)::

    name net20
    width 1
    input 16
    conv 24 3 1 1        # out_ch kernel stride pad
    bn
    relu
    ...
    global_pool
    fc 2
    shortcut 2 11 identity
    shortcut 11 26 projection
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction

INPUT = -1
LAYER_KINDS = ("conv", "bn", "relu", "avg_pool", "max_pool", "global_pool", "fc")
SHORTCUT_KINDS = ("identity", "projection")


class ArchError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_ch: int = 0
    k: int = 0
    stride: int = 1
    pad: int = 0

    def to_line(self) -> str:
        if self.kind == "conv":
            return f"conv {self.out_ch} {self.k} {self.stride} {self.pad}"
        if self.kind in ("avg_pool", "max_pool"):
            return f"{self.kind} {self.k} {self.stride} {self.pad}"
        if self.kind == "fc":
            return f"fc {self.out_ch}"
        return self.kind


@dataclass(frozen=True)
class Shortcut:
    src: int
    dst: int
    kind: str = "identity"


@dataclass
class ArchSpec:
    name: str
    layers: list[LayerSpec]
    shortcuts: list[Shortcut] = field(default_factory=list)
    in_channels: int = 16
    width_mult: Fraction = Fraction(1)

    def __post_init__(self):
        self.validate()

    # -- shape algebra -----------------------------------------------------
    def node_shapes(self) -> list[tuple[int, int]]:
        """(channels, downsampling factor) of every node value, checked.

        Spatial size of node ``i`` is ``H / factor``; stride-2 conv and
        pooling layers with the kernels used here halve even sizes exactly.
        """
        shapes = []
        cur = (self.in_channels, 1)
        incoming = self.incoming()
        for i, layer in enumerate(self.layers):
            c, f = cur
            if layer.kind == "conv":
                cur = (layer.out_ch, f * layer.stride)
            elif layer.kind in ("avg_pool", "max_pool"):
                cur = (c, f * layer.stride)
            elif layer.kind == "global_pool":
                cur = (c, 0)
            elif layer.kind == "fc":
                if f != 0:
                    raise ArchError(f"layer {i}: fc must follow global_pool")
                cur = (layer.out_ch, 0)
            for sc in incoming.get(i, []):
                src = (self.in_channels, 1) if sc.src == INPUT else shapes[sc.src]
                if sc.kind == "projection":
                    src = (cur[0], src[1] * 2)
                if src != cur:
                    raise ArchError(
                        f"shortcut {sc.src}->{sc.dst} ({sc.kind}) delivers (C={src[0]}, /{src[1]}) "
                        f"but node {i} has (C={cur[0]}, /{cur[1]})"
                    )
            shapes.append(cur)
        return shapes

    def incoming(self) -> dict[int, list[Shortcut]]:
        out: dict[int, list[Shortcut]] = {}
        for sc in self.shortcuts:
            out.setdefault(sc.dst, []).append(sc)
        return out

    def validate(self) -> None:
        if not self.layers:
            raise ArchError("empty layer list")
        for i, layer in enumerate(self.layers):
            if layer.kind not in LAYER_KINDS:
                raise ArchError(f"layer {i}: unknown kind {layer.kind!r}")
            if layer.kind == "conv" and (layer.out_ch < 1 or layer.k < 1 or layer.stride < 1):
                raise ArchError(f"layer {i}: bad conv {layer}")
        if self.layers[-1].kind != "fc":
            raise ArchError("the sink layer must be fc")
        n = len(self.layers)
        for sc in self.shortcuts:
            if sc.kind not in SHORTCUT_KINDS:
                raise ArchError(f"unknown shortcut kind {sc.kind!r}")
            if not (INPUT <= sc.src < sc.dst < n):
                raise ArchError(f"shortcut {sc.src}->{sc.dst} is not a forward edge")
        self.node_shapes()

    # -- graph analysis ----------------------------------------------------
    def _conv_paths(self, pick):
        n = len(self.layers)
        best = {INPUT: 0}
        incoming = self.incoming()
        for i in range(n):
            w = 1 if self.layers[i].kind == "conv" else 0
            cands = [best[i - 1] + w]
            for sc in incoming.get(i, []):
                cands.append(best[sc.src] + (1 if sc.kind == "projection" else 0))
            best[i] = pick(cands)
        return best[n - 1]

    def longest_conv_path(self) -> int:
        return self._conv_paths(max)

    def shortest_conv_path(self) -> int:
        return self._conv_paths(min)

    def conv_layer_count(self) -> int:
        return sum(1 for layer in self.layers if layer.kind == "conv")

    def feature_dim(self) -> int:
        """Channel count entering the classifier."""
        shapes = self.node_shapes()
        for i, layer in enumerate(self.layers):
            if layer.kind == "global_pool":
                return shapes[i][0]
        raise ArchError("no global_pool layer")

    def total_stride(self) -> int:
        return max(f for _, f in self.node_shapes())

    def param_count(self) -> int:
        """Learnable scalars implied by the spec (BN running stats excluded)."""
        shapes = self.node_shapes()
        total = 0
        cin = self.in_channels
        for i, layer in enumerate(self.layers):
            if layer.kind == "conv":
                total += layer.out_ch * cin * layer.k * layer.k
            elif layer.kind == "bn":
                total += 2 * cin
            elif layer.kind == "fc":
                total += layer.out_ch * cin + layer.out_ch
            cin = shapes[i][0]
        for sc in self.shortcuts:
            if sc.kind == "projection":
                src_c = self.in_channels if sc.src == INPUT else shapes[sc.src][0]
                dst_c = shapes[sc.dst][0]
                total += dst_c * src_c + 2 * dst_c
        return total

    # -- serialization -----------------------------------------------------
    def to_text(self) -> str:
        lines = [f"name {self.name}", f"width {self.width_mult}", f"input {self.in_channels}"]
        lines += [layer.to_line() for layer in self.layers]
        lines += [f"shortcut {sc.src} {sc.dst} {sc.kind}" for sc in self.shortcuts]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ArchSpec":
        name, width, cin = "unnamed", Fraction(1), 16
        layers: list[LayerSpec] = []
        shortcuts: list[Shortcut] = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            try:
                head, args = tok[0], tok[1:]
                if head == "name":
                    name = args[0]
                elif head == "width":
                    width = Fraction(args[0])
                elif head == "input":
                    cin = int(args[0])
                elif head == "conv":
                    oc, k, s, p = map(int, args)
                    layers.append(LayerSpec("conv", oc, k, s, p))
                elif head in ("avg_pool", "max_pool"):
                    k, s, p = map(int, args)
                    layers.append(LayerSpec(head, 0, k, s, p))
                elif head == "fc":
                    layers.append(LayerSpec("fc", int(args[0])))
                elif head in ("bn", "relu", "global_pool") and not args:
                    layers.append(LayerSpec(head))
                elif head == "shortcut":
                    src, dst, kind = int(args[0]), int(args[1]), args[2]
                    shortcuts.append(Shortcut(src, dst, kind))
                else:
                    raise ValueError(f"unrecognised entry {head!r}")
            except (ValueError, IndexError) as exc:
                raise ArchError(f"line {lineno}: {raw.strip()!r}: {exc}") from None
        return cls(name, layers, shortcuts, cin, width)

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


# ---------------------------------------------------------------------------
# reference architectures
# ---------------------------------------------------------------------------

BASE_WIDTH = 24


def scaled_width(width_mult, base: int = BASE_WIDTH) -> int:
    """Channels for ``base * width_mult``; decimal spellings of thirds are accepted."""
    w = float(width_mult)
    if not 0 < w <= 1:
        raise ArchError(f"width multiplier must lie in (0, 1], got {width_mult}")
    c = base * w
    r = round(c)
    if r < 1 or abs(c - r) > 0.05:
        raise ArchError(f"width {width_mult} gives non-integer channel count {c:g} (base {base})")
    return r


class _Builder:
    def __init__(self):
        self.layers: list[LayerSpec] = []
        self.shortcuts: list[Shortcut] = []

    @property
    def last(self) -> int:
        return len(self.layers) - 1

    def conv_bn_relu(self, out_ch, stride=1) -> int:
        self.layers += [LayerSpec("conv", out_ch, 3, stride, 1), LayerSpec("bn"), LayerSpec("relu")]
        return self.last

    def pool(self, kind):
        self.layers.append(LayerSpec(kind, 0, 3, 2, 1))
        return self.last

    def head(self):
        self.layers += [LayerSpec("global_pool"), LayerSpec("fc", 2)]


def _as_fraction(width_mult) -> Fraction:
    return Fraction(width_mult).limit_denominator(24) if not isinstance(width_mult, Fraction) else width_mult


def build_net20_spec(width_mult=1, shortcuts: bool = True) -> ArchSpec:
    """Stem conv + residual block, then four stride-2 stages with residual blocks."""
    base = scaled_width(width_mult)
    b = _Builder()
    stem = b.conv_bn_relu(base)
    blk = stem
    for _ in range(3):
        blk = b.conv_bn_relu(base)
    b.shortcuts.append(Shortcut(stem, blk, "identity"))
    stage_in, width = blk, base
    for _ in range(4):
        width *= 2
        t = b.conv_bn_relu(width, stride=2)
        r = t
        for _ in range(3):
            r = b.conv_bn_relu(width)
        b.shortcuts.append(Shortcut(t, r, "identity"))
        b.shortcuts.append(Shortcut(stage_in, r, "projection"))
        stage_in = r
    b.head()
    name = "net20" if shortcuts else "net20-noshort"
    return ArchSpec(name, b.layers, b.shortcuts if shortcuts else [], 16, _as_fraction(width_mult))


def _net6_widths(width_mult):
    base = scaled_width(width_mult)
    return [base, base, 2 * base, 4 * base, 8 * base, 16 * base]


def build_net6_spec(pool: str = "avg", width_mult=Fraction(2, 3)) -> ArchSpec:
    kind = {"avg": "avg_pool", "max": "max_pool"}[pool]
    b = _Builder()
    for i, c in enumerate(_net6_widths(width_mult)):
        b.conv_bn_relu(c)
        if i > 0:
            b.pool(kind)
    b.head()
    return ArchSpec(f"net6-{pool}", b.layers, [], 16, _as_fraction(width_mult))


def build_net11_spec(width_mult=Fraction(2, 3)) -> ArchSpec:
    b = _Builder()
    for i, c in enumerate(_net6_widths(width_mult)):
        b.conv_bn_relu(c)
        if i > 0:
            b.conv_bn_relu(c, stride=2)
    b.head()
    return ArchSpec("net11", b.layers, [], 16, _as_fraction(width_mult))


ARCHS = {
    "net20": lambda w=1: build_net20_spec(w),
    "net20-noshort": lambda w=1: build_net20_spec(w, shortcuts=False),
    "net6-avg": lambda w=Fraction(2, 3): build_net6_spec("avg", w),
    "net6-max": lambda w=Fraction(2, 3): build_net6_spec("max", w),
    "net11": lambda w=Fraction(2, 3): build_net11_spec(w),
}


def arch_by_name(name: str, width_mult=None) -> ArchSpec:
    if name not in ARCHS:
        raise ArchError(f"unknown architecture {name!r}; valid names: {', '.join(ARCHS)}")
    return ARCHS[name]() if width_mult is None else ARCHS[name](width_mult)
