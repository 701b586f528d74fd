"""2-D convolution (cross-correlation, no bias) for NCHW arrays.

Two fast routes are used:

* stride 1 -- "shift GEMM": the input is laid out channel-major on a padded
  grid and flattened, so every kernel tap is a contiguous column window of
  the same matrix.  Each tap is one BLAS call on a view; nothing is copied.
* any stride -- classic im2col through a strided view, then a single GEMM.

`conv2d_naive` is the loop reference both are tested against.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _check_shapes(x: np.ndarray, w: np.ndarray, stride: int, padding: int):
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects rank-4 input and weight, got {x.shape} and {w.shape}")
    n, cin, h, wd = x.shape
    cout, wcin, kh, kw = w.shape
    if cin != wcin:
        raise ValueError(
            f"conv2d channel mismatch: input {x.shape} has {cin} channels, "
            f"weight {w.shape} expects {wcin}"
        )
    if kh != kw:
        raise ValueError(f"conv2d needs square kernels, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} / padding={padding}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output would be empty for input {x.shape}, kernel {kh}, stride {stride}")
    return n, cin, h, wd, cout, kh, ho, wo


def _pad_cnhw(x: np.ndarray, padding: int) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.zeros((c, n, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    xp[:, :, padding:padding + h, padding:padding + w] = x.transpose(1, 0, 2, 3)
    return xp


# ---------------------------------------------------------------------------
# stride-1 shift GEMM
# ---------------------------------------------------------------------------

# Column tiles sized so one input tile plus one output tile stay in L2.
_TILE_BYTES = 512 * 1024


def _tile_len(cin: int, cout: int, itemsize: int) -> int:
    return max(1024, _TILE_BYTES // ((cin + cout) * itemsize))


def _padded_flat(x, padding, k):
    n, cin, h, wd = x.shape
    xp = _pad_cnhw(x, padding)
    hp, wp = xp.shape[2], xp.shape[3]
    flat = xp.reshape(cin, -1)
    span = flat.shape[1] - ((k - 1) * wp + (k - 1))
    return flat, hp, wp, span


def _shift_forward(x, w, padding):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    flat, hp, wp, span = _padded_flat(x, padding, k)
    ho, wo = hp - k + 1, wp - k + 1
    taps = np.ascontiguousarray(w.transpose(2, 3, 0, 1))
    grid = np.zeros((cout, flat.shape[1]), dtype=x.dtype)
    tile = _tile_len(cin, cout, x.itemsize)
    tmp = np.empty((cout, tile), dtype=x.dtype)
    for s in range(0, span, tile):
        e = min(span, s + tile)
        acc = grid[:, s:e]
        t = tmp[:, :e - s]
        for i in range(k):
            for j in range(k):
                off = i * wp + j
                np.matmul(taps[i, j], flat[:, s + off:e + off], out=t)
                acc += t
    out = grid.reshape(cout, n, hp, wp)[:, :, :ho, :wo]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def _shift_backward(x, w, grad_out, padding, need_input=True):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    flat, hp, wp, span = _padded_flat(x, padding, k)
    ho, wo = hp - k + 1, wp - k + 1

    gz = np.zeros((cout, n, hp, wp), dtype=x.dtype)
    gz[:, :, :ho, :wo] = grad_out.transpose(1, 0, 2, 3)
    gz = gz.reshape(cout, -1)

    taps_t = np.ascontiguousarray(w.transpose(2, 3, 1, 0))
    grad_taps = np.zeros((k, k, cout, cin), dtype=w.dtype)
    gw_tmp = np.empty((cout, cin), dtype=w.dtype)
    gflat = np.zeros_like(flat)
    tile = _tile_len(cin, cout, x.itemsize)
    tmp = np.empty((cin, tile), dtype=x.dtype)
    for s in range(0, span, tile):
        e = min(span, s + tile)
        g = gz[:, s:e]
        t = tmp[:, :e - s]
        for i in range(k):
            for j in range(k):
                off = i * wp + j
                np.matmul(g, flat[:, s + off:e + off].T, out=gw_tmp)
                grad_taps[i, j] += gw_tmp
                if need_input:
                    np.matmul(taps_t[i, j], g, out=t)
                    gflat[:, s + off:e + off] += t
    grad_w = np.ascontiguousarray(grad_taps.transpose(2, 3, 0, 1))
    if not need_input:
        return None, grad_w
    gxp = gflat.reshape(cin, n, hp, wp)[:, :, padding:padding + h, padding:padding + wd]
    return np.ascontiguousarray(gxp.transpose(1, 0, 2, 3)), grad_w


# ---------------------------------------------------------------------------
# general im2col
# ---------------------------------------------------------------------------

def _im2col(x, k, stride, padding, ho, wo):
    xp = _pad_cnhw(x, padding)
    c, n, hp, wp = xp.shape
    sc, sn, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(c, k, k, n, ho, wo),
        strides=(sc, sh, sw, sn, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(c * k * k, n * ho * wo), xp.shape


def _im2col_forward(x, w, stride, padding):
    n, cin, h, wd, cout, k, ho, wo = _check_shapes(x, w, stride, padding)
    cols, _ = _im2col(x, k, stride, padding, ho, wo)
    out = w.reshape(cout, -1) @ cols
    return np.ascontiguousarray(out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3))


def _im2col_backward(x, w, grad_out, stride, padding, need_input=True):
    n, cin, h, wd, cout, k, ho, wo = _check_shapes(x, w, stride, padding)
    cols, pshape = _im2col(x, k, stride, padding, ho, wo)
    g = grad_out.transpose(1, 0, 2, 3).reshape(cout, -1)
    grad_w = (g @ cols.T).reshape(w.shape)
    if not need_input:
        return None, grad_w
    gcols = (w.reshape(cout, -1).T @ g).reshape(cin, k, k, n, ho, wo)
    gxp = np.zeros(pshape, dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j]
    gx = gxp[:, :, padding:padding + h, padding:padding + wd]
    return np.ascontiguousarray(gx.transpose(1, 0, 2, 3)), grad_w


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------

def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlate ``x`` (N,Cin,H,W) with ``w`` (Cout,Cin,k,k)."""
    _check_shapes(x, w, stride, padding)
    if stride == 1:
        return _shift_forward(x, w, padding)
    return _im2col_forward(x, w, stride, padding)


def conv2d_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray,
                    stride: int = 1, padding: int = 0,
                    need_input: bool = True) -> tuple[np.ndarray | None, np.ndarray]:
    """Return ``(grad_x, grad_w)``; ``grad_w`` is summed over the batch.

    With ``need_input=False`` the input gradient is skipped and returned as None.
    """
    n, cin, h, wd, cout, k, ho, wo = _check_shapes(x, w, stride, padding)
    if grad_out.shape != (n, cout, ho, wo):
        raise ValueError(
            f"conv2d_backward: grad_out shape {grad_out.shape} != forward output {(n, cout, ho, wo)}"
        )
    if stride == 1:
        return _shift_backward(x, w, grad_out, padding, need_input)
    return _im2col_backward(x, w, grad_out, stride, padding, need_input)


def conv2d_naive(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Seven nested loops.  Only for testing."""
    n, cin, h, wd, cout, k, ho, wo = _check_shapes(x, w, stride, padding)
    xp = np.zeros((n, cin, h + 2 * padding, wd + 2 * padding), dtype=np.float64)
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    out = np.zeros((n, cout, ho, wo), dtype=np.float64)
    for b in range(n):
        for o in range(cout):
            for y in range(ho):
                for xx in range(wo):
                    s = 0.0
                    for c in range(cin):
                        for i in range(k):
                            for j in range(k):
                                s += xp[b, c, y * stride + i, xx * stride + j] * w[o, c, i, j]
                    out[b, o, y, xx] = s
    return out
