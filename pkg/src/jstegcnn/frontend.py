"""From quantized DCT coefficients to the 16-band network input.

Pipeline: dequantize -> orthonormal 8x8 inverse DCT + 128 (kept real valued,
no rounding or clamping) -> undecimated 4x4 DCT filter bank -> |.| -> min(., T).

Coefficients travel in a small container ("JCF1"), little endian::

    b"JCF1" | width u32 | height u32 | qtable 64 x u16 | int16 coeffs

Coefficients are stored block by block in raster block order, each block as
64 row-major values (row = vertical frequency).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

JCF_MAGIC = b"JCF1"
_HEADER = struct.Struct("<4sII64H")

# IJG luminance table (Annex K of the JPEG standard)
STD_LUMINANCE_QTABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)

DCT_SIZES = (2, 3, 4, 5, 8)


def quality_qtable(quality: int) -> np.ndarray:
    """IJG scaling of the standard luminance table for ``quality`` in 1..100."""
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be in 1..100, got {quality}")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    q = (STD_LUMINANCE_QTABLE * scale + 50) // 100
    return np.clip(q, 1, 255).astype(np.uint16)


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix; row ``u`` is the u-th basis vector.

    Angles are folded into the first quadrant in integer arithmetic, so
    entries of equal magnitude are bit-identical and cancel exactly.
    """
    c = np.empty((n, n))
    for u in range(n):
        for k in range(n):
            m = (2 * k + 1) * u % (4 * n)  # angle in units of pi / (2n)
            if m > 2 * n:
                m = 4 * n - m
            sign = 1.0
            if m > n:
                m, sign = 2 * n - m, -1.0
            c[u, k] = 0.0 if m == n else sign * np.cos(np.pi * m / (2 * n))
    c *= np.sqrt(2.0 / n)
    c[0] = np.sqrt(1.0 / n)
    return c


_C8 = dct_matrix(8)


@dataclass
class JpegPlane:
    width: int
    height: int
    coeffs: np.ndarray  # (height//8, width//8, 8, 8) int16
    qtable: np.ndarray  # (8, 8) uint16
    quality_factor: int | None = None

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs)
        self.qtable = np.asarray(self.qtable).reshape(8, 8)
        self.validate()

    def validate(self):
        if self.width % 8 or self.height % 8 or self.width < 8 or self.height < 8:
            raise ValueError(f"plane size {self.width}x{self.height} is not a positive multiple of 8")
        expect = (self.height // 8, self.width // 8, 8, 8)
        if self.coeffs.shape != expect:
            raise ValueError(
                f"coefficient array {self.coeffs.shape} does not hold "
                f"{expect[0] * expect[1]} blocks for a {self.width}x{self.height} plane"
            )
        if np.any(self.qtable < 1):
            raise ValueError("quantization steps must be >= 1")

    @property
    def block_count(self) -> int:
        return self.coeffs.shape[0] * self.coeffs.shape[1]

    def ac_mask(self) -> np.ndarray:
        m = np.ones(self.coeffs.shape, dtype=bool)
        m[..., 0, 0] = False
        return m


# ---------------------------------------------------------------------------
# container
# ---------------------------------------------------------------------------

def write_jcf(path, plane: JpegPlane) -> None:
    hdr = _HEADER.pack(JCF_MAGIC, plane.width, plane.height,
                       *plane.qtable.astype(np.uint16).ravel().tolist())
    body = plane.coeffs.reshape(-1, 64).astype("<i2").tobytes()
    Path(path).write_bytes(hdr + body)


def read_jcf(path) -> JpegPlane:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated JCF header")
    magic, width, height, *q = _HEADER.unpack_from(data)
    if magic != JCF_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = np.frombuffer(data, dtype="<i2", offset=_HEADER.size)
    nblocks = (height // 8) * (width // 8)
    if body.size != nblocks * 64:
        raise ValueError(f"{path}: expected {nblocks} blocks, found {body.size / 64:g}")
    coeffs = body.reshape(height // 8, width // 8, 8, 8).astype(np.int16)
    return JpegPlane(width, height, coeffs, np.array(q, dtype=np.uint16).reshape(8, 8))


# ---------------------------------------------------------------------------
# block transforms
# ---------------------------------------------------------------------------

def _blocks_to_plane(b: np.ndarray) -> np.ndarray:
    bh, bw = b.shape[:2]
    return b.transpose(0, 2, 1, 3).reshape(bh * 8, bw * 8)


def _plane_to_blocks(x: np.ndarray) -> np.ndarray:
    h, w = x.shape
    return x.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def decompress_no_round(plane: JpegPlane) -> np.ndarray:
    """Real-valued spatial plane ``(1, 1, H, W)``; no rounding, no clamping."""
    plane.validate()
    deq = plane.coeffs.astype(np.float64) * plane.qtable.astype(np.float64)
    spatial = np.einsum("ux,abuv,vy->abxy", _C8, deq, _C8, optimize=True) + 128.0
    return _blocks_to_plane(spatial)[None, None]


def blockwise_dct(pixels: np.ndarray) -> np.ndarray:
    """Forward 8x8 DCT of ``pixels - 128``; returns ``(H/8, W/8, 8, 8)`` floats."""
    b = _plane_to_blocks(np.asarray(pixels, dtype=np.float64) - 128.0)
    return np.einsum("ux,abxy,vy->abuv", _C8, b, _C8, optimize=True)


def compress(pixels: np.ndarray, qtable: np.ndarray, quality_factor: int | None = None) -> JpegPlane:
    """Quantize an 8-bit-range image (JPEG without entropy coding)."""
    pixels = np.asarray(pixels)
    h, w = pixels.shape
    q = np.asarray(qtable, dtype=np.float64).reshape(8, 8)
    coeffs = np.round(blockwise_dct(pixels) / q).astype(np.int16)
    return JpegPlane(w, h, coeffs, np.asarray(qtable, dtype=np.uint16), quality_factor)


# ---------------------------------------------------------------------------
# filter bank
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PreprocConfig:
    dct_size: int = 4
    truncation_threshold: float = 8.0
    drop_dc: bool = False
    drop_highest: bool = False

    def __post_init__(self):
        if self.dct_size not in DCT_SIZES:
            raise ValueError(f"dct_size must be one of {DCT_SIZES}, got {self.dct_size}")
        if self.truncation_threshold <= 0:
            raise ValueError("truncation threshold must be positive")

    def band_indices(self) -> list[tuple[int, int]]:
        n = self.dct_size
        bands = [(u, v) for u in range(n) for v in range(n)]
        if self.drop_dc:
            bands.remove((0, 0))
        if self.drop_highest:
            bands.remove((n - 1, n - 1))
        return bands

    @property
    def n_bands(self) -> int:
        return len(self.band_indices())


def filter_bank_kernels(n: int = 4) -> np.ndarray:
    """The ``n*n`` fixed kernels ``outer(c_u, c_v)``, shape ``(n*n, n, n)``."""
    c = dct_matrix(n)
    return np.einsum("ux,vy->uvxy", c, c).reshape(n * n, n, n)


def _same_pad(n: int) -> tuple[int, int]:
    # even sizes put the extra row/column of zeros after the image
    before = (n - 1) // 2
    return before, n - 1 - before


def dct_filter_bank(spatial: np.ndarray, cfg: PreprocConfig = PreprocConfig()) -> np.ndarray:
    """Undecimated DCT of every ``n x n`` window, zero padded to keep H x W.

    ``spatial`` is ``(N, 1, H, W)``; the result is ``(N, bands, H, W)``.  Band
    ``(u, v)`` at pixel ``(y, x)`` is the DCT coefficient of the window whose
    top-left corner is ``(y - before, x - before)``.
    """
    spatial = np.asarray(spatial)
    if spatial.ndim != 4 or spatial.shape[1] != 1:
        raise ValueError(f"dct_filter_bank expects (N,1,H,W), got {spatial.shape}")
    n = cfg.dct_size
    c = dct_matrix(n).astype(spatial.dtype)
    lo, hi = _same_pad(n)
    img = spatial[:, 0]
    nb, h, w = img.shape
    xp = np.zeros((nb, h + n - 1, w + n - 1), dtype=spatial.dtype)
    xp[:, lo:lo + h, lo:lo + w] = img
    # separable: filter rows (vertical frequency u) then columns (v).  Taps
    # are summed in mirror pairs, so a flat 4x4 window has exactly zero AC.
    rows = np.zeros((n, nb, h, w + n - 1), dtype=spatial.dtype)
    for u in range(n):
        rows[u] = _mirror_sum(c[u], lambda k: xp[:, k:k + h, :])
    bands = cfg.band_indices()
    out = np.zeros((nb, len(bands), h, w), dtype=spatial.dtype)
    for b, (u, v) in enumerate(bands):
        out[:, b] = _mirror_sum(c[v], lambda k: rows[u, :, :, k:k + w])
    return out


def _mirror_sum(taps, window):
    n = len(taps)
    acc = 0.0
    for k in range(n // 2):
        acc = acc + (taps[k] * window(k) + taps[n - 1 - k] * window(n - 1 - k))
    if n % 2:
        acc = acc + taps[n // 2] * window(n // 2)
    return acc


def abs_truncate(bands: np.ndarray, threshold: float = 8.0) -> np.ndarray:
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return np.minimum(np.abs(bands), threshold)


def spatial_to_input(spatial: np.ndarray, cfg: PreprocConfig = PreprocConfig()) -> np.ndarray:
    """Filter bank + truncation on already decompressed planes ``(N,1,H,W)``."""
    return abs_truncate(dct_filter_bank(spatial, cfg), cfg.truncation_threshold)


def preprocess(plane: JpegPlane, cfg: PreprocConfig = PreprocConfig()) -> np.ndarray:
    return spatial_to_input(decompress_no_round(plane), cfg)
