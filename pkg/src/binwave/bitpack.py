"""Bit-packed {-1,+1} storage and XNOR/popcount linear algebra.

Packing convention: bit 1 encodes +1, bit 0 encodes -1, 64 values per
machine word, row-major with the innermost axis along the reduction
dimension. Pad bits are zeroed, and the dot product is computed through
XOR (n - 2*popcount(a XOR b), identical to 2*popcount(XNOR) - n over the
valid bits), so zeroed pads cancel and need no compensation.

The integer core is exact; the only float operation is the final
per-channel scale multiply, so packed results match the float reference
bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import im2col_array
from .quantize import BinarizedTensor

__all__ = [
    "PackedBitTensor",
    "pack",
    "unpack",
    "pack_weights",
    "xnor_dot",
    "xnor_matmul",
    "binary_conv2d",
    "float_reference_conv2d",
    "bench_gemm",
]


@dataclass
class PackedBitTensor:
    """Bit-packed rows of a {-1,+1} tensor.

    ``shape`` is the logical shape before packing; the packed layout is
    (rows, words) where rows = prod(shape[:-1]) and the last logical axis
    is the packed one.
    """

    shape: tuple[int, ...]
    words: np.ndarray        # uint64, (rows, n_words)
    n: int                   # logical length of the packed axis
    pad_bits: int
    scale: np.ndarray | None = None

    @property
    def rows(self) -> int:
        return self.words.shape[0]

    def payload_bytes(self) -> int:
        return int(self.words.nbytes)


def _to_bits(values: np.ndarray) -> np.ndarray:
    if not np.all(np.abs(values) == 1.0):
        raise ValueError("pack expects entries that are exactly -1 or +1")
    return (values > 0).astype(np.uint8)


def pack(values, scale=None) -> PackedBitTensor:
    """Pack a 1-D or 2-D {-1,+1} array along its last axis."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        mat = values[None, :]
    elif values.ndim == 2:
        mat = values
    else:
        raise ValueError(f"pack expects a 1-D or 2-D array, got shape {values.shape}")
    bits = _to_bits(mat)
    n = bits.shape[1]
    packed = np.packbits(bits, axis=1, bitorder="little")
    pad_to = (-packed.shape[1]) % 8
    if pad_to:
        packed = np.concatenate(
            [packed, np.zeros((packed.shape[0], pad_to), dtype=np.uint8)], axis=1)
    words = packed.view("<u8")
    return PackedBitTensor(
        shape=values.shape,
        words=np.ascontiguousarray(words),
        n=n,
        pad_bits=words.shape[1] * 64 - n,
        scale=None if scale is None else np.asarray(scale, dtype=np.float64),
    )


def unpack(p: PackedBitTensor) -> np.ndarray:
    """Recover the {-1,+1} array; exact inverse of pack."""
    bytes_ = p.words.view(np.uint8)
    bits = np.unpackbits(bytes_, axis=1, bitorder="little")[:, :p.n]
    values = bits.astype(np.float64) * 2.0 - 1.0
    return values.reshape(p.shape)


def pack_weights(b: BinarizedTensor) -> PackedBitTensor:
    """Pack binarized weights with one row per output channel.

    4-D conv weights (Cout,Cin,KH,KW) flatten to (Cout, Cin*KH*KW) in the
    im2col patch order; 2-D linear weights pack as is. The scale rides
    along for the inference-time multiply.
    """
    vals = b.values
    if vals.ndim == 4:
        rows = vals.reshape(vals.shape[0], -1)
    elif vals.ndim == 2:
        rows = vals
    else:
        raise ValueError(f"pack_weights expects 2-D or 4-D values, got shape {vals.shape}")
    packed = pack(rows, scale=b.scale)
    packed.shape = vals.shape
    return packed


def _popcount_rows(words: np.ndarray) -> np.ndarray:
    return np.bitwise_count(words).sum(axis=-1, dtype=np.int64)


def xnor_dot(a: PackedBitTensor, b: PackedBitTensor) -> int:
    """Integer dot product of two packed {-1,+1} vectors.

    Equals 2*popcount(XNOR(a,b)) - n over the valid bits, computed as
    n - 2*popcount(a XOR b) so the zeroed pad bits drop out.
    """
    if a.rows != 1 or b.rows != 1:
        raise ValueError("xnor_dot expects single-row (vector) operands")
    if a.n != b.n:
        raise ValueError(f"xnor_dot length mismatch: {a.n} vs {b.n}")
    return int(a.n - 2 * _popcount_rows(a.words[0] ^ b.words[0]))


def xnor_matmul(a: PackedBitTensor, b: PackedBitTensor) -> np.ndarray:
    """Integer product A @ B.T of packed row sets, shape (a.rows, b.rows)."""
    if a.n != b.n:
        raise ValueError(f"xnor_matmul reduction mismatch: {a.n} vs {b.n}")
    out = np.empty((a.rows, b.rows), dtype=np.int64)
    for j in range(b.rows):
        out[:, j] = a.n - 2 * _popcount_rows(a.words ^ b.words[j])
    return out


def binary_conv2d(a: np.ndarray, w: PackedBitTensor, gamma, stride: int = 1,
                  pad: int = 0) -> np.ndarray:
    """Binary convolution: XNOR/popcount core, one float multiply by gamma.

    ``a`` is the {-1,+1} activation tensor (N,C,H,W); patches are packed
    here because the packing axis is the conv reduction axis, which exists
    only after patch extraction. ``w`` holds packed (Cout,Cin,KH,KW)
    weights. Spatial zero padding is emulated by padding with -1 and adding
    back the kernel sums over the padded region, so the result equals the
    float zero-pad reference exactly.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 4:
        raise ValueError(f"binary_conv2d expects (N,C,H,W) input, got shape {a.shape}")
    if len(w.shape) != 4:
        raise ValueError(f"binary_conv2d expects packed 4-D weights, got shape {w.shape}")
    cout, cin, kh, kw = w.shape
    n, c, h, wid = a.shape
    if c != cin:
        raise ValueError(f"binary_conv2d channel mismatch: input has {c}, weight expects {cin}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wid + 2 * pad - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError("binary_conv2d geometry collapses to empty output")

    cols = im2col_array(a, kh, kw, stride, pad, pad_value=-1.0)
    ints = xnor_matmul(pack(cols), w).astype(np.float64)

    if pad > 0:
        # inside-mask patches: 1 where the patch entry came from the input,
        # 0 where it came from padding; correction restores zero-pad semantics
        inside = im2col_array(np.ones((1, c, h, wid)), kh, kw, stride, pad, pad_value=0.0)
        w_rows = unpack(w).reshape(cout, cin * kh * kw)
        corr = (1.0 - inside) @ w_rows.T                      # (OH*OW, Cout)
        ints += np.tile(corr, (n, 1))

    out = ints.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2)
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.ndim == 1:
        if gamma.shape[0] != cout:
            raise ValueError(f"gamma has {gamma.shape[0]} channels, conv produces {cout}")
        gamma = gamma.reshape(1, cout, 1, 1)
    return out * gamma


def float_reference_conv2d(a: np.ndarray, w_values: np.ndarray, gamma, stride: int = 1,
                           pad: int = 0) -> np.ndarray:
    """Float path for equivalence testing: zero-pad conv then the gamma multiply.

    With {-1,+1} operands every partial sum is an integer, so float64
    accumulation is exact and the output matches binary_conv2d bit for bit.
    """
    a = np.asarray(a, dtype=np.float64)
    w_values = np.asarray(w_values, dtype=np.float64)
    n = a.shape[0]
    cout, cin, kh, kw = w_values.shape
    oh = (a.shape[2] + 2 * pad - kh) // stride + 1
    ow = (a.shape[3] + 2 * pad - kw) // stride + 1
    cols = im2col_array(a, kh, kw, stride, pad, pad_value=0.0)
    out = cols @ w_values.reshape(cout, -1).T
    out = out.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2)
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.ndim == 1:
        gamma = gamma.reshape(1, cout, 1, 1)
    return out * gamma


# ---------------------------------------------------------------------------
# throughput report
# ---------------------------------------------------------------------------

def bench_gemm(sizes, repeats: int = 5, seed: int = 0) -> list[dict]:
    """Packed vs naive-float multiply-accumulate throughput, median of repeats.

    Both paths share the same per-output-row loop structure; the float side
    is a plain elementwise multiply + sum (no BLAS), so the comparison
    isolates the 64-values-per-word win of the packed representation.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        n = int(n)
        a = np.where(rng.random((n, n)) < 0.5, -1.0, 1.0)
        b = np.where(rng.random((n, n)) < 0.5, -1.0, 1.0)
        pa, pb = pack(a), pack(b)

        def run_packed():
            return xnor_matmul(pa, pb)

        def run_float():
            out = np.empty((n, n))
            for j in range(n):
                out[:, j] = (a * b[j]).sum(axis=1)
            return out

        t_packed, t_float = [], []
        for _ in range(repeats):
            t0 = time.perf_counter()
            res_p = run_packed()
            t_packed.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            res_f = run_float()
            t_float.append(time.perf_counter() - t0)
        if not np.array_equal(res_p.astype(np.float64), res_f):
            raise AssertionError("packed and float GEMM disagree; benchmark aborted")
        med_p = float(np.median(t_packed))
        med_f = float(np.median(t_float))
        macs = float(n) ** 3
        rows.append({
            "n": n,
            "float_s": med_f,
            "packed_s": med_p,
            "ratio": med_f / med_p,
            "float_gmacs": macs / med_f / 1e9,
            "packed_gmacs": macs / med_p / 1e9,
        })
    return rows
