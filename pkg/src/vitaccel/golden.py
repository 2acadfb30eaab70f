"""Integer reference implementations of every operator and post-op.

This module is the functional oracle: direct transcriptions of the
operator definitions with none of the simulator's tiling, scheduling or
vector-path structure.  The simulator must match these results bit for
bit; the two sides share only the arithmetic recipes (shift amounts,
table constants), never code.

Tensor layouts used throughout:

  activations   (b, c, x, y)    int8
  conv weights  (k, c, fx, fy)  int8
  dw weights    (c, fx, fy)     int8
  pw weights    (k, c)          int8
  gemm inputs   (b, rows, c)    int8, weights (k, c) or (b, k, c)
  accumulators  (b, k, x, y) / (b, rows, k)  int32

Accumulation runs in 64-bit and saturates to 32-bit at readout, so the
result is independent of accumulation order by construction.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .workload import (KIND_ADD, KIND_CONV, KIND_DWCONV, KIND_GEMM, KIND_PW,
                       LayerSpec, POST_ACT, POST_LAYERNORM, POST_REQUANT,
                       POST_SOFTMAX, PostOp)

__all__ = [
    "QTensor", "rshift_round", "idiv_round", "saturate32",
    "ref_conv2d", "ref_dwconv", "ref_pwconv", "ref_gemm", "ref_add",
    "ref_postprocess", "ref_write_back", "ref_layer",
]

INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1


@dataclass
class QTensor:
    """Quantized tensor: raw integer data plus its scale as (mult, shift)."""

    data: np.ndarray
    mult: int = 1
    shift: int = 0

    def __post_init__(self) -> None:
        if self.data.dtype not in (np.int8, np.int32, np.int64):
            raise ValueError(f"unsupported dtype {self.data.dtype}")
        if not (0 < self.mult < 1 << 31 and 0 <= self.shift <= 47):
            raise ValueError("quant params out of range")

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def elements(self) -> int:
        return int(self.data.size)


def rshift_round(v: np.ndarray, shift: int) -> np.ndarray:
    """Arithmetic right shift rounding half away from zero."""
    if shift == 0:
        return v.copy() if isinstance(v, np.ndarray) else v
    half = 1 << (shift - 1)
    v = np.asarray(v, dtype=np.int64)
    return np.where(v >= 0, (v + half) >> shift, -((-v + half) >> shift))


def idiv_round(a: int, n: int) -> int:
    """Integer division rounding half away from zero."""
    if a >= 0:
        return (a + n // 2) // n
    return -((-a + n // 2) // n)


def saturate32(acc: np.ndarray) -> np.ndarray:
    return np.clip(acc, INT32_MIN, INT32_MAX).astype(np.int32)


def _pad_input(x: np.ndarray, pad: Tuple[int, int]) -> np.ndarray:
    px, py = pad
    if px == 0 and py == 0:
        return x.astype(np.int64)
    return np.pad(x.astype(np.int64),
                  ((0, 0), (0, 0), (px, px), (py, py)))


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


# ---------------------------------------------------------------------------
# Operators.
# ---------------------------------------------------------------------------

def ref_conv2d(inp: QTensor, weights: QTensor, spec: LayerSpec) -> QTensor:
    """Direct convolution: loop over output channel, input channel and
    filter tap; zero padding; any stride."""
    d = spec.dims
    sx, sy = spec.stride
    ix, iy = spec.in_spatial()
    _check(inp.data.shape == (d.b, d.c, ix, iy),
           f"{spec.name}: input shape {inp.data.shape}")
    _check(weights.data.shape == (d.k, d.c, d.fx, d.fy),
           f"{spec.name}: weight shape {weights.data.shape}")
    x = _pad_input(inp.data, spec.pad)
    w = weights.data.astype(np.int64)
    out = np.zeros((d.b, d.k, d.ox, d.oy), dtype=np.int64)
    for bi in range(d.b):
        for ki in range(d.k):
            acc = np.zeros((d.ox, d.oy), dtype=np.int64)
            for ci in range(d.c):
                for fx in range(d.fx):
                    for fy in range(d.fy):
                        patch = x[bi, ci,
                                  fx:fx + sx * d.ox:sx,
                                  fy:fy + sy * d.oy:sy]
                        acc += w[ki, ci, fx, fy] * patch
            out[bi, ki] = acc
    return QTensor(saturate32(out))


def ref_dwconv(inp: QTensor, weights: QTensor, spec: LayerSpec) -> QTensor:
    d = spec.dims
    sx, sy = spec.stride
    ix, iy = spec.in_spatial()
    _check(inp.data.shape == (d.b, d.c, ix, iy),
           f"{spec.name}: input shape {inp.data.shape}")
    _check(weights.data.shape == (d.c, d.fx, d.fy),
           f"{spec.name}: weight shape {weights.data.shape}")
    x = _pad_input(inp.data, spec.pad)
    w = weights.data.astype(np.int64)
    out = np.zeros((d.b, d.c, d.ox, d.oy), dtype=np.int64)
    for bi in range(d.b):
        for ci in range(d.c):
            acc = np.zeros((d.ox, d.oy), dtype=np.int64)
            for fx in range(d.fx):
                for fy in range(d.fy):
                    patch = x[bi, ci,
                              fx:fx + sx * d.ox:sx,
                              fy:fy + sy * d.oy:sy]
                    acc += w[ci, fx, fy] * patch
            out[bi, ci] = acc
    return QTensor(saturate32(out))


def ref_pwconv(inp: QTensor, weights: QTensor, spec: LayerSpec) -> QTensor:
    d = spec.dims
    _check(inp.data.shape == (d.b, d.c, d.ox, d.oy),
           f"{spec.name}: input shape {inp.data.shape}")
    _check(weights.data.shape == (d.k, d.c),
           f"{spec.name}: weight shape {weights.data.shape}")
    x = inp.data.astype(np.int64)
    w = weights.data.astype(np.int64)
    out = np.zeros((d.b, d.k, d.ox, d.oy), dtype=np.int64)
    for bi in range(d.b):
        for ki in range(d.k):
            acc = np.zeros((d.ox, d.oy), dtype=np.int64)
            for ci in range(d.c):
                acc += w[ki, ci] * x[bi, ci]
            out[bi, ki] = acc
    return QTensor(saturate32(out))


def ref_gemm(inp: QTensor, weights: QTensor, spec: LayerSpec) -> QTensor:
    """out[b, r, k] = sum_c in[b, r, c] * w[(b,) k, c]; ``rows`` is the
    ox extent of the layer."""
    d = spec.dims
    rows = d.ox
    _check(inp.data.shape == (d.b, rows, d.c),
           f"{spec.name}: input shape {inp.data.shape}")
    _check(weights.data.shape in ((d.k, d.c), (d.b, d.k, d.c)),
           f"{spec.name}: weight shape {weights.data.shape}")
    x = inp.data.astype(np.int64)
    w = weights.data.astype(np.int64)
    shared = w.ndim == 2
    out = np.zeros((d.b, rows, d.k), dtype=np.int64)
    for bi in range(d.b):
        wb = w if shared else w[bi]
        for ki in range(d.k):
            out[bi, :, ki] = x[bi] @ wb[ki]
    return QTensor(saturate32(out))


def ref_add(a: QTensor, b: QTensor, spec: LayerSpec) -> QTensor:
    _check(a.data.shape == b.data.shape,
           f"{spec.name}: operand shapes differ")
    return QTensor(saturate32(a.data.astype(np.int64)
                              + b.data.astype(np.int64)))


# ---------------------------------------------------------------------------
# Post-processing recipes.
#
# Each operates on one output pixel's channel vector of 32-bit values.
# ---------------------------------------------------------------------------

# Chord endpoints of 2^(j/16) in Q16, j = 0..16.
_EXP2_TAB = [
    65536, 68438, 71468, 74632, 77936, 81386, 84990, 88752, 92682,
    96785, 101070, 105545, 110218, 115098, 120194, 125515, 131072,
]


def _requant(vec: np.ndarray, mult: int, shift: int) -> np.ndarray:
    v = rshift_round(vec.astype(np.int64) * mult, shift)
    return np.clip(v, -127, 127)


def _layernorm(vec: np.ndarray, out_mult: int, out_shift: int,
               gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Integer normalization of one channel vector.

    Mean and mean square use round-half-away division; the reciprocal
    square root runs in Q15 from a linear seed over the normalized
    mantissa with two Newton steps.  gamma is Q12, beta Q16; the final
    (out_mult, out_shift) stage scales the Q16 result into pixel range.
    """
    n = vec.size
    x = vec.astype(np.int64)
    mu = idiv_round(int(x.sum()), n)
    d = x - mu
    var = idiv_round(int((d * d).sum()), n)
    if var == 0:
        z_q16 = np.zeros_like(d)
    else:
        k = var.bit_length()
        k += k & 1
        if k <= 30:
            m_q30 = var << (30 - k)
        else:
            m_q30 = int(rshift_round(np.int64(var), k - 30))
        y_q15 = 72309 - ((43691 * m_q30) >> 30)
        for _ in range(2):
            t = (m_q30 * y_q15 * y_q15) >> 45
            y_q15 = (y_q15 * (3 * (1 << 15) - t)) >> 16
        z_q16 = rshift_round(d * y_q15, k // 2 - 1)
    w_q16 = rshift_round(z_q16 * gamma.astype(np.int64), 12) \
        + beta.astype(np.int64)
    return rshift_round(w_q16 * out_mult, out_shift)


def _exp2_q16(neg: int) -> int:
    """2^(-neg/256) in Q16 for neg >= 0, by chord interpolation."""
    e, f = neg >> 8, neg & 255
    if f == 0:
        base = 1 << 16
    else:
        up = 256 - f
        seg, off = up >> 4, up & 15
        lo = _EXP2_TAB[seg]
        hi = _EXP2_TAB[seg + 1]
        base = (lo + (((hi - lo) * off) >> 4)) >> 1
    return base >> e if e < 48 else 0


def _softmax(vec: np.ndarray, in_mult: int, in_shift: int,
             out_mult: int, out_shift: int) -> np.ndarray:
    """Integer softmax over one channel vector.

    Logits scale into a Q8 log2 domain, weights come from the chord
    table, and the normalizer is a single Q31 reciprocal of the weight
    sum."""
    t = rshift_round(vec.astype(np.int64) * in_mult, in_shift)
    t_max = int(t.max())
    w = np.array([_exp2_q16(int(t_max - ti)) for ti in t], dtype=np.int64)
    total = int(w.sum())
    recip = idiv_round(1 << 31, total)
    p_q16 = rshift_round(w * recip, 15)
    out = rshift_round(p_q16 * out_mult, out_shift)
    return np.clip(out, -127, 127)


def ref_postprocess(vec: np.ndarray, op: PostOp,
                    gamma: Optional[np.ndarray] = None,
                    beta: Optional[np.ndarray] = None) -> np.ndarray:
    """Apply one post-op stage to one channel vector (int64 domain)."""
    if op.kind == POST_ACT:
        return np.maximum(vec, 0)
    if op.kind == POST_REQUANT:
        return _requant(vec, *op.params)
    if op.kind == POST_LAYERNORM:
        _check(gamma is not None and beta is not None,
               "layernorm needs gamma/beta tables")
        _check(gamma.size == vec.size and beta.size == vec.size,
               "gamma/beta length mismatch")
        return _layernorm(vec, *op.params, gamma=gamma, beta=beta)
    if op.kind == POST_SOFTMAX:
        return _softmax(vec, *op.params)
    raise ValueError(f"unknown post-op {op.kind}")


def ref_write_back(acc: QTensor, spec: LayerSpec,
                   gamma: Optional[np.ndarray] = None,
                   beta: Optional[np.ndarray] = None) -> QTensor:
    """Run the full post chain over every output pixel's channel vector.

    Returns int8 when the chain requantizes (rq or softmax), otherwise
    the 32-bit result of the applied stages.
    """
    data = acc.data
    if spec.kind == KIND_GEMM:
        vectors = data.reshape(-1, data.shape[-1])
    else:
        # (b, k, x, y) -> pixels x channels
        b, k = data.shape[0], data.shape[1]
        vectors = data.transpose(0, 2, 3, 1).reshape(-1, k)
    out = vectors.astype(np.int64)
    for op in spec.post_ops:
        rows = [ref_postprocess(out[i], op, gamma, beta)
                for i in range(out.shape[0])]
        out = np.stack(rows).astype(np.int64)
    narrow = spec.out_bits() == 8
    out = out.astype(np.int8 if narrow else np.int32)
    if spec.kind == KIND_GEMM:
        result = out.reshape(data.shape)
    else:
        b, k = data.shape[0], data.shape[1]
        result = out.reshape(b, data.shape[2], data.shape[3], k) \
                    .transpose(0, 3, 1, 2)
    return QTensor(result)


_OPERATORS = {
    KIND_CONV: ref_conv2d,
    KIND_DWCONV: ref_dwconv,
    KIND_PW: ref_pwconv,
    KIND_GEMM: ref_gemm,
}


def ref_layer(spec: LayerSpec, inputs: Sequence[QTensor],
              weights: Optional[QTensor] = None,
              gamma: Optional[np.ndarray] = None,
              beta: Optional[np.ndarray] = None,
              apply_post: bool = True) -> QTensor:
    """One full layer: operator plus (optionally) its post chain."""
    if spec.kind == KIND_ADD:
        acc = ref_add(inputs[0], inputs[1], spec)
    else:
        _check(weights is not None, f"{spec.name}: operator needs weights")
        acc = _OPERATORS[spec.kind](inputs[0], weights, spec)
    if not apply_post or not spec.post_ops:
        return acc
    return ref_write_back(acc, spec, gamma, beta)
