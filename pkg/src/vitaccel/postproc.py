"""Vectorized write-back post-processing for the simulator.

Implements the same integer recipes as the reference module but over
whole pixel blocks at once: every function takes a (pixels, channels)
int64 matrix and returns one.  Kept deliberately separate from
``golden`` so the two sides only share the published recipe constants,
not code.
"""

from typing import Optional, Sequence

import numpy as np

from .workload import (POST_ACT, POST_LAYERNORM, POST_REQUANT,
                       POST_SOFTMAX, PostOp)

__all__ = [
    "relu_block", "requant_block", "layernorm_block", "softmax_block",
    "apply_postops",
]

# Chord endpoints of 2^(j/16) in Q16, j = 0..16.
_EXP2_CHORDS = np.array([
    65536, 68438, 71468, 74632, 77936, 81386, 84990, 88752, 92682,
    96785, 101070, 105545, 110218, 115098, 120194, 125515, 131072,
], dtype=np.int64)


def _shift_round(v: np.ndarray, shift) -> np.ndarray:
    """Right shift rounding half away from zero; shift may be per-row."""
    v = np.asarray(v, dtype=np.int64)
    s = np.broadcast_to(np.asarray(shift, dtype=np.int64), v.shape)
    half = np.where(s > 0, np.int64(1) << np.maximum(s - 1, 0), 0)
    mag = (np.abs(v) + half) >> s
    return np.where(v < 0, -mag, mag)


def _div_round(a: np.ndarray, n) -> np.ndarray:
    """Divide rounding half away from zero; n positive, per-row ok."""
    a = np.asarray(a, dtype=np.int64)
    n = np.asarray(n, dtype=np.int64)
    mag = (np.abs(a) + n // 2) // n
    return np.where(a < 0, -mag, mag)


def _bit_length(v: np.ndarray) -> np.ndarray:
    """Element-wise bit length of non-negative int64 values."""
    out = np.zeros(v.shape, dtype=np.int64)
    cur = v.astype(np.int64).copy()
    while np.any(cur):
        out += cur > 0
        cur >>= 1
    return out


def relu_block(mat: np.ndarray) -> np.ndarray:
    return np.maximum(mat, 0)


def requant_block(mat: np.ndarray, mult: int, shift: int) -> np.ndarray:
    return np.clip(_shift_round(mat * np.int64(mult), shift), -127, 127)


def layernorm_block(mat: np.ndarray, out_mult: int, out_shift: int,
                    gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Normalize each row over its channel axis.

    Reciprocal square root of the variance runs in Q15: the variance is
    normalized to a Q30 mantissa in [0.25, 1), seeded with a linear fit
    and refined by two Newton steps.  gamma is Q12, beta Q16.
    """
    rows, n = mat.shape
    x = mat.astype(np.int64)
    mean = _div_round(x.sum(axis=1), n)
    d = x - mean[:, None]
    var = _div_round((d * d).sum(axis=1), n)

    k = _bit_length(var)
    k += k & 1
    lift = np.maximum(30 - k, 0)
    drop = np.maximum(k - 30, 0)
    m_q30 = _shift_round(var << lift, drop)
    y = 72309 - ((np.int64(43691) * m_q30) >> 30)
    for _ in range(2):
        t = (m_q30 * y * y) >> 45
        y = (y * (3 * (1 << 15) - t)) >> 16
    z_q16 = _shift_round(d * y[:, None],
                         np.maximum(k // 2 - 1, 0)[:, None])
    z_q16 = np.where((var == 0)[:, None], 0, z_q16)

    w_q16 = _shift_round(z_q16 * gamma.astype(np.int64)[None, :], 12) \
        + beta.astype(np.int64)[None, :]
    return _shift_round(w_q16 * np.int64(out_mult), out_shift)


def softmax_block(mat: np.ndarray, in_mult: int, in_shift: int,
                  out_mult: int, out_shift: int) -> np.ndarray:
    """Row-wise integer softmax.

    Logits move into a Q8 log2 domain, the exponential comes from chord
    interpolation on a 16-segment table, and each row normalizes by a
    Q31 reciprocal of its weight sum.
    """
    t = _shift_round(mat.astype(np.int64) * np.int64(in_mult), in_shift)
    neg = t.max(axis=1, keepdims=True) - t          # >= 0
    e = neg >> 8
    f = neg & 255
    up = 256 - f
    seg = up >> 4
    off = up & 15
    lo = _EXP2_CHORDS[seg]
    hi = _EXP2_CHORDS[np.minimum(seg + 1, 16)]
    val = lo + (((hi - lo) * off) >> 4)
    base = np.where(f == 0, np.int64(1 << 16), val >> 1)
    w = base >> np.minimum(e, 32)
    total = w.sum(axis=1, keepdims=True)
    recip = _div_round(np.int64(1) << 31, total)
    p_q16 = _shift_round(w * recip, 15)
    return np.clip(_shift_round(p_q16 * np.int64(out_mult), out_shift),
                   -127, 127)


def apply_postops(mat: np.ndarray, ops: Sequence[PostOp],
                  gamma: Optional[np.ndarray] = None,
                  beta: Optional[np.ndarray] = None) -> np.ndarray:
    """Run a post chain over a (pixels, channels) block of accumulators."""
    out = mat.astype(np.int64)
    for op in ops:
        if op.kind == POST_ACT:
            out = relu_block(out)
        elif op.kind == POST_REQUANT:
            out = requant_block(out, *op.params)
        elif op.kind == POST_LAYERNORM:
            if gamma is None or beta is None:
                raise ValueError("layernorm needs gamma/beta tables")
            if gamma.size != out.shape[1] or beta.size != out.shape[1]:
                raise ValueError("gamma/beta length mismatch")
            out = layernorm_block(out, *op.params, gamma=gamma, beta=beta)
        elif op.kind == POST_SOFTMAX:
            out = softmax_block(out, *op.params)
        else:
            raise ValueError(f"unknown post-op {op.kind}")
    return out
