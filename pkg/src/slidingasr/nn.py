"""Numeric primitives on float32 numpy arrays.

Matrix products go through :func:`linear`, whose per-row result does not
depend on how many rows are batched together.  Streaming and full-sequence code
paths rely on that to agree bit-for-bit.

Work is tallied in multiply-accumulates by an optional :class:`OpCounter`
installed with :func:`counting`.
"""

from __future__ import annotations

import contextlib
import contextvars
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

LN_EPS = 1e-5
MASK_FILL = -1e9
# Row-stability padding: BLAS routes short or tiny products (gemv, the small-matrix
# kernels) through code that rounds differently from its blocked gemm.  Padding
# to at least this many rows and multiply-accumulates keeps every call on gemm.
STABLE_MIN_ROWS = 4
STABLE_MIN_MACS = 2_000_000

_counter: contextvars.ContextVar[OpCounter | None] = contextvars.ContextVar(
    "slidingasr_op_counter", default=None
)


class OpCounter(Counter):
    """Multiply-accumulate tallies keyed by category (``attention``, ``linear``, ``conv``)."""

    def ops(self, category: str | None = None) -> int:
        """Operations (2 per MAC), the unit the cost model uses."""
        macs = sum(self.values()) if category is None else self[category]
        return 2 * macs


@contextlib.contextmanager
def counting() -> Iterator[OpCounter]:
    counter = OpCounter()
    token = _counter.set(counter)
    try:
        yield counter
    finally:
        _counter.reset(token)


def _tally(category: str, macs: int) -> None:
    c = _counter.get()
    if c is not None:
        c[category] += int(macs)


@dataclass(frozen=True)
class AttentionWindow:
    w_left: int
    w_right: int

    def __post_init__(self):
        if self.w_left < 0 or self.w_right < 0:
            raise ValueError(f"window sizes must be >= 0, got {self}")

    @property
    def width(self) -> int:
        return self.w_left + self.w_right + 1


def linear(x: np.ndarray, w: np.ndarray, bias: np.ndarray | None = None,
           stable: bool = True) -> np.ndarray:
    """``x @ w + bias`` over the last axis.

    With ``stable`` (the default) each output row is bit-identical however many
    rows are batched.  ``stable=False`` lets single rows use gemv, several
    times faster, for callers whose row count never varies.
    """
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear: input dim {x.shape[-1]} != weight rows {w.shape[0]}")
    # Overlapping-window views are not BLAS-compatible; numpy would silently
    # fall back to a slow loop with different rounding.
    x2 = np.ascontiguousarray(x.reshape(-1, x.shape[-1]))
    _tally("linear", x2.shape[0] * w.shape[0] * w.shape[1])
    m = x2.shape[0]
    rows = max(STABLE_MIN_ROWS, -(-STABLE_MIN_MACS // (w.shape[0] * w.shape[1])))
    if stable and m < rows:
        pad = np.zeros((rows - m, x2.shape[1]), dtype=x2.dtype)
        y = (np.concatenate([x2, pad]) @ w)[:m]
    else:
        y = x2 @ w
    if bias is not None:
        y = y + bias
    return y.reshape(*x.shape[:-1], w.shape[1]).astype(np.float32, copy=False)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def layer_norm(x: np.ndarray, gain: np.ndarray | None = None, eps: float = LN_EPS) -> np.ndarray:
    if gain is not None and gain.shape != x.shape[-1:]:
        raise ValueError(f"layer_norm: gain shape {gain.shape} vs input {x.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    y = xc / np.sqrt(var + np.float32(eps))
    if gain is not None:
        y = y * gain
    return y.astype(np.float32, copy=False)


def gelu(x: np.ndarray) -> np.ndarray:
    c = np.float32(np.sqrt(2.0 / np.pi))
    return (0.5 * x * (1.0 + np.tanh(c * (x + np.float32(0.044715) * x * x * x)))).astype(
        np.float32, copy=False
    )


def silu(x: np.ndarray) -> np.ndarray:
    return (x / (1.0 + np.exp(-x))).astype(np.float32, copy=False)


def plain_ffn(x: np.ndarray, w1: np.ndarray, w2: np.ndarray,
              activation: Callable[[np.ndarray], np.ndarray] = gelu) -> np.ndarray:
    return linear(activation(linear(x, w1)), w2)


def swiglu_ffn(x: np.ndarray, w_gate: np.ndarray, w_up: np.ndarray, w_down: np.ndarray,
               stable: bool = True) -> np.ndarray:
    if w_gate.shape != w_up.shape:
        raise ValueError(f"swiglu: gate {w_gate.shape} and up {w_up.shape} differ")
    gate = silu(linear(x, w_gate, stable=stable))
    return linear(gate * linear(x, w_up, stable=stable), w_down, stable=stable)


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    t, d = x.shape
    if d % heads:
        raise ValueError(f"dim {d} not divisible by {heads} heads")
    return x.reshape(t, heads, d // heads)


def banded_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, heads: int,
                     win: AttentionWindow, q_start: int = 0) -> np.ndarray:
    """Multi-head attention where query row i sits at key position ``q_start + i`` and
    sees keys in ``[pos - w_left, pos + w_right]`` clipped to ``[0, len(k))``.

    Only the ``w_left + w_right + 1`` band slots per query are ever multiplied, so
    the work is O(T * width) rather than O(T^2).
    """
    if q.ndim != 2 or k.shape != v.shape or q.shape[1] != k.shape[1]:
        raise ValueError(f"banded_attention: shape mismatch q{q.shape} k{k.shape} v{v.shape}")
    tq, d = q.shape
    tk = k.shape[0]
    if tq < 1 or tk < 1:
        raise ValueError("banded_attention needs at least one query and one key")
    if q_start < 0 or q_start + tq > tk:
        raise ValueError(f"query rows [{q_start}, {q_start + tq}) fall outside {tk} keys")
    dh = d // heads
    width = win.width
    qh = split_heads(q, heads)
    pad = ((win.w_left, win.w_right), (0, 0), (0, 0))
    kp = np.pad(split_heads(k, heads), pad)
    vp = np.pad(split_heads(v, heads), pad)
    # Row i of the padded arrays is key position i - w_left; the window of query
    # position p therefore starts at padded row p.
    kw = np.lib.stride_tricks.sliding_window_view(kp, width, axis=0)[q_start:q_start + tq]
    vw = np.lib.stride_tricks.sliding_window_view(vp, width, axis=0)[q_start:q_start + tq]
    logits = np.einsum("thd,thdw->thw", qh, kw) * np.float32(1.0 / np.sqrt(dh))
    pos = np.arange(q_start, q_start + tq)[:, None] + np.arange(width)[None, :] - win.w_left
    valid = (pos >= 0) & (pos < tk)
    logits = np.where(valid[:, None, :], logits, -np.inf)
    probs = softmax(logits, axis=-1).astype(np.float32)
    out = np.einsum("thw,thdw->thd", probs, vw)
    _tally("attention", 2 * tq * width * d)
    return out.reshape(tq, d).astype(np.float32, copy=False)


def dense_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, heads: int,
                    mask: np.ndarray | None = None) -> np.ndarray:
    """Full T_q x T_k attention; ``mask`` (bool, True = allowed) becomes an additive -1e9."""
    if q.ndim != 2 or k.shape != v.shape or q.shape[1] != k.shape[1]:
        raise ValueError(f"dense_attention: shape mismatch q{q.shape} k{k.shape} v{v.shape}")
    tq, d = q.shape
    tk = k.shape[0]
    dh = d // heads
    qh = split_heads(q, heads).transpose(1, 0, 2)
    kh = split_heads(k, heads).transpose(1, 2, 0)
    vh = split_heads(v, heads).transpose(1, 0, 2)
    logits = (qh @ kh) * np.float32(1.0 / np.sqrt(dh))
    if mask is not None:
        logits = logits + np.where(mask, np.float32(0.0), np.float32(MASK_FILL))[None]
    out = softmax(logits, axis=-1).astype(np.float32) @ vh
    _tally("attention", 2 * tq * tk * d)
    return out.transpose(1, 0, 2).reshape(tq, d).astype(np.float32, copy=False)


def band_mask(t: int, win: AttentionWindow) -> np.ndarray:
    i = np.arange(t)[:, None]
    j = np.arange(t)[None, :]
    return (j >= i - win.w_left) & (j <= i + win.w_right)


def causal_conv1d(x: np.ndarray, kernel: np.ndarray, stride: int,
                  bias: np.ndarray | None = None) -> np.ndarray:
    """Strided convolution whose output j reads inputs ``j*stride - k + 1 .. j*stride``.

    Missing inputs before the start are zeros; the output has ``ceil(T / stride)`` frames.
    """
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("causal_conv1d: empty input")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    k, c_in, c_out = kernel.shape
    if k < 1 or x.shape[1] != c_in:
        raise ValueError(f"causal_conv1d: input channels {x.shape[1]} vs kernel {kernel.shape}")
    t = x.shape[0]
    t_out = -(-t // stride)
    xp = np.concatenate([np.zeros((k - 1, c_in), dtype=np.float32), x.astype(np.float32)])
    # Output j covers padded rows [j*stride, j*stride + k).
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)[::stride][:t_out]
    cols = windows.transpose(0, 2, 1).reshape(t_out, k * c_in)
    with _suspended():
        y = linear(cols, kernel.reshape(k * c_in, c_out), bias)
    _tally("conv", t_out * k * c_in * c_out)
    return y


@contextlib.contextmanager
def _suspended():
    token = _counter.set(None)
    try:
        yield
    finally:
        _counter.reset(token)


def rope_rotate(x: np.ndarray, positions, base: float = 10000.0) -> np.ndarray:
    """Rotate consecutive pairs (x[2i], x[2i+1]) by ``position * base**(-2i/d)``.

    ``x`` is ``[T, d_head]`` or ``[T, heads, d_head]``; ``positions`` has length T.
    """
    dh = x.shape[-1]
    if dh % 2:
        raise ValueError(f"rope needs an even head dim, got {dh}")
    pos = np.asarray(positions, dtype=np.float64)
    if pos.shape != (x.shape[0],):
        raise ValueError(f"{len(pos)} positions for {x.shape[0]} rows")
    inv_freq = base ** (-np.arange(0, dh, 2, dtype=np.float64) / dh)
    ang = pos[:, None] * inv_freq[None, :]
    cos = np.cos(ang).astype(np.float32)
    sin = np.sin(ang).astype(np.float32)
    if x.ndim == 3:
        cos, sin = cos[:, None, :], sin[:, None, :]
    x1, x2 = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x, dtype=np.float32)
    out[..., 0::2] = x1 * cos - x2 * sin
    out[..., 1::2] = x1 * sin + x2 * cos
    return out
