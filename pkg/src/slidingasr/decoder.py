"""Autoregressive decoder: RoPE self-attention with a KV cache, full cross-attention
to adapter features, SwiGLU feed-forward, tied output embedding, greedy search."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .config import ModelConfig


class DecodeError(ValueError):
    pass


class _Growable:
    """Append-only [n, d] float32 array with amortized O(1) appends."""

    def __init__(self, d: int, capacity: int = 64):
        self._buf = np.empty((capacity, d), dtype=np.float32)
        self.n = 0

    def append(self, rows: np.ndarray) -> None:
        need = self.n + rows.shape[0]
        if need > self._buf.shape[0]:
            grown = np.empty((max(need, 2 * self._buf.shape[0]), self._buf.shape[1]), np.float32)
            grown[: self.n] = self._buf[: self.n]
            self._buf = grown
        self._buf[self.n:need] = rows
        self.n = need

    def view(self) -> np.ndarray:
        return self._buf[: self.n]

    def copy(self) -> _Growable:
        g = _Growable(self._buf.shape[1], max(self.n, 1))
        g.append(self.view())
        return g


def _layer(weights, i: int) -> dict[str, np.ndarray]:
    p = f"dec.layer{i}."
    return {k[len(p):]: v for k, v in weights.items() if k.startswith(p)}


class CrossMemory:
    """Per-layer cross-attention keys/values of the adapter frames seen so far.

    Frames are only ever appended, so finalized frames are projected once.
    """

    def __init__(self, weights):
        self.weights = weights
        cfg = weights.cfg
        self._layers = [_layer(weights, i) for i in range(cfg.dec_layers)]
        self.keys = [_Growable(cfg.dec_dim) for _ in range(cfg.dec_layers)]
        self.values = [_Growable(cfg.dec_dim) for _ in range(cfg.dec_layers)]

    def __len__(self) -> int:
        return self.keys[0].n if self.keys else 0

    def append(self, features: np.ndarray) -> CrossMemory:
        cfg = self.weights.cfg
        feats = np.asarray(features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[1] != cfg.dec_dim:
            raise DecodeError(f"cross features must be [T, {cfg.dec_dim}], got {feats.shape}")
        if feats.shape[0] == 0:
            return self
        start = len(self)
        for lw, ks, vs in zip(self._layers, self.keys, self.values):
            k = nn.linear(feats, lw["cross_attn.k"])
            if cfg.rope_cross_attention:
                k = _rope_heads(k, np.arange(start, start + feats.shape[0]), cfg)
            ks.append(k)
            vs.append(nn.linear(feats, lw["cross_attn.v"]))
        return self

    def extended(self, features: np.ndarray) -> CrossMemory:
        """A copy with ``features`` appended; ``self`` is left untouched."""
        other = CrossMemory.__new__(CrossMemory)
        other.weights, other._layers = self.weights, self._layers
        other.keys = [g.copy() for g in self.keys]
        other.values = [g.copy() for g in self.values]
        return other.append(features)

    @classmethod
    def build(cls, features: np.ndarray, weights) -> CrossMemory:
        return cls(weights).append(features)


def _rope_heads(x: np.ndarray, positions, cfg: ModelConfig) -> np.ndarray:
    h = nn.split_heads(x, cfg.num_heads_dec)
    return nn.rope_rotate(h, positions, cfg.rope_base).reshape(x.shape)


@dataclass
class DecodeState:
    """Tokens so far (starting with BOS) and the self-attention cache.

    The cache holds every token except the newest, which the next
    :func:`decode_step` consumes.
    """

    memory: CrossMemory
    tokens: list[int]
    k_cache: list[_Growable] = field(repr=False)
    v_cache: list[_Growable] = field(repr=False)

    @property
    def cache_len(self) -> int:
        return self.k_cache[0].n if self.k_cache else 0

    @property
    def emitted(self) -> list[int]:
        return self.tokens[1:]


def start_state(memory: CrossMemory | np.ndarray, weights, prompt: list[int] | None = None) -> DecodeState:
    cfg = weights.cfg
    if not isinstance(memory, CrossMemory):
        memory = CrossMemory.build(memory, weights)
    return DecodeState(
        memory=memory,
        tokens=list(prompt) if prompt else [cfg.bos_id],
        k_cache=[_Growable(cfg.dec_dim) for _ in range(cfg.dec_layers)],
        v_cache=[_Growable(cfg.dec_dim) for _ in range(cfg.dec_layers)],
    )


def _embed(weights, tokens) -> np.ndarray:
    table = weights["dec.embed"]
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DecodeError(f"token id out of range [0, {table.shape[0]})")
    return table[ids]


def _logits(x: np.ndarray, weights) -> np.ndarray:
    # Tied output projection.  Memory-bound, so it skips linear()'s row padding;
    # a single row takes the gemv path against the embedding table directly.
    h = nn.layer_norm(x, weights["dec.final_norm"])
    table = weights["dec.embed"]
    nn._tally("linear", h.shape[0] * table.shape[0] * table.shape[1])
    if h.shape[0] == 1:
        return (table @ h[0])[None, :]
    return h @ table.T


def _cross(h: np.ndarray, lw, memory: CrossMemory, i: int, positions, cfg: ModelConfig,
           stable: bool = True) -> np.ndarray:
    q = nn.linear(h, lw["cross_attn.q"], stable=stable)
    if cfg.rope_cross_attention:
        q = _rope_heads(q, positions, cfg)
    att = nn.dense_attention(q, memory.keys[i].view(), memory.values[i].view(), cfg.num_heads_dec)
    return nn.linear(att, lw["cross_attn.o"], stable=stable)


def decode_step(state: DecodeState, weights) -> tuple[int, np.ndarray]:
    """Consume the newest token, append the greedy next token; returns (token, logits)."""
    cfg = weights.cfg
    if len(state.memory) == 0:
        raise DecodeError("decode needs at least one cross-attention frame")
    if not state.tokens or state.cache_len != len(state.tokens) - 1:
        raise DecodeError(
            f"cache holds {state.cache_len} positions for {len(state.tokens)} tokens"
        )
    pos = len(state.tokens) - 1
    x = _embed(weights, state.tokens[-1:])
    # One row per step on every path, so the fast gemv kernels are safe here.
    fast = dict(stable=False)
    for i in range(cfg.dec_layers):
        lw = state.memory._layers[i]
        h = nn.layer_norm(x, lw["self_norm"])
        q = _rope_heads(nn.linear(h, lw["self_attn.q"], **fast), [pos], cfg)
        k = _rope_heads(nn.linear(h, lw["self_attn.k"], **fast), [pos], cfg)
        state.k_cache[i].append(k)
        state.v_cache[i].append(nn.linear(h, lw["self_attn.v"], **fast))
        att = nn.dense_attention(q, state.k_cache[i].view(), state.v_cache[i].view(), cfg.num_heads_dec)
        x = x + nn.linear(att, lw["self_attn.o"], **fast)
        x = x + _cross(nn.layer_norm(x, lw["cross_norm"]), lw, state.memory, i, [pos], cfg, **fast)
        h = nn.layer_norm(x, lw["ffn_norm"])
        x = x + nn.swiglu_ffn(h, lw["ffn.gate"], lw["ffn.up"], lw["ffn.down"], **fast)
    logits = _logits(x, weights)[0]
    token = int(np.argmax(logits))
    state.tokens.append(token)
    return token, logits


def decode_batch_logits(tokens, memory: CrossMemory | np.ndarray, weights) -> np.ndarray:
    """Logits ``[n, vocab]`` for every prefix of ``tokens`` in one causal pass (no cache)."""
    cfg = weights.cfg
    if not isinstance(memory, CrossMemory):
        memory = CrossMemory.build(memory, weights)
    if len(memory) == 0:
        raise DecodeError("decode needs at least one cross-attention frame")
    n = len(tokens)
    positions = np.arange(n)
    causal = np.tril(np.ones((n, n), dtype=bool))
    x = _embed(weights, tokens)
    for i in range(cfg.dec_layers):
        lw = memory._layers[i]
        h = nn.layer_norm(x, lw["self_norm"])
        q = _rope_heads(nn.linear(h, lw["self_attn.q"]), positions, cfg)
        k = _rope_heads(nn.linear(h, lw["self_attn.k"]), positions, cfg)
        v = nn.linear(h, lw["self_attn.v"])
        x = x + nn.linear(nn.dense_attention(q, k, v, cfg.num_heads_dec, causal), lw["self_attn.o"])
        x = x + _cross(nn.layer_norm(x, lw["cross_norm"]), lw, memory, i, positions, cfg)
        x = x + nn.swiglu_ffn(nn.layer_norm(x, lw["ffn_norm"]), lw["ffn.gate"], lw["ffn.up"], lw["ffn.down"])
    return _logits(x, weights)


def decode_greedy(memory: CrossMemory | np.ndarray, weights, max_tokens: int,
                  eos_id: int | None = None) -> list[int]:
    """Greedy tokens (without BOS), stopping after EOS or ``max_tokens``."""
    if max_tokens < 1:
        raise DecodeError("max_tokens must be >= 1")
    eos = weights.cfg.eos_id if eos_id is None else eos_id
    state = start_state(memory, weights)
    for _ in range(max_tokens):
        token, _ = decode_step(state, weights)
        if token == eos:
            break
    return state.emitted


def decode_greedy_batch(memory: CrossMemory | np.ndarray, weights, max_tokens: int,
                        eos_id: int | None = None) -> list[int]:
    """Same search as :func:`decode_greedy` but re-running the full prefix every step."""
    cfg = weights.cfg
    eos = cfg.eos_id if eos_id is None else eos_id
    if not isinstance(memory, CrossMemory):
        memory = CrossMemory.build(memory, weights)
    tokens = [cfg.bos_id]
    for _ in range(max_tokens):
        token = int(np.argmax(decode_batch_logits(tokens, memory, weights)[-1]))
        tokens.append(token)
        if token == eos:
            break
    return tokens[1:]


BYTE_OFFSET = 3


def detokenize(tokens, eos_id: int = 2) -> str:
    """Byte-level fallback: ids 3..258 are raw bytes, other ids render as ``<id>``."""
    out: list[str] = []
    pending = bytearray()
    for t in tokens:
        if t == eos_id:
            break
        if BYTE_OFFSET <= t < BYTE_OFFSET + 256:
            pending.append(t - BYTE_OFFSET)
            continue
        if pending:
            out.append(pending.decode("utf-8", errors="replace"))
            pending.clear()
        out.append(f"<{t}>")
    if pending:
        out.append(pending.decode("utf-8", errors="replace"))
    return "".join(out)
