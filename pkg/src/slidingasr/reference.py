"""Whole-utterance reference pipeline with dense T x T attention.

``encode_full_attention`` has no band at all and serves as the oracle for
maximal windows.  ``encode_dense`` materializes the full score matrix but masks
it to the configured bands, so it reproduces the streaming model's outputs
while paying the quadratic, wait-for-everything cost of a global-attention
encoder.  ``pipeline_full`` is built on the latter.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import nn
from .adapter import adapt
from .config import ModelConfig
from .decoder import CrossMemory, decode_step, detokenize, start_state
from .encoder import _check, _check_compatible, _layer_weights
from .frontend import preprocess_batch


def _dense_layer(x: np.ndarray, lw: dict, heads: int, mask: np.ndarray | None) -> np.ndarray:
    h = nn.layer_norm(x, lw["attn_norm"])
    att = nn.dense_attention(nn.linear(h, lw["attn.q"]), nn.linear(h, lw["attn.k"]),
                             nn.linear(h, lw["attn.v"]), heads, mask)
    y = x + nn.linear(att, lw["attn.o"])
    return y + nn.plain_ffn(nn.layer_norm(y, lw["ffn_norm"]), lw["ffn.w1"], lw["ffn.w2"])


def encode_dense(features: np.ndarray, weights, cfg: ModelConfig | None = None,
                 banded: bool = True) -> np.ndarray:
    cfg = cfg or weights.cfg
    _check_compatible(weights.cfg, cfg)
    x = _check(features, cfg)
    t = x.shape[0]
    for i, (wl, wr) in enumerate(cfg.window_schedule):
        mask = nn.band_mask(t, nn.AttentionWindow(wl, wr)) if banded else None
        x = _dense_layer(x, _layer_weights(weights, i), cfg.num_heads_enc, mask)
    return nn.layer_norm(x, weights["enc.final_norm"])


def encode_full_attention(features: np.ndarray, weights, cfg: ModelConfig | None = None) -> np.ndarray:
    """Every frame attends to every frame in every layer."""
    return encode_dense(features, weights, cfg, banded=False)


@dataclass
class FullResult:
    tokens: list[int]
    text: str
    frontend_ms: float
    encoder_ms: float
    decoder_ms: float
    ttft_ms: float
    total_ms: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def pipeline_full(samples, weights, max_tokens: int = 16, clock=time.perf_counter) -> FullResult:
    """Frontend, dense encoder, adapter and greedy decode over a complete buffer.

    Nothing starts until the whole buffer is available, so the first token
    waits for the entire encode.
    """
    t0 = clock()
    feats = preprocess_batch(samples, weights)
    t1 = clock()
    enc = encode_dense(feats, weights)
    memory = CrossMemory.build(adapt(enc, 0, weights), weights)
    t2 = clock()
    state = start_state(memory, weights)
    first = None
    for _ in range(max_tokens):
        token, _ = decode_step(state, weights)
        if first is None:
            first = clock()
        if token == weights.cfg.eos_id:
            break
    t3 = clock()
    ms = 1000.0
    return FullResult(
        tokens=state.emitted,
        text=detokenize(state.emitted, weights.cfg.eos_id),
        frontend_ms=(t1 - t0) * ms,
        encoder_ms=(t2 - t1) * ms,
        decoder_ms=(t3 - t2) * ms,
        ttft_ms=(first - t0) * ms,
        total_ms=(t3 - t0) * ms,
    )

