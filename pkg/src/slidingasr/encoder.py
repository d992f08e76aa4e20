"""Position-free sliding-window encoder, full-sequence and streaming.

The encoder carries no positional information at all: each layer applies the
same function to every local window, so outputs are shift-equivariant away
from the sequence edges.

Streaming keeps, per layer, the finalized inputs still inside some future
query's left window.  A layer's output at ``t`` is final once its inputs up to
``t + w_right`` are final, so the finalized horizon trails the ingested frame
count by the sum of ``w_right`` over layers.  Everything past the horizon is
recomputed on request as if the stream ended there, which is exactly what
the full-sequence encoder would produce for the audio seen so far.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .config import ModelConfig


class EncoderStateError(ValueError):
    pass


def _layer_weights(weights, i: int) -> dict[str, np.ndarray]:
    p = f"enc.layer{i}."
    return {k[len(p):]: v for k, v in weights.items() if k.startswith(p)}


def layer_forward(x: np.ndarray, lw: dict, heads: int, win: nn.AttentionWindow,
                  rows: tuple[int, int] | None = None) -> np.ndarray:
    """Pre-norm encoder layer on ``x`` (the layer's whole visible input).

    ``rows`` selects which output rows to compute; their bands must not need
    keys outside ``x`` other than true sequence edges.
    """
    a, b = rows if rows is not None else (0, x.shape[0])
    h = nn.layer_norm(x, lw["attn_norm"])
    q = nn.linear(h[a:b], lw["attn.q"])
    k = nn.linear(h, lw["attn.k"])
    v = nn.linear(h, lw["attn.v"])
    att = nn.banded_attention(q, k, v, heads, win, q_start=a)
    y = x[a:b] + nn.linear(att, lw["attn.o"])
    return y + nn.plain_ffn(nn.layer_norm(y, lw["ffn_norm"]), lw["ffn.w1"], lw["ffn.w2"])


def _check(features: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    x = np.asarray(features, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != cfg.enc_dim:
        raise ValueError(f"features must be [T, {cfg.enc_dim}], got {x.shape}")
    if x.shape[0] < 1:
        raise ValueError("encoder needs at least one frame")
    return x


def encode_full(features: np.ndarray, weights, cfg: ModelConfig | None = None) -> np.ndarray:
    """Banded encoder over a complete feature sequence; ``cfg`` may override the window schedule."""
    cfg = cfg or weights.cfg
    _check_compatible(weights.cfg, cfg)
    x = _check(features, cfg)
    for i, (wl, wr) in enumerate(cfg.window_schedule):
        x = layer_forward(x, _layer_weights(weights, i), cfg.num_heads_enc, nn.AttentionWindow(wl, wr))
    return nn.layer_norm(x, weights["enc.final_norm"])


def _check_compatible(have: ModelConfig, want: ModelConfig) -> None:
    if (have.enc_dim, have.enc_layers, have.enc_ffn_dim) != (want.enc_dim, want.enc_layers, want.enc_ffn_dim):
        raise ValueError("config does not match the encoder weights")


def receptive_field(cfg: ModelConfig) -> tuple[int, int]:
    """(left, right) frames an encoder output can depend on."""
    return (sum(l for l, _ in cfg.window_schedule), sum(r for _, r in cfg.window_schedule))


@dataclass
class EncoderOutput:
    """Rows ``[start, start + len(final))`` are final; ``provisional`` follows them."""

    start: int
    final: np.ndarray
    provisional: np.ndarray

    @property
    def provisional_start(self) -> int:
        return self.start + self.final.shape[0]


@dataclass
class EncoderStreamState:
    cfg: ModelConfig
    # buffers[l]: finalized inputs of layer l (layer 0 input = features); l == L is the
    # stack output before the final norm.  starts[l] is the absolute index of row 0.
    buffers: list[np.ndarray] = field(repr=False)
    starts: list[int]
    counts: list[int]  # finalized rows available at each level
    frames_ingested: int = 0

    @property
    def finalized_horizon(self) -> int:
        return self.counts[-1]

    @property
    def buffered_frames(self) -> int:
        return sum(b.shape[0] for b in self.buffers)


def new_stream_state(cfg: ModelConfig) -> EncoderStreamState:
    d = cfg.enc_dim
    levels = cfg.enc_layers + 1
    return EncoderStreamState(
        cfg=cfg,
        buffers=[np.zeros((0, d), np.float32) for _ in range(levels)],
        starts=[0] * levels,
        counts=[0] * levels,
    )


def encode_stream_step(state: EncoderStreamState, new_frames: np.ndarray, weights,
                       provisional: bool = True) -> EncoderOutput:
    """Ingest feature frames; return newly finalized outputs and the provisional suffix.

    Mutates ``state``.  Finalized rows equal :func:`encode_full` rows for any
    future continuation of the stream; provisional rows equal :func:`encode_full`
    on exactly the frames seen so far.  With ``provisional=False`` the suffix is
    skipped (returned empty); :func:`flush` produces it on demand.
    """
    cfg = state.cfg
    if weights.cfg.enc_dim != cfg.enc_dim or weights.cfg.enc_layers != cfg.enc_layers:
        raise EncoderStateError("stream state was created for a different config")
    x = np.asarray(new_frames, dtype=np.float32).reshape(-1, cfg.enc_dim)
    heads = cfg.num_heads_enc
    final_norm = weights["enc.final_norm"]
    old_horizon = state.counts[-1]

    state.buffers[0] = np.concatenate([state.buffers[0], x])
    state.counts[0] += x.shape[0]
    state.frames_ingested += x.shape[0]

    # Finalized pass, bottom-up.
    for i, (wl, wr) in enumerate(cfg.window_schedule):
        lw = _layer_weights(weights, i)
        have_in = state.counts[i]
        done = state.counts[i + 1]
        ready = max(done, have_in - wr)
        if ready > done:
            buf, s = state.buffers[i], state.starts[i]
            lo = max(0, done - wl)
            hi = min(have_in, ready + wr)
            seg = buf[lo - s: hi - s]
            out = layer_forward(seg, lw, heads, nn.AttentionWindow(wl, wr), rows=(done - lo, ready - lo))
            state.buffers[i + 1] = np.concatenate([state.buffers[i + 1], out])
            state.counts[i + 1] = ready
        # Drop inputs no future finalized output of this layer will look at.
        keep_from = max(0, state.counts[i + 1] - wl)
        # The provisional pass also reaches back w_left from the next layer's
        # finalized count, which is never below this layer's.
        drop = keep_from - state.starts[i]
        if drop > 0:
            state.buffers[i] = state.buffers[i][drop:]
            state.starts[i] = keep_from

    top = state.buffers[-1]
    top_start = state.starts[-1]
    new_final = top[old_horizon - top_start:]
    new_final = nn.layer_norm(new_final, final_norm) if new_final.shape[0] else new_final
    keep_top = state.counts[-1] - top_start
    state.buffers[-1] = top[keep_top:]
    state.starts[-1] = state.counts[-1]

    if provisional:
        prov = _provisional(state, weights)
    else:
        prov = np.zeros((0, cfg.enc_dim), np.float32)
    return EncoderOutput(start=old_horizon, final=new_final, provisional=prov)


def _provisional(state: EncoderStreamState, weights) -> np.ndarray:
    """Outputs past the finalized horizon, computed as if the stream ended now."""
    cfg = state.cfg
    total = state.counts[0]
    if state.counts[-1] >= total:
        return np.zeros((0, cfg.enc_dim), np.float32)
    # tail[l]: layer-l inputs for absolute rows [counts[l], total) (not final).
    tail = np.zeros((0, cfg.enc_dim), np.float32)
    for i, (wl, wr) in enumerate(cfg.window_schedule):
        lw = _layer_weights(weights, i)
        done_in = state.counts[i]
        done_out = state.counts[i + 1]
        lo = max(0, done_out - wl)
        buf, s = state.buffers[i], state.starts[i]
        seg = np.concatenate([buf[lo - s: done_in - s], tail])
        tail = layer_forward(seg, lw, cfg.num_heads_enc, nn.AttentionWindow(wl, wr),
                             rows=(done_out - lo, total - lo))
    return nn.layer_norm(tail, weights["enc.final_norm"])


def flush(state: EncoderStreamState, weights) -> np.ndarray:
    """Outputs past the finalized horizon for the frames ingested so far.

    Does not mutate ``state``; at end of stream these rows are the final ones.
    """
    return _provisional(state, weights)
