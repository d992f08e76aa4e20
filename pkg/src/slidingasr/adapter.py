"""Adds absolute position to encoder frames and projects them to the decoder width."""

from __future__ import annotations

import numpy as np

from . import nn


class AdapterWindowExceeded(ValueError):
    """The frame positions asked for run past the learned positional table."""


def adapt(enc_out: np.ndarray, start_pos: int, weights) -> np.ndarray:
    """``(enc_out[t] + pos[start_pos + t]) @ proj``; ``proj`` is skipped when widths match."""
    pos = weights["adap.pos"]
    t = enc_out.shape[0]
    if start_pos < 0 or start_pos + t > pos.shape[0]:
        raise AdapterWindowExceeded(
            f"positions [{start_pos}, {start_pos + t}) exceed the {pos.shape[0]}-frame table"
        )
    x = enc_out + pos[start_pos:start_pos + t]
    if "adap.proj" in weights:
        x = nn.linear(x, weights["adap.proj"])
    return x.astype(np.float32, copy=False)
