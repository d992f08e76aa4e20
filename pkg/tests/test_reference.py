from __future__ import annotations

import numpy as np

from conftest import noise
from slidingasr import encoder as enc, nn
from slidingasr.costmodel import log_log_slope
from slidingasr.reference import encode_dense, encode_full_attention, pipeline_full


def test_dense_masked_equals_banded(tiny_weights, rng):
    x = rng.standard_normal((120, 320)).astype(np.float32)
    np.testing.assert_allclose(encode_dense(x, tiny_weights), enc.encode_full(x, tiny_weights),
                               rtol=1e-5, atol=1e-5)


def test_single_frame_full_attention_equals_banded(micro_weights, rng):
    x = rng.standard_normal((1, 64)).astype(np.float32)
    np.testing.assert_array_equal(encode_full_attention(x, micro_weights),
                                  enc.encode_full(x, micro_weights))


def test_full_attention_counter_quadratic(micro_weights, rng):
    ts, ops = (32, 64, 128, 256), []
    for t in ts:
        with nn.counting() as c:
            encode_full_attention(rng.standard_normal((t, 64)).astype(np.float32), micro_weights)
        ops.append(c.ops("attention"))
    assert abs(log_log_slope(ts, ops) - 2.0) < 1e-9


def test_counter_fits_linear_plus_quadratic(micro_weights, rng):
    ts = np.array([32, 64, 96, 128, 192, 256], dtype=float)
    ops = []
    for t in ts.astype(int):
        with nn.counting() as c:
            encode_full_attention(rng.standard_normal((t, 64)).astype(np.float32), micro_weights)
        ops.append(c.ops())
    a = np.stack([ts, ts ** 2], axis=1)
    coef, *_ = np.linalg.lstsq(a, ops, rcond=None)
    pred = a @ coef
    r2 = 1 - np.sum((ops - pred) ** 2) / np.sum((ops - np.mean(ops)) ** 2)
    assert r2 > 0.99 and coef[1] > 0


def test_pipeline_timing_and_growth(tiny_weights, rng):
    short = pipeline_full(noise(rng, 16000), tiny_weights, max_tokens=2)
    long = pipeline_full(noise(rng, 160000), tiny_weights, max_tokens=2)
    assert short.ttft_ms >= short.frontend_ms + short.encoder_ms
    assert len(short.tokens) == 2 and short.text
    assert long.ttft_ms > short.ttft_ms
