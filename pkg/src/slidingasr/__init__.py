"""Streaming speech recognition with a position-free sliding-window encoder.

The encoder's outputs become final a fixed number of frames after their input,
so work overlaps with audio capture and time-to-first-token stays flat as
utterances get longer.  A dense full-attention pipeline is included as the
numerical and latency reference.
"""

from __future__ import annotations

from .config import ModelConfig, ParamBreakdown, count_params, load_config, preset_config
from .costmodel import CostModelParams, threshold_crossing, ttft_full_ms, ttft_sliding_ms
from .decoder import CrossMemory, decode_greedy, decode_step, detokenize, start_state
from .encoder import encode_full, encode_stream_step, flush, new_stream_state
from .frontend import preprocess_batch, preprocess_stream, read_wav
from .reference import encode_full_attention, pipeline_full
from .session import CaptionEvent, LatencyReport, SessionConfig, StreamingSession
from .weights import WeightStore, init_weights, load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "CaptionEvent", "CostModelParams", "CrossMemory", "LatencyReport", "ModelConfig",
    "ParamBreakdown", "SessionConfig", "StreamingSession", "WeightStore", "count_params",
    "decode_greedy", "decode_step", "detokenize", "encode_full", "encode_full_attention",
    "encode_stream_step", "flush", "init_weights", "load_config", "load_weights",
    "new_stream_state", "pipeline_full", "preprocess_batch", "preprocess_stream",
    "preset_config", "read_wav", "save_weights", "start_state", "threshold_crossing",
    "ttft_full_ms", "ttft_sliding_ms",
]
