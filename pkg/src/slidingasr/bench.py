"""Benchmark harnesses: time-to-first-token against audio length, and
response latency / compute load of a live session.

Audio is synthetic: seeded Gaussian noise under a slow amplitude envelope
built from a few 2-8 Hz sinusoids, which the energy VAD reliably treats as
speech.  Absolute timings depend on the machine; only their shape matters.
"""

from __future__ import annotations

import gc
import statistics
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .config import SAMPLE_RATE
from .reference import pipeline_full
from .session import SessionConfig, StreamingSession

ENVELOPE_HZ = (2.0, 8.0)
TTFT_HEADER = ("duration_s", "streaming_ttft_ms", "full_ttft_ms")


class NoSpeechError(RuntimeError):
    pass


def speech_like(duration_s: float, seed: int = 0, amplitude: float = 0.1,
                silence_before_s: float = 0.0, silence_after_s: float = 0.0) -> np.ndarray:
    """Float32 mono audio at 16 kHz: enveloped noise with optional silent padding."""
    if duration_s <= 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    freqs = rng.uniform(*ENVELOPE_HZ, size=3)
    phases = rng.uniform(0, 2 * np.pi, size=3)
    mix = np.mean(np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None]), axis=0)
    # Floor keeps every 20 ms frame above the VAD on-threshold at the default amplitude.
    env = 0.4 + 0.6 * np.abs(mix)
    speech = amplitude * env * rng.standard_normal(n)
    pad = lambda s: np.zeros(int(round(s * SAMPLE_RATE)))  # noqa: E731
    audio = np.concatenate([pad(silence_before_s), speech, pad(silence_after_s)])
    return np.clip(audio, -1.0, 1.0).astype(np.float32)


def _chunks(audio: np.ndarray, chunk_ms: float):
    step = max(1, int(round(chunk_ms * SAMPLE_RATE / 1000.0)))
    for i in range(0, audio.size, step):
        yield audio[i:i + step]


def streaming_ttft_ms(audio: np.ndarray, weights, chunk_ms: float = 100.0,
                      clock: Callable[[], float] = time.perf_counter) -> float:
    """Wall time from arrival of the last chunk to the first decoded token."""
    sess = StreamingSession(weights, SessionConfig(decode_cadence_ms=None, max_tokens=1,
                                                   auto_segment=False), clock=clock)
    chunks = list(_chunks(audio, chunk_ms))
    first = last = clock()
    for i, chunk in enumerate(chunks):
        last = clock()
        if i == 0:
            first = last
        sess.feed_audio(chunk, wall_clock=last)
    report = sess.end_of_speech().report
    return report.ttft_ms - (last - first) * 1000.0


def full_ttft_ms(audio: np.ndarray, weights, clock: Callable[[], float] = time.perf_counter) -> float:
    return pipeline_full(audio, weights, max_tokens=1, clock=clock).ttft_ms


@dataclass
class TtftRow:
    duration_s: float
    streaming_ttft_ms: float
    full_ttft_ms: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.duration_s, self.streaming_ttft_ms, self.full_ttft_ms)


def bench_ttft(weights, durations: Sequence[float], seed: int = 0, repetitions: int = 3,
               chunk_ms: float = 100.0, full_repetitions: int | None = None) -> list[TtftRow]:
    """Best-of-N streaming and full-pipeline TTFT per audio duration.

    Both paths are warmed up first, the collector is paused while timing, and
    repetitions run in rounds across all durations so slow drift in machine
    load hits every duration alike.  The minimum is reported because
    interference only ever adds time.  ``full_repetitions`` (default
    ``repetitions``) lets the cheap full-pipeline column take more samples.
    """
    full_reps = repetitions if full_repetitions is None else full_repetitions
    if not durations:
        raise ValueError("no durations given")
    if repetitions < 1 or full_reps < 1:
        raise ValueError("repetitions must be >= 1")
    if min(durations) < 1.0:
        raise ValueError("durations must be >= 1 s")
    audios = [speech_like(dur, seed=seed + k) for k, dur in enumerate(durations)]
    streaming_ttft_ms(audios[0], weights, chunk_ms)
    full_ttft_ms(audios[0], weights)
    stream = [[] for _ in audios]
    full = [[] for _ in audios]
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for r in range(max(repetitions, full_reps)):
            for k, audio in enumerate(audios):
                if r < repetitions:
                    stream[k].append(streaming_ttft_ms(audio, weights, chunk_ms))
                if r < full_reps:
                    full[k].append(full_ttft_ms(audio, weights))
            gc.collect()
    finally:
        if was_enabled:
            gc.enable()
    return [TtftRow(float(d), min(s), min(f)) for d, s, f in zip(durations, stream, full)]


def bench_latency(audio: np.ndarray, weights, chunk_ms: float = 100.0,
                  config: SessionConfig | None = None,
                  clock: Callable[[], float] = time.perf_counter) -> dict:
    """Feed ``audio`` in real-time-sized chunks and summarize the closed segments.

    Latency is the median time from VAD end-of-speech to final transcript;
    compute load is summed stage time over summed segment audio.
    """
    sess = StreamingSession(weights, config or SessionConfig(), clock=clock)
    for chunk in _chunks(audio, chunk_ms):
        sess.feed_audio(chunk)
    if not sess.results and sess.pending_speech:
        sess.end_of_speech()
    if not sess.results:
        raise NoSpeechError("no speech segment detected in the audio")
    reports = sess.reports
    processing = sum(r.processing_ms for r in reports)
    audio_ms = sum(r.audio_ms for r in reports)
    return {
        "latency_ms": statistics.median(r.response_latency_ms for r in reports),
        "compute_load_pct": 100.0 * processing / audio_ms,
        "segments": len(reports),
        "audio_ms": audio_ms,
        "processing_ms": processing,
        "transcript": sess.transcript,
    }
