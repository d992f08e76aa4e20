"""Live streaming session: audio chunks in, caption events and latency reports out.

Audio flows through the streaming frontend and encoder as it arrives.
Finalized encoder frames are adapted and projected into the decoder's
cross-attention memory once; the provisional tail is computed and projected
only when a decode needs it.  An energy VAD splits the stream into segments; a segment ends when
the VAD reports end of speech or :meth:`StreamingSession.end_of_speech` is
called, and its transcript is decoded over all of its frames (provisional tail
included).

All timing goes through the injected ``clock`` (seconds, monotonic).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import encoder as enc
from . import frontend as fe
from .adapter import adapt
from .decoder import CrossMemory, decode_step, detokenize, start_state
from .vad import VAD_FRAME_SAMPLES, VadEventKind, VadParams, VadState, frame_rms

STAGES = ("frontend", "vad", "encoder", "adapter", "decoder")


class SessionError(RuntimeError):
    pass


class SessionClosed(SessionError):
    pass


@dataclass(frozen=True)
class SessionConfig:
    decode_cadence_ms: float | None = 320.0
    max_tokens: int = 16
    vad: VadParams = field(default_factory=VadParams)
    auto_segment: bool = True

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.decode_cadence_ms is not None and self.decode_cadence_ms <= 0:
            raise ValueError("decode_cadence_ms must be positive or None")


@dataclass(frozen=True)
class CaptionEvent:
    kind: str  # "provisional" | "final"
    text: str
    tokens: tuple[int, ...]
    audio_time_ms: float
    wall_time_ms: float
    segment: int

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "text": self.text,
                           "audio_time_ms": self.audio_time_ms,
                           "wall_time_ms": self.wall_time_ms, "segment": self.segment})


@dataclass
class LatencyReport:
    ttft_ms: float
    response_latency_ms: float
    compute_load_pct: float
    audio_ms: float
    processing_ms: float
    timers_ms: dict[str, float]
    segment: int = 0
    end_reason: str = "end_of_speech"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class SegmentResult:
    text: str
    tokens: list[int]
    report: LatencyReport
    event: CaptionEvent


@dataclass
class _Segment:
    index: int
    wall_start: float
    enc_state: enc.EncoderStreamState
    memory: CrossMemory
    speech: bool = False
    frames: int = 0
    since_decode: int = 0
    first_token_wall: float | None = None
    timers: dict[str, float] = field(default_factory=lambda: dict.fromkeys(STAGES, 0.0))


class StreamingSession:
    def __init__(self, weights, config: SessionConfig | None = None,
                 clock: Callable[[], float] = time.perf_counter):
        self.weights = weights
        self.cfg = weights.cfg
        self.config = config or SessionConfig()
        self.clock = clock
        self.t0 = clock()
        self.closed = False
        self.frontend = fe.new_stream_state(weights)
        self.vad = VadState(self.config.vad)
        self._vad_residual = np.zeros(0, np.float32)
        self._speech_active = False
        self.features_seen = 0
        self.results: list[SegmentResult] = []
        self.events: list[CaptionEvent] = []
        self._seg: _Segment | None = None
        self._n_segments = 0
        self._frame_ms = self.cfg.frame_ms
        cadence = self.config.decode_cadence_ms
        self._cadence_frames = None if cadence is None else max(1, round(cadence / self._frame_ms))

    # -- public API -------------------------------------------------------

    @property
    def transcript(self) -> str:
        return "".join(r.text for r in self.results)

    @property
    def reports(self) -> list[LatencyReport]:
        return [r.report for r in self.results]

    @property
    def pending_frames(self) -> int:
        """Frames in the open segment (0 if none is open)."""
        return 0 if self._seg is None else self._seg.frames

    @property
    def pending_speech(self) -> bool:
        """Whether the open segment has seen VAD speech."""
        return self._seg is not None and self._seg.speech and self._seg.frames > 0

    def feed_audio(self, chunk, wall_clock: float | None = None) -> list[CaptionEvent]:
        if self.closed:
            raise SessionClosed("session is closed")
        arrival = self.clock() if wall_clock is None else wall_clock
        seg = self._segment(arrival)
        emitted: list[CaptionEvent] = []

        t = self.clock()
        feats = fe.preprocess_stream(self.frontend, chunk)
        seg.timers["frontend"] += self.clock() - t

        t = self.clock()
        vad_events = self._run_vad(chunk)
        t_detect = self.clock()
        seg.timers["vad"] += t_detect - t

        base = self.features_seen
        self.features_seen += feats.shape[0]
        cursor = 0
        for ev in vad_events:
            if ev.kind is VadEventKind.SPEECH_START:
                upto = max(cursor, ev.frame - base)
                emitted += self._ingest(feats[cursor:upto])
                cursor = upto
                self._speech_active = True
                self._segment(arrival).speech = True
                continue
            self._speech_active = False
            if self.config.auto_segment:
                upto = max(cursor, ev.frame + 1 - base)
                emitted += self._ingest(feats[cursor:upto])
                cursor = upto
                if self._seg is not None and self._seg.frames:
                    emitted.append(self._close(t_detect, "vad").event)
        emitted += self._ingest(feats[cursor:])
        self.events += emitted
        return emitted

    def end_of_speech(self) -> SegmentResult:
        """Decode the open segment over all its frames and close it."""
        if self.closed:
            raise SessionClosed("session is closed")
        if self._seg is None or self._seg.frames == 0:
            raise SessionError("no audio frames ingested in this segment")
        res = self._close(self.clock(), "end_of_speech")
        self.events.append(res.event)
        return res

    def close(self) -> None:
        self.closed = True

    # -- internals --------------------------------------------------------

    def _segment(self, wall: float) -> _Segment:
        if self._seg is None:
            self._seg = _Segment(
                index=self._n_segments,
                wall_start=wall,
                enc_state=enc.new_stream_state(self.cfg),
                memory=CrossMemory(self.weights),
                speech=self._speech_active,
            )
            self._n_segments += 1
        return self._seg

    def _run_vad(self, chunk) -> list:
        x = np.concatenate([self._vad_residual, fe.check_samples(chunk)])
        n = x.size // VAD_FRAME_SAMPLES * VAD_FRAME_SAMPLES
        self._vad_residual = x[n:]
        events = []
        for rms in frame_rms(x[:n]):
            ev = self.vad.update(float(rms))
            if ev is not None:
                events.append(ev)
        return events

    def _ingest(self, frames: np.ndarray) -> list[CaptionEvent]:
        out: list[CaptionEvent] = []
        while frames.shape[0]:
            seg = self._segment(self.clock())
            room = self.cfg.max_positions - seg.frames
            take, frames = frames[:room], frames[room:]
            out += self._encode(seg, take)
            if seg.frames >= self.cfg.max_positions:
                if seg.speech:
                    out.append(self._close(self.clock(), "max_positions").event)
                else:
                    # Nothing but silence: drop it rather than decode noise floor.
                    self._seg = None
        return out

    def _encode(self, seg: _Segment, frames: np.ndarray) -> list[CaptionEvent]:
        if frames.shape[0] == 0:
            return []
        t = self.clock()
        res = enc.encode_stream_step(seg.enc_state, frames, self.weights, provisional=False)
        t1 = self.clock()
        seg.timers["encoder"] += t1 - t
        if res.final.shape[0]:
            seg.memory.append(adapt(res.final, res.start, self.weights))
        seg.timers["adapter"] += self.clock() - t1
        seg.frames += frames.shape[0]
        seg.since_decode += frames.shape[0]
        if (seg.speech and self._cadence_frames is not None
                and seg.since_decode >= self._cadence_frames):
            seg.since_decode = 0
            tokens = self._decode(seg)
            return [self._event(seg, "provisional", tokens)]
        return []

    def _full_memory(self, seg: _Segment) -> CrossMemory:
        t = self.clock()
        prov = enc.flush(seg.enc_state, self.weights)
        t1 = self.clock()
        seg.timers["encoder"] += t1 - t
        if prov.shape[0] == 0:
            mem = seg.memory
        else:
            mem = seg.memory.extended(adapt(prov, seg.enc_state.finalized_horizon, self.weights))
        seg.timers["adapter"] += self.clock() - t1
        return mem

    def _decode(self, seg: _Segment, max_tokens: int | None = None) -> list[int]:
        memory = self._full_memory(seg)
        t = self.clock()
        state = start_state(memory, self.weights)
        for _ in range(max_tokens or self.config.max_tokens):
            token, _ = decode_step(state, self.weights)
            if seg.first_token_wall is None:
                seg.first_token_wall = self.clock()
            if token == self.cfg.eos_id:
                break
        seg.timers["decoder"] += self.clock() - t
        return state.emitted

    def _event(self, seg: _Segment, kind: str, tokens: list[int]) -> CaptionEvent:
        return CaptionEvent(
            kind=kind,
            text=detokenize(tokens, self.cfg.eos_id),
            tokens=tuple(tokens),
            audio_time_ms=self.features_seen * self._frame_ms,
            wall_time_ms=(self.clock() - self.t0) * 1000.0,
            segment=seg.index,
        )

    def _close(self, t_detect: float, reason: str) -> SegmentResult:
        seg = self._seg
        tokens = self._decode(seg)
        t_done = self.clock()
        event = self._event(seg, "final", tokens)
        processing = sum(seg.timers.values())
        audio_s = seg.frames * self._frame_ms / 1000.0
        report = LatencyReport(
            ttft_ms=max(0.0, (seg.first_token_wall - seg.wall_start) * 1000.0),
            response_latency_ms=max(0.0, (t_done - t_detect) * 1000.0),
            compute_load_pct=100.0 * processing / audio_s,
            audio_ms=audio_s * 1000.0,
            processing_ms=processing * 1000.0,
            timers_ms={k: v * 1000.0 for k, v in seg.timers.items()},
            segment=seg.index,
            end_reason=reason,
        )
        result = SegmentResult(text=event.text, tokens=tokens, report=report, event=event)
        self.results.append(result)
        self._seg = None
        return result
