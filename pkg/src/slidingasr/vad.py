"""RMS-energy voice activity gate with hysteresis and a hangover period."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

VAD_FRAME_SAMPLES = 320  # 20 ms, aligned with encoder frames


@dataclass(frozen=True)
class VadParams:
    on_threshold: float = 0.02
    off_threshold: float = 0.01
    hangover_ms: float = 300.0
    frame_ms: float = 20.0

    def __post_init__(self):
        if self.off_threshold < 0 or self.on_threshold < self.off_threshold:
            raise ValueError(
                f"need on_threshold >= off_threshold >= 0, got {self.on_threshold}, {self.off_threshold}"
            )
        if self.hangover_ms < 0 or self.frame_ms <= 0:
            raise ValueError("hangover_ms must be >= 0 and frame_ms > 0")

    @property
    def hangover_frames(self) -> int:
        return int(round(self.hangover_ms / self.frame_ms))

    def scaled(self, gain: float) -> VadParams:
        return VadParams(self.on_threshold * gain, self.off_threshold * gain,
                         self.hangover_ms, self.frame_ms)


class VadEventKind(str, Enum):
    SPEECH_START = "speech_start"
    SPEECH_END = "speech_end"


@dataclass(frozen=True)
class VadEvent:
    kind: VadEventKind
    frame: int

    def time_ms(self, frame_ms: float = 20.0) -> float:
        return self.frame * frame_ms


@dataclass
class VadState:
    params: VadParams = field(default_factory=VadParams)
    in_speech: bool = False
    quiet_run: int = 0
    frame: int = 0

    def update(self, rms: float) -> VadEvent | None:
        """Advance one frame.  Speech ends once ``hangover`` quiet frames have
        passed, stamped at ``quiet_start + hangover``."""
        p = self.params
        idx = self.frame
        self.frame += 1
        if not self.in_speech:
            if rms >= p.on_threshold and rms > 0:
                self.in_speech = True
                self.quiet_run = 0
                return VadEvent(VadEventKind.SPEECH_START, idx)
            return None
        if rms < p.off_threshold or rms == 0:
            self.quiet_run += 1
            if self.quiet_run > p.hangover_frames:
                quiet_start = idx - self.quiet_run + 1
                self.in_speech = False
                self.quiet_run = 0
                return VadEvent(VadEventKind.SPEECH_END, quiet_start + p.hangover_frames)
        else:
            self.quiet_run = 0
        return None


def frame_rms(samples, frame_samples: int = VAD_FRAME_SAMPLES) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    n = x.size // frame_samples
    fr = x[: n * frame_samples].reshape(n, frame_samples)
    return np.sqrt(np.mean(fr * fr, axis=1))


def vad_detect(energies, params: VadParams | None = None,
               state: VadState | None = None) -> list[VadEvent]:
    """Run the gate over a per-frame RMS series."""
    state = state or VadState(params or VadParams())
    events = []
    for e in np.asarray(energies, dtype=np.float64):
        ev = state.update(float(e))
        if ev is not None:
            events.append(ev)
    return events
