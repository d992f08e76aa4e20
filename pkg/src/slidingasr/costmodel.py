"""Analytic encoder-latency model for full and sliding-window attention.

Encoder work for N seconds of audio at T = rate * N frames::

    full:    6 P T + 4 d L T^2
    sliding: 6 P T + 4 d L T w

Time-to-first-token for full attention is the whole-utterance encode.  For a
sliding window the work overlaps with capture, leaving only the last window
(6 P w + 4 d L w^2) after the final chunk arrives.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence


@dataclass(frozen=True)
class CostModelParams:
    P: float = 1e8
    d: int = 768
    L: int = 12
    w: int = 20
    feature_rate: float = 50.0
    throughput_tops: float = 0.1
    threshold_ms: float = 250.0

    def __post_init__(self):
        for name in ("P", "d", "L", "w", "feature_rate", "throughput_tops"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.threshold_ms < 0:
            raise ValueError("threshold_ms must be >= 0")

    @property
    def ops_per_second(self) -> float:
        return self.throughput_tops * 1e12

    def at(self, tops: float) -> CostModelParams:
        return replace(self, throughput_tops=tops)


def frames(params: CostModelParams, audio_s: float) -> float:
    return params.feature_rate * audio_s


def ops_full(params: CostModelParams, audio_s: float) -> float:
    if audio_s <= 0:
        raise ValueError(f"audio length must be positive, got {audio_s}")
    t = frames(params, audio_s)
    return 6 * params.P * t + 4 * params.d * params.L * t * t


def ops_sliding(params: CostModelParams, audio_s: float) -> float:
    if audio_s <= 0:
        raise ValueError(f"audio length must be positive, got {audio_s}")
    t = frames(params, audio_s)
    return 6 * params.P * t + 4 * params.d * params.L * t * params.w


def attention_ops_full(params: CostModelParams, t: float) -> float:
    return 4 * params.d * params.L * t * t


def attention_ops_sliding(params: CostModelParams, t: float) -> float:
    return 4 * params.d * params.L * t * params.w


def ttft_full_ms(params: CostModelParams, audio_s: float) -> float:
    if audio_s == 0:
        return 0.0
    return 1000.0 * ops_full(params, audio_s) / params.ops_per_second


def ttft_sliding_ms(params: CostModelParams) -> float:
    w = params.w
    residual = 6 * params.P * w + 4 * params.d * params.L * w * w
    return 1000.0 * residual / params.ops_per_second


def threshold_crossing(params: CostModelParams) -> float:
    """Audio length (s) at which the full-attention TTFT reaches ``threshold_ms``."""
    r = params.feature_rate
    a = 4 * params.d * params.L * r * r
    b = 6 * params.P * r
    c = -params.threshold_ms / 1000.0 * params.ops_per_second
    if a <= 0 and b <= 0:
        raise ValueError("degenerate cost model: no positive root")
    if c == 0:
        return 0.0
    # Cancellation-free form of (-b + sqrt(b^2 - 4ac)) / 2a.
    return 2 * -c / (b + math.sqrt(b * b - 4 * a * c))


def _tops_label(tops: float) -> str:
    return f"{tops:g}tops"


def fig1_rows(params: CostModelParams, grid: Sequence[float],
              tops_list: Sequence[float] = (0.1, 0.5, 1.0),
              sliding_tops: float = 0.1) -> tuple[list[str], list[list[float]]]:
    if len(grid) == 0:
        raise ValueError("audio grid is empty")
    header = ["N_s"] + [f"ttft_{_tops_label(t)}" for t in tops_list]
    header += [f"ttft_sliding_{_tops_label(sliding_tops)}", "threshold"]
    sliding = ttft_sliding_ms(params.at(sliding_tops))
    rows = []
    for n in grid:
        row = [float(n)] + [ttft_full_ms(params.at(t), n) for t in tops_list]
        rows.append(row + [sliding, params.threshold_ms])
    return header, rows


def emit_fig1_csv(params: CostModelParams, grid: Sequence[float],
                  tops_list: Sequence[float] = (0.1, 0.5, 1.0),
                  sliding_tops: float = 0.1) -> str:
    header, rows = fig1_rows(params, grid, tops_list, sliding_tops)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows([[repr(v) for v in row] for row in rows])
    return buf.getvalue()


def audio_grid(start: float, stop: float, step: float) -> list[float]:
    if step <= 0 or stop < start:
        raise ValueError("grid needs step > 0 and stop >= start")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 12) for i in range(n)]


def log_log_slope(xs: Iterable[float], ys: Iterable[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx = [math.log(x) for x in xs]
    ly = [math.log(y) for y in ys]
    mx, my = sum(lx) / len(lx), sum(ly) / len(ly)
    num = sum((a - mx) * (b - my) for a, b in zip(lx, ly))
    den = sum((a - mx) ** 2 for a in lx)
    return num / den
