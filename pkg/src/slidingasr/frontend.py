"""Raw-audio frontend: 80-sample framing, per-frame CMVN, asinh, projection and
two causal stride-2 convolutions, in batch and incremental form.

Each stage is causal, so the streaming path reproduces the batch features
exactly no matter how the audio is chunked.
"""

from __future__ import annotations

import logging
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from . import nn
from .config import FRAME_SAMPLES, SAMPLE_RATE, ModelConfig

log = logging.getLogger(__name__)

CMVN_EPS = 1e-8
MIN_SAMPLES = 4 * FRAME_SAMPLES


class AudioError(ValueError):
    """Audio that cannot be fed to the frontend."""


def feature_count(n_samples: int) -> tuple[int, int, int]:
    """(T, T1, T2) frame counts after framing and each stride-2 convolution."""
    t = n_samples // FRAME_SAMPLES
    t1 = -(-t // 2)
    t2 = -(-t1 // 2)
    return t, t1, t2


def cmvn_frame(frame: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance normalization of the samples in each frame.

    Accepts a single frame or ``[n, 80]``; frames with variance below 1e-8 map to zeros.
    """
    x = np.asarray(frame, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    flat = var < CMVN_EPS
    y = np.where(flat, 0.0, xc / np.sqrt(np.where(flat, 1.0, var)))
    return y.astype(np.float32)


def _activation(name: str):
    return {"asinh": np.arcsinh, "silu": nn.silu, "identity": lambda x: x}[name]


def check_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float32).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise AudioError("audio contains NaN or Inf")
    if x.size and (x.max() > 1.0 or x.min() < -1.0):
        log.warning("audio outside [-1, 1]; clipping")
        x = np.clip(x, -1.0, 1.0)
    return x


def _frames_to_rows(frames: np.ndarray, weights) -> np.ndarray:
    """Per-frame stage: CMVN, asinh, projection to enc_dim."""
    z = np.arcsinh(cmvn_frame(frames))
    return nn.linear(z, weights["pre.proj"])


def preprocess_batch(samples, weights) -> np.ndarray:
    """Features ``[T2, enc_dim]`` for a complete buffer of 16 kHz samples."""
    cfg: ModelConfig = weights.cfg
    x = check_samples(samples)
    if x.size < MIN_SAMPLES:
        raise AudioError(f"need at least {MIN_SAMPLES} samples, got {x.size}")
    t = x.size // FRAME_SAMPLES
    h = _frames_to_rows(x[: t * FRAME_SAMPLES].reshape(t, FRAME_SAMPLES), weights)
    h = nn.causal_conv1d(h, weights["pre.conv1.w"], 2, weights["pre.conv1.b"])
    h = _activation(cfg.frontend_activation)(h)
    return nn.causal_conv1d(h, weights["pre.conv2.w"], 2, weights["pre.conv2.b"])


class _StreamingConv:
    """Causal strided conv fed a few input frames at a time."""

    def __init__(self, kernel: np.ndarray, bias: np.ndarray, stride: int):
        self.kernel, self.bias, self.stride = kernel, bias, stride
        k, c_in, _ = kernel.shape
        # Holds inputs from index (n_out * stride - k + 1) onward; zeros stand in
        # for positions before the start of the stream.
        self.tail = np.zeros((k - 1, c_in), dtype=np.float32)
        self.n_in = 0
        self.n_out = 0

    def push(self, x: np.ndarray) -> np.ndarray:
        k, c_in, c_out = self.kernel.shape
        if x.shape[0] == 0:
            return np.zeros((0, c_out), dtype=np.float32)
        buf = np.concatenate([self.tail, x])
        self.n_in += x.shape[0]
        ready = -(-self.n_in // self.stride) - self.n_out
        if ready == 0:
            self.tail = buf
            return np.zeros((0, c_out), dtype=np.float32)
        # buf row 0 is input index base = n_out*stride - (k-1).
        windows = np.lib.stride_tricks.sliding_window_view(buf, k, axis=0)[:: self.stride][:ready]
        cols = windows.transpose(0, 2, 1).reshape(ready, k * c_in)
        with nn._suspended():
            y = nn.linear(cols, self.kernel.reshape(k * c_in, c_out), self.bias)
        nn._tally("conv", ready * k * c_in * c_out)
        self.n_out += ready
        self.tail = buf[ready * self.stride:]
        return y


@dataclass
class FrontendStreamState:
    weights: object = field(repr=False)
    residual_samples: np.ndarray = field(default_factory=lambda: np.zeros(0, np.float32))
    conv1: _StreamingConv | None = field(default=None, repr=False)
    conv2: _StreamingConv | None = field(default=None, repr=False)
    samples_seen: int = 0
    frames_emitted: int = 0

    def __post_init__(self):
        w = self.weights
        if self.conv1 is None:
            self.conv1 = _StreamingConv(w["pre.conv1.w"], w["pre.conv1.b"], 2)
            self.conv2 = _StreamingConv(w["pre.conv2.w"], w["pre.conv2.b"], 2)


def new_stream_state(weights) -> FrontendStreamState:
    return FrontendStreamState(weights=weights)


def preprocess_stream(state: FrontendStreamState, chunk) -> np.ndarray:
    """Feed a chunk of samples; returns the feature frames that became available.

    Mutates ``state`` in place.
    """
    w = state.weights
    x = check_samples(chunk)
    if x.size == 0:
        return np.zeros((0, w.cfg.enc_dim), dtype=np.float32)
    buf = np.concatenate([state.residual_samples, x])
    state.samples_seen += x.size
    t = buf.size // FRAME_SAMPLES
    state.residual_samples = buf[t * FRAME_SAMPLES:].copy()
    if t == 0:
        return np.zeros((0, w.cfg.enc_dim), dtype=np.float32)
    h = _frames_to_rows(buf[: t * FRAME_SAMPLES].reshape(t, FRAME_SAMPLES), w)
    h = state.conv1.push(h)
    h = _activation(w.cfg.frontend_activation)(h)
    out = state.conv2.push(h)
    state.frames_emitted += out.shape[0]
    return out


def _check_wav(wf: wave.Wave_read, name: str) -> None:
    if wf.getnchannels() != 1:
        raise AudioError(f"{name}: expected mono, got {wf.getnchannels()} channels")
    if wf.getsampwidth() != 2:
        raise AudioError(f"{name}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
    if wf.getframerate() != SAMPLE_RATE:
        raise AudioError(f"{name}: expected {SAMPLE_RATE} Hz, got {wf.getframerate()} Hz")
    if wf.getcomptype() != "NONE":
        raise AudioError(f"{name}: compressed WAV ({wf.getcomptype()}) not supported")


def _pcm16(raw: bytes) -> np.ndarray:
    return np.frombuffer(raw, dtype="<i2").astype(np.float32) / np.float32(32768.0)


def read_wav(path: str | Path) -> np.ndarray:
    """16 kHz mono PCM16 WAV to float32 samples in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as wf:
            _check_wav(wf, str(path))
            raw = wf.readframes(wf.getnframes())
    except FileNotFoundError as exc:
        raise AudioError(f"{path}: no such file") from exc
    except (wave.Error, EOFError) as exc:
        raise AudioError(f"{path}: not a PCM WAV file ({exc or 'truncated header'})") from exc
    return _pcm16(raw)


def iter_wav_chunks(stream: BinaryIO, chunk_samples: int, name: str = "<stdin>") -> Iterator[np.ndarray]:
    """Read a WAV from a (possibly unseekable) byte stream chunk by chunk."""
    try:
        wf = wave.open(stream, "rb")
    except (wave.Error, EOFError) as exc:
        raise AudioError(f"{name}: not a PCM WAV stream ({exc or 'truncated header'})") from exc
    with wf:
        _check_wav(wf, name)
        while True:
            raw = wf.readframes(chunk_samples)
            if not raw:
                return
            yield _pcm16(raw)


def iter_raw_f32_chunks(stream: BinaryIO, chunk_samples: int) -> Iterator[np.ndarray]:
    """Headerless little-endian float32 samples from a byte stream."""
    while True:
        raw = stream.read(4 * chunk_samples)
        if not raw:
            return
        if len(raw) % 4:
            raise AudioError("raw float32 stream ends mid-sample")
        yield check_samples(np.frombuffer(raw, dtype="<f4"))


def write_wav(path: str | Path, samples) -> None:
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 32767 / 32768)
    pcm = np.round(x * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(SAMPLE_RATE)
        wf.writeframes(pcm.tobytes())


def read_raw_f32(path: str | Path) -> np.ndarray:
    return check_samples(np.fromfile(path, dtype="<f4"))
