"""Architecture configuration for the three model sizes and parameter accounting."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

SAMPLE_RATE = 16000
FRAME_SAMPLES = 80  # 5 ms at 16 kHz
DOWNSAMPLE = 4  # two stride-2 convolutions

PRESET_NAMES = ("tiny", "small", "medium")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    enc_dim: int
    dec_dim: int
    enc_layers: int
    dec_layers: int
    num_heads_enc: int
    num_heads_dec: int
    window_schedule: tuple[tuple[int, int], ...]
    ffn_mult: int = 4
    # Encoder FFN width override; None means ffn_mult * enc_dim.
    enc_ffn_hidden: int | None = None
    vocab_size: int = 32768
    max_positions: int = 4096
    conv_kernel: int = 5
    conv_expansion: int = 2
    frontend_activation: str = "asinh"
    rope_base: float = 10000.0
    rope_cross_attention: bool = False
    bos_id: int = 1
    eos_id: int = 2
    sample_rate_hz: int = SAMPLE_RATE
    feature_rate_hz: float = SAMPLE_RATE / (FRAME_SAMPLES * DOWNSAMPLE)
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        # JSON round-trips hand us lists; normalize so configs compare equal.
        object.__setattr__(
            self, "window_schedule", tuple((int(l), int(r)) for l, r in self.window_schedule)
        )
        self.validate()

    def validate(self) -> None:
        for attr in ("enc_dim", "dec_dim", "enc_layers", "dec_layers", "num_heads_enc",
                     "num_heads_dec", "ffn_mult", "vocab_size", "max_positions", "conv_kernel",
                     "conv_expansion", "sample_rate_hz"):
            if getattr(self, attr) <= 0:
                raise ConfigError(f"{attr} must be positive, got {getattr(self, attr)}")
        if len(self.window_schedule) != self.enc_layers:
            raise ConfigError(
                f"window_schedule has {len(self.window_schedule)} entries for {self.enc_layers} layers"
            )
        if any(l < 0 or r < 0 for l, r in self.window_schedule):
            raise ConfigError("window sizes must be non-negative")
        if self.enc_dim % self.num_heads_enc:
            raise ConfigError(f"enc_dim {self.enc_dim} not divisible by {self.num_heads_enc} heads")
        if self.dec_dim % self.num_heads_dec:
            raise ConfigError(f"dec_dim {self.dec_dim} not divisible by {self.num_heads_dec} heads")
        if (self.dec_dim // self.num_heads_dec) % 2:
            raise ConfigError("decoder head size must be even for rotary embeddings")
        expected_rate = self.sample_rate_hz / (FRAME_SAMPLES * DOWNSAMPLE)
        if abs(self.feature_rate_hz - expected_rate) > 1e-9:
            raise ConfigError(
                f"feature_rate_hz {self.feature_rate_hz} != sample_rate/320 = {expected_rate}"
            )
        if self.frontend_activation not in ("asinh", "silu", "identity"):
            raise ConfigError(f"unknown frontend activation {self.frontend_activation!r}")

    @property
    def enc_ffn_dim(self) -> int:
        return self.enc_ffn_hidden or self.ffn_mult * self.enc_dim

    @property
    def dec_ffn_dim(self) -> int:
        return self.ffn_mult * self.dec_dim

    @property
    def enc_head_dim(self) -> int:
        return self.enc_dim // self.num_heads_enc

    @property
    def dec_head_dim(self) -> int:
        return self.dec_dim // self.num_heads_dec

    @property
    def frame_ms(self) -> float:
        return 1000.0 / self.feature_rate_hz

    def with_windows(self, schedule) -> ModelConfig:
        return replace(self, window_schedule=tuple(schedule))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window_schedule"] = [list(w) for w in self.window_schedule]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def lookahead_schedule(layers: int, w_left: int = 16, w_right: int = 4) -> tuple[tuple[int, int], ...]:
    """(w_left, w_right) for the first two and last two layers, (w_left, 0) in between."""
    return tuple(
        (w_left, w_right) if i < 2 or i >= layers - 2 else (w_left, 0) for i in range(layers)
    )


def _heads(dim: int, head_size: int = 64) -> int:
    # Nearest head count to dim/64 that divides dim (620 -> 10 heads of 62).
    target = max(1, round(dim / head_size))
    for delta in range(dim):
        for h in (target - delta, target + delta):
            if h > 0 and dim % h == 0:
                return h
    return 1


_TABLE = {
    # name: (enc_dim, dec_dim, enc_layers, dec_layers, enc_ffn_hidden)
    "tiny": (320, 320, 6, 6, None),
    "small": (620, 512, 10, 10, 2272),
    "medium": (768, 640, 14, 14, 2816),
}


def preset_config(size: str, **overrides) -> ModelConfig:
    if size not in _TABLE:
        raise ConfigError(f"unknown preset {size!r}; choose from {', '.join(PRESET_NAMES)}")
    enc, dec, el, dl, hidden = _TABLE[size]
    cfg = ModelConfig(
        enc_dim=enc,
        dec_dim=dec,
        enc_layers=el,
        dec_layers=dl,
        num_heads_enc=_heads(enc),
        num_heads_dec=_heads(dec),
        window_schedule=lookahead_schedule(el),
        enc_ffn_hidden=hidden,
        name=size,
    )
    return replace(cfg, **overrides) if overrides else cfg


def load_config(path: str | Path) -> ModelConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return ModelConfig.from_dict(data)


def save_config(cfg: ModelConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class ParamBreakdown:
    pre: int
    enc: int
    adap: int
    dec: int

    @property
    def total(self) -> int:
        return self.pre + self.enc + self.adap + self.dec

    def as_dict(self) -> dict[str, int]:
        return {"pre": self.pre, "enc": self.enc, "adap": self.adap, "dec": self.dec,
                "total": self.total}


def count_params(cfg: ModelConfig) -> ParamBreakdown:
    """Parameter counts per block, derived from the tensor shapes ``init_weights`` creates."""
    from .weights import tensor_shapes

    sums = {"pre": 0, "enc": 0, "adap": 0, "dec": 0}
    for name, shape in tensor_shapes(cfg).items():
        n = 1
        for s in shape:
            n *= s
        sums[name.split(".", 1)[0]] += n
    return ParamBreakdown(**sums)
