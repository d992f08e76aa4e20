"""Weight container, seeded initialization and the MSV2 weight file format.

File layout (all integers little-endian)::

    b"MSV2" | u32 version | u32 manifest_len | manifest (UTF-8 JSON) | pad | tensor data

Tensor data starts at the first 64-byte boundary after the manifest and every
tensor's offset (relative to that start) is itself a multiple of 64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .config import FRAME_SAMPLES, ConfigError, ModelConfig

MAGIC = b"MSV2"
FORMAT_VERSION = 1
ALIGN = 64


class WeightFileError(Exception):
    """Base class for problems reading a weight file."""


class WeightFormatError(WeightFileError):
    """Bad magic, unsupported version or an unparseable manifest."""


class WeightManifestError(WeightFileError):
    """Manifest disagrees with the config it carries or with itself."""


class WeightTruncatedError(WeightFileError):
    """File ends before the data the manifest promises."""


def tensor_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every tensor the model needs, in canonical (file) order."""
    d, dd = cfg.enc_dim, cfg.dec_dim
    k, wide = cfg.conv_kernel, cfg.conv_expansion * cfg.enc_dim
    shapes: dict[str, tuple[int, ...]] = {
        "pre.proj": (FRAME_SAMPLES, d),
        "pre.conv1.w": (k, d, wide),
        "pre.conv1.b": (wide,),
        "pre.conv2.w": (k, wide, d),
        "pre.conv2.b": (d,),
    }
    for i in range(cfg.enc_layers):
        p = f"enc.layer{i}"
        shapes[f"{p}.attn_norm"] = (d,)
        for m in "qkvo":
            shapes[f"{p}.attn.{m}"] = (d, d)
        shapes[f"{p}.ffn_norm"] = (d,)
        shapes[f"{p}.ffn.w1"] = (d, cfg.enc_ffn_dim)
        shapes[f"{p}.ffn.w2"] = (cfg.enc_ffn_dim, d)
    shapes["enc.final_norm"] = (d,)
    shapes["adap.pos"] = (cfg.max_positions, d)
    if d != dd:
        shapes["adap.proj"] = (d, dd)
    shapes["dec.embed"] = (cfg.vocab_size, dd)
    for i in range(cfg.dec_layers):
        p = f"dec.layer{i}"
        shapes[f"{p}.self_norm"] = (dd,)
        for m in "qkvo":
            shapes[f"{p}.self_attn.{m}"] = (dd, dd)
        shapes[f"{p}.cross_norm"] = (dd,)
        for m in "qkvo":
            shapes[f"{p}.cross_attn.{m}"] = (dd, dd)
        shapes[f"{p}.ffn_norm"] = (dd,)
        shapes[f"{p}.ffn.gate"] = (dd, cfg.dec_ffn_dim)
        shapes[f"{p}.ffn.up"] = (dd, cfg.dec_ffn_dim)
        shapes[f"{p}.ffn.down"] = (cfg.dec_ffn_dim, dd)
    shapes["dec.final_norm"] = (dd,)
    return shapes


@dataclass(frozen=True, eq=False)
class WeightStore(Mapping[str, np.ndarray]):
    cfg: ModelConfig
    seed: int
    tensors: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        self.check()
        for arr in self.tensors.values():
            arr.flags.writeable = False

    def check(self) -> None:
        expected = tensor_shapes(self.cfg)
        missing = expected.keys() - self.tensors.keys()
        extra = self.tensors.keys() - expected.keys()
        if missing or extra:
            raise WeightManifestError(
                f"tensor set mismatch: missing={sorted(missing)[:5]} extra={sorted(extra)[:5]}"
            )
        for name, shape in expected.items():
            arr = self.tensors[name]
            if arr.shape != shape:
                raise WeightManifestError(f"{name}: shape {arr.shape} != expected {shape}")
            if arr.dtype != np.float32:
                raise WeightManifestError(f"{name}: dtype {arr.dtype} is not float32")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightStore):
            return NotImplemented
        return (
            self.cfg == other.cfg
            and self.tensors.keys() == other.tensors.keys()
            and all(
                self.tensors[n].tobytes() == other.tensors[n].tobytes() for n in self.tensors
            )
        )

    __hash__ = None  # type: ignore[assignment]


def _fill(rng: np.random.Generator, name: str, shape: tuple[int, ...]) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf.endswith("norm"):
        return np.ones(shape, dtype=np.float32)
    if leaf == "b":
        return np.zeros(shape, dtype=np.float32)
    if len(shape) == 3:  # conv kernel [k, c_in, c_out]
        fan_in = shape[0] * shape[1]
    elif leaf in ("embed", "pos"):
        fan_in = shape[1]
    else:
        fan_in = shape[0]
    arr = rng.standard_normal(shape, dtype=np.float32)
    arr *= np.float32(1.0 / np.sqrt(fan_in))
    return arr


def init_weights(cfg: ModelConfig, seed: int = 0) -> WeightStore:
    """Random weights scaled by 1/sqrt(fan_in); norm gains start at one and biases at zero."""
    rng = np.random.default_rng(seed)
    tensors = {name: _fill(rng, name, shape) for name, shape in tensor_shapes(cfg).items()}
    return WeightStore(cfg=cfg, seed=int(seed), tensors=tensors)


def _align(n: int) -> int:
    return (n + ALIGN - 1) // ALIGN * ALIGN


def save_weights(store: WeightStore, path: str | Path) -> None:
    entries = []
    offset = 0
    for name, arr in store.tensors.items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "nbytes": arr.nbytes})
        offset = _align(offset + arr.nbytes)
    manifest = json.dumps(
        {"config": store.cfg.to_dict(), "seed": store.seed, "tensors": entries},
        separators=(",", ":"),
    ).encode("utf-8")
    header = MAGIC + struct.pack("<II", FORMAT_VERSION, len(manifest)) + manifest
    data_start = _align(len(header))
    with open(path, "wb") as f:
        f.write(header)
        f.write(b"\0" * (data_start - len(header)))
        pos = 0
        for entry, arr in zip(entries, store.tensors.values()):
            f.write(b"\0" * (entry["offset"] - pos))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
            pos = entry["offset"] + arr.nbytes


def load_weights(path: str | Path) -> WeightStore:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 12:
        if MAGIC.startswith(buf[:4]):
            raise WeightTruncatedError(f"{path}: file too short for a header ({len(buf)} bytes)")
        raise WeightFormatError(f"{path}: not an MSV2 weight file")
    if buf[:4] != MAGIC:
        raise WeightFormatError(f"{path}: bad magic {buf[:4]!r}")
    version, mlen = struct.unpack_from("<II", buf, 4)
    if version != FORMAT_VERSION:
        raise WeightFormatError(f"{path}: unsupported format version {version}")
    if 12 + mlen > len(buf):
        raise WeightTruncatedError(f"{path}: manifest runs past end of file")
    try:
        manifest = json.loads(buf[12:12 + mlen].decode("utf-8"))
        cfg = ModelConfig.from_dict(manifest["config"])
        entries = manifest["tensors"]
        seed = int(manifest["seed"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ConfigError) as exc:
        raise WeightFormatError(f"{path}: malformed manifest: {exc}") from exc

    expected = tensor_shapes(cfg)
    if len(entries) != len(expected):
        raise WeightManifestError(
            f"{path}: manifest lists {len(entries)} tensors, config requires {len(expected)}"
        )
    data_start = _align(12 + mlen)
    tensors: dict[str, np.ndarray] = {}
    for entry in entries:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected:
            raise WeightManifestError(f"{path}: unexpected tensor {name!r}")
        if shape != expected[name]:
            raise WeightManifestError(f"{path}: {name} has shape {shape}, config implies {expected[name]}")
        count = int(np.prod(shape, dtype=np.int64))
        if entry["nbytes"] != 4 * count or entry["offset"] % ALIGN:
            raise WeightManifestError(f"{path}: bad size/offset for {name}")
        start = data_start + entry["offset"]
        if start + 4 * count > len(buf):
            raise WeightTruncatedError(f"{path}: data for {name} is truncated")
        tensors[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=start).reshape(shape)
    return WeightStore(cfg=cfg, seed=seed, tensors=tensors)
