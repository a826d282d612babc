"""Model configuration, weight container, seeded initialization and checkpoints.

Tensor naming scheme (every tensor is a 2-D float32 matrix; vectors are 1xN)::

    frontend.conv{1,2}.{weight,bias}            conv weight is (out_ch, in_ch*9)
    frontend.proj.{weight,bias}                 (channels*freq, d_model)
    encoder.layers.{i}.attn.{q,k,v,o}.{weight,bias}
    encoder.layers.{i}.norm{1,2}.{gain,bias}
    encoder.layers.{i}.ffn.fc{1,2}.{weight,bias}
    decoder.embed.weight                        (vocab, d_model)
    decoder.layers.{i}.{self_attn,cross_attn}.{q,k,v,o}.{weight,bias}
    decoder.layers.{i}.norm{1,2,3}.{gain,bias}
    decoder.layers.{i}.ffn.fc{1,2}.{weight,bias}
    decoder.out.{weight,bias}                   (d_model, vocab)

Linear weights are stored input-major, so a projection is ``x @ W + b``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    FormatError,
    MalformedHeaderError,
    ShapeMismatchError,
    TruncatedPayloadError,
)

PAD, BOS, EOS = 0, 1, 2
CHECKPOINT_MAGIC = b"AUGMEM01"


@dataclass(frozen=True)
class SegmentSpec:
    """Segment geometry in encoder positions (after 4x subsampling)."""

    left: int = 8
    center: int = 16
    right: int = 8

    def validate(self):
        if self.center < 1:
            raise ConfigError(f"segment center must be >= 1, got {self.center}")
        if self.left < 0 or self.right < 0:
            raise ConfigError(f"segment left/right must be >= 0, got L={self.left} R={self.right}")
        return self

    @property
    def span(self):
        return self.left + self.center + self.right

    @classmethod
    def parse(cls, text: str) -> "SegmentSpec":
        """Parse ``"L,C,R"``."""
        try:
            left, center, right = (int(p) for p in text.split(","))
        except ValueError:
            raise ConfigError(f"segment must be 'L,C,R' integers, got {text!r}") from None
        return cls(left, center, right).validate()

    def __str__(self):
        return f"L{self.left}C{self.center}R{self.right}"


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 256
    n_heads: int = 4
    n_enc_layers: int = 12
    n_dec_layers: int = 6
    d_ffn: int = 1024
    d_feat: int = 80
    vocab_size: int = 10000
    frame_shift_ms: float = 10.0
    subsample_ratio: int = 4
    conv_channels: int = 64
    segment: SegmentSpec = field(default_factory=SegmentSpec)
    # None keeps every memory bank
    max_memory: int | None = 3
    predecision_chunk: int = 8
    waitk: int = 3
    max_target_len: int = 200
    ln_eps: float = 1e-5

    def __post_init__(self):
        if isinstance(self.segment, dict):
            object.__setattr__(self, "segment", SegmentSpec(**self.segment))
        self.validate()

    def validate(self):
        counts = {
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_enc_layers": self.n_enc_layers,
            "n_dec_layers": self.n_dec_layers,
            "d_ffn": self.d_ffn,
            "d_feat": self.d_feat,
            "conv_channels": self.conv_channels,
            "predecision_chunk": self.predecision_chunk,
            "waitk": self.waitk,
            "max_target_len": self.max_target_len,
        }
        for key, value in counts.items():
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{key} must be an integer >= 1, got {value!r}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.subsample_ratio != 4:
            raise ConfigError(f"subsample_ratio is fixed at 4, got {self.subsample_ratio}")
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must leave room beyond the reserved PAD/BOS/EOS ids")
        if self.frame_shift_ms <= 0:
            raise ConfigError("frame_shift_ms must be positive")
        if self.max_memory is not None and self.max_memory < 0:
            raise ConfigError(f"max_memory must be >= 0 or None, got {self.max_memory}")
        if self.ln_eps <= 0:
            raise ConfigError("ln_eps must be positive")
        self.segment.validate()
        return self

    @property
    def d_head(self):
        return self.d_model // self.n_heads

    @property
    def conv_freq_out(self):
        return -(-(-(-self.d_feat // 2)) // 2)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if "segment" in data and not isinstance(data["segment"], SegmentSpec):
            seg = data["segment"]
            if isinstance(seg, str):
                data["segment"] = SegmentSpec.parse(seg)
            else:
                try:
                    data["segment"] = SegmentSpec(**seg)
                except TypeError as exc:
                    raise ConfigError(f"bad segment spec {seg!r}: {exc}") from None
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class TensorSpec:
    name: str
    rows: int
    cols: int
    kind: str  # "weight", "bias" or "gain"
    fan_in: int = 0
    fan_out: int = 0


def _linear(prefix, n_in, n_out):
    return [
        TensorSpec(f"{prefix}.weight", n_in, n_out, "weight", n_in, n_out),
        TensorSpec(f"{prefix}.bias", 1, n_out, "bias"),
    ]


def _norm(prefix, d):
    return [TensorSpec(f"{prefix}.gain", 1, d, "gain"), TensorSpec(f"{prefix}.bias", 1, d, "bias")]


def _attn(prefix, d):
    specs = []
    for proj in "qkvo":
        specs += _linear(f"{prefix}.{proj}", d, d)
    return specs


def manifest(config: ModelConfig) -> list[TensorSpec]:
    """Ordered list of every tensor the architecture needs."""
    d, c, ffn, vocab = config.d_model, config.conv_channels, config.d_ffn, config.vocab_size
    specs = [
        TensorSpec("frontend.conv1.weight", c, 9, "weight", 9, c * 9),
        TensorSpec("frontend.conv1.bias", 1, c, "bias"),
        TensorSpec("frontend.conv2.weight", c, c * 9, "weight", c * 9, c * 9),
        TensorSpec("frontend.conv2.bias", 1, c, "bias"),
    ]
    specs += _linear("frontend.proj", c * config.conv_freq_out, d)
    for i in range(config.n_enc_layers):
        p = f"encoder.layers.{i}"
        specs += _attn(f"{p}.attn", d)
        specs += _norm(f"{p}.norm1", d)
        specs += _linear(f"{p}.ffn.fc1", d, ffn)
        specs += _linear(f"{p}.ffn.fc2", ffn, d)
        specs += _norm(f"{p}.norm2", d)
    specs.append(TensorSpec("decoder.embed.weight", vocab, d, "weight", vocab, d))
    for i in range(config.n_dec_layers):
        p = f"decoder.layers.{i}"
        specs += _attn(f"{p}.self_attn", d)
        specs += _norm(f"{p}.norm1", d)
        specs += _attn(f"{p}.cross_attn", d)
        specs += _norm(f"{p}.norm2", d)
        specs += _linear(f"{p}.ffn.fc1", d, ffn)
        specs += _linear(f"{p}.ffn.fc2", ffn, d)
        specs += _norm(f"{p}.norm3", d)
    specs += _linear("decoder.out", d, vocab)
    return specs


class WeightSet(Mapping):
    """Read-only mapping from tensor name to float32 matrix."""

    def __init__(self, tensors: Mapping[str, np.ndarray]):
        self._tensors = {}
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype=np.float32)
            if arr.ndim != 2:
                raise ValueError(f"tensor {name} must be 2-D, got shape {arr.shape}")
            arr.flags.writeable = False
            self._tensors[name] = arr

    def __getitem__(self, name):
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def validate(self, config: ModelConfig):
        expected = {s.name: (s.rows, s.cols) for s in manifest(config)}
        missing = expected.keys() - self._tensors.keys()
        extra = self._tensors.keys() - expected.keys()
        if missing or extra:
            raise ConfigError(f"weights do not match config: missing={sorted(missing)[:5]} extra={sorted(extra)[:5]}")
        for name, shape in expected.items():
            if self._tensors[name].shape != shape:
                raise ConfigError(f"tensor {name} has shape {self._tensors[name].shape}, config needs {shape}")
            if not np.isfinite(self._tensors[name]).all():
                raise ConfigError(f"tensor {name} has non-finite entries")
        return self

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name in sorted(self._tensors):
            h.update(name.encode())
            h.update(self._tensors[name].tobytes())
        return h.hexdigest()


def init_weights(config: ModelConfig, seed: int) -> WeightSet:
    """Seeded Glorot-uniform weights, zero biases, unit norm gains."""
    config.validate()
    rng = np.random.default_rng(seed)
    tensors = {}
    for spec in manifest(config):
        if spec.kind == "weight":
            bound = math.sqrt(6.0 / (spec.fan_in + spec.fan_out))
            tensors[spec.name] = rng.uniform(-bound, bound, size=(spec.rows, spec.cols)).astype(np.float32)
        elif spec.kind == "gain":
            tensors[spec.name] = np.ones((spec.rows, spec.cols), dtype=np.float32)
        else:
            tensors[spec.name] = np.zeros((spec.rows, spec.cols), dtype=np.float32)
    return WeightSet(tensors)


# -- checkpoint container ----------------------------------------------------


def save_checkpoint(weights: WeightSet, config: ModelConfig, path) -> None:
    weights.validate(config)
    entries, offset = [], 0
    for spec in manifest(config):
        entries.append({"name": spec.name, "rows": spec.rows, "cols": spec.cols, "offset": offset})
        offset += spec.rows * spec.cols * 4
    header = json.dumps({"format": 1, "config": config.to_dict(), "tensors": entries}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(header.encode("utf-8"))
        fh.write(b"\n")
        for spec in manifest(config):
            fh.write(weights[spec.name].astype("<f4", copy=False).tobytes())


def _read_header(fh, magic):
    got = fh.read(len(magic))
    if got != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {got!r}")
    line = fh.readline()
    if not line.endswith(b"\n"):
        raise MalformedHeaderError("header is not newline-terminated")
    try:
        return json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"header is not valid UTF-8 JSON: {exc}") from None


def load_checkpoint(path) -> tuple[WeightSet, ModelConfig]:
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh, CHECKPOINT_MAGIC)
        payload = fh.read()
    if not isinstance(header, dict) or "config" not in header or "tensors" not in header:
        raise MalformedHeaderError("header must contain 'config' and 'tensors'")
    try:
        config = ModelConfig.from_dict(header["config"])
    except ConfigError as exc:
        raise MalformedHeaderError(f"invalid config in header: {exc}") from None
    entries = header["tensors"]
    try:
        names = [e["name"] for e in entries]
        shapes = [(int(e["rows"]), int(e["cols"])) for e in entries]
        offsets = [int(e["offset"]) for e in entries]
    except (TypeError, KeyError, ValueError):
        raise MalformedHeaderError("tensor manifest entries need name/rows/cols/offset") from None
    expected = manifest(config)
    if names != [s.name for s in expected]:
        raise MalformedHeaderError("tensor manifest does not match the architecture of the stored config")

    position = 0
    for spec, shape, offset in zip(expected, shapes, offsets):
        if shape != (spec.rows, spec.cols):
            raise ShapeMismatchError(f"tensor {spec.name}: header says {shape}, config implies {(spec.rows, spec.cols)}")
        if offset != position:
            raise ShapeMismatchError(f"tensor {spec.name}: offset {offset} does not follow previous tensor (expected {position})")
        position += shape[0] * shape[1] * 4

    tensors = {}
    for spec, offset in zip(expected, offsets):
        nbytes = spec.rows * spec.cols * 4
        if offset + nbytes > len(payload):
            raise TruncatedPayloadError(
                f"payload truncated inside tensor {spec.name} ({len(payload) - offset} of {nbytes} bytes)",
                tensor=spec.name,
            )
        arr = np.frombuffer(payload, dtype="<f4", count=spec.rows * spec.cols, offset=offset)
        tensors[spec.name] = arr.astype(np.float32).reshape(spec.rows, spec.cols)
    if len(payload) != position:
        raise ShapeMismatchError(f"payload has {len(payload) - position} bytes beyond the declared tensors")
    weights = WeightSet(tensors)
    for name, arr in weights.items():
        if not np.isfinite(arr).all():
            raise FormatError(f"tensor {name} contains non-finite values")
    return weights, config
