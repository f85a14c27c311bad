"""The five-block capsule-endoscopy classifier and its checkpoint format.

Layer sequence, per block ``b`` with ``f`` filters::

    conv3x3(f, padding[b][0]) -> relu -> conv3x3(f, padding[b][1]) -> relu
    -> maxpool2 -> dropout(conv_dropout)

then ``flatten -> dense(dense_units) -> relu -> dropout(dense_dropout) ->
dense(num_classes)``. Eval mode ends in softmax; train mode returns logits.

Checkpoint layout (all integers little-endian)::

    b"CVC1" | u32 version=1 | u32 header_len | header JSON (UTF-8)
    | u32 tensor_count | per tensor: u16 name_len, name, u8 rank,
      rank x u32 dims, float32 data
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import layers
from .autograd import Node, leaf, no_grad
from .errors import (
    BadMagicError,
    CorruptHeaderError,
    ShapeError,
    SpecError,
    TruncatedCheckpointError,
    UnknownLayerError,
    VersionMismatchError,
)
from .rng import SplitMix64
from .tensor import Tensor

CLASS_NAMES = (
    "Angioectasia",
    "Bleeding",
    "Erosion",
    "Erythema",
    "Foreign Body",
    "Lymphangiectasia",
    "Normal",
    "Polyp",
    "Ulcer",
    "Worms",
)
assert list(CLASS_NAMES) == sorted(CLASS_NAMES)

MAGIC = b"CVC1"
FORMAT_VERSION = 1
PADDING_POLICIES = ("per-block", "first-only")


def padding_policy(name: str, blocks: int = 5) -> list[list[str]]:
    """Expand a named padding policy to one (first, second) pair per block.

    ``per-block``: the first conv of every block pads 'same', the second is 'valid'.
    ``first-only``: only the network's very first conv pads 'same'.
    """
    if name == "per-block":
        return [["same", "valid"] for _ in range(blocks)]
    if name == "first-only":
        return [["same", "valid"]] + [["valid", "valid"] for _ in range(blocks - 1)]
    raise SpecError(f"unknown padding policy {name!r}; expected one of {PADDING_POLICIES}")


@dataclass
class ModelSpec:
    input_size: tuple[int, int] = (224, 224)
    channels: int = 3
    block_filters: tuple[int, ...] = (32, 64, 128, 256, 512)
    convs_per_block: int = 2
    dense_units: int = 1500
    num_classes: int = 10
    conv_dropout: float = 0.25
    dense_dropout: float = 0.40
    padding: list[list[str]] = field(default_factory=lambda: padding_policy("per-block"))

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.block_filters = tuple(int(v) for v in self.block_filters)
        self.padding = [list(p) for p in self.padding]

    def validate(self) -> None:
        if len(self.input_size) != 2 or min(self.input_size) < 1:
            raise SpecError(f"input_size must be two positive integers, got {self.input_size}")
        if self.channels < 1 or self.dense_units < 1 or self.num_classes < 1:
            raise SpecError("channels, dense_units and num_classes must be positive")
        if not self.block_filters or min(self.block_filters) < 1:
            raise SpecError("block_filters must be a non-empty list of positive integers")
        if len(self.padding) != len(self.block_filters) or any(
            len(p) != self.convs_per_block or any(m not in layers.PADDINGS for m in p) for p in self.padding
        ):
            raise SpecError("padding must list one mode per conv for every block")
        for rate in (self.conv_dropout, self.dense_dropout):
            if not 0.0 <= rate < 1.0:
                raise SpecError(f"dropout rate {rate} outside [0, 1)")
        self.feature_shape()

    def feature_shape(self) -> tuple[int, int, int]:
        """(C, H, W) reaching the flatten layer; raises SpecError on spatial underflow."""
        h, w = self.input_size
        for b, modes in enumerate(self.padding):
            for mode in modes:
                if mode == "valid" and (h < 3 or w < 3):
                    raise SpecError(f"input {self.input_size} too small: block {b + 1} conv sees {h}x{w}")
                h, w = layers.conv_output_size(h, mode), layers.conv_output_size(w, mode)
            if h < 2 or w < 2:
                raise SpecError(f"input {self.input_size} too small: block {b + 1} pool sees {h}x{w}")
            h, w = h // 2, w // 2
        return self.block_filters[-1], h, w

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        d["block_filters"] = list(self.block_filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


def min_input_size(spec: ModelSpec) -> int:
    """Smallest square input ``spec`` accepts."""
    size = 1
    while True:
        try:
            ModelSpec(**{**spec.to_dict(), "input_size": (size, size)}).feature_shape()
            return size
        except SpecError:
            size += 1


def parameter_shapes(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in checkpoint order."""
    shapes = []
    in_ch = spec.channels
    for b, filters in enumerate(spec.block_filters, start=1):
        for i in range(1, spec.convs_per_block + 1):
            shapes.append((f"block{b}.conv{i}.weight", (filters, in_ch, 3, 3)))
            shapes.append((f"block{b}.conv{i}.bias", (filters,)))
            in_ch = filters
    c, h, w = spec.feature_shape()
    shapes.append(("dense.weight", (c * h * w, spec.dense_units)))
    shapes.append(("dense.bias", (spec.dense_units,)))
    shapes.append(("output.weight", (spec.dense_units, spec.num_classes)))
    shapes.append(("output.bias", (spec.num_classes,)))
    return shapes


def parameter_count(spec: ModelSpec) -> int:
    """Closed form: sum over convs of out*in*9 + out, plus both dense layers."""
    total = 0
    in_ch = spec.channels
    for filters in spec.block_filters:
        for _ in range(spec.convs_per_block):
            total += filters * in_ch * 9 + filters
            in_ch = filters
    c, h, w = spec.feature_shape()
    features = c * h * w
    total += features * spec.dense_units + spec.dense_units
    total += spec.dense_units * spec.num_classes + spec.num_classes
    return total


class Model:
    def __init__(self, spec: ModelSpec, params: dict[str, Node], class_names=CLASS_NAMES):
        self.spec = spec
        self.params = params
        self.class_names = tuple(class_names)

    @property
    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def parameters(self) -> list[Node]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def forward(self, batch, mode: str = "eval", rng: SplitMix64 | None = None) -> Node:
        """Run the network on ``[N, C, H, W]`` input.

        Train mode returns logits and draws dropout masks from ``rng``; eval
        mode returns softmax probabilities and uses no randomness.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        if mode == "eval":
            with no_grad():
                return layers.softmax(self._forward(batch, mode, rng))
        return self._forward(batch, mode, rng)

    def eval_logits(self, batch) -> np.ndarray:
        """Eval-mode logits (dropout off, no graph recorded)."""
        with no_grad():
            return self._forward(batch, "eval", None).array

    def _forward(self, batch, mode, rng):
        x = batch if isinstance(batch, Node) else Node(Tensor.wrap(np.asarray(batch, dtype=self.dtype)))
        expected = (self.spec.channels, *self.spec.input_size)
        if x.array.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(f"batch shape {x.shape} does not match [N, {expected[0]}, {expected[1]}, {expected[2]}]")
        conv_drop = layers.DropoutConfig(self.spec.conv_dropout, mode)
        dense_drop = layers.DropoutConfig(self.spec.dense_dropout, mode)
        p = self.params
        for b, modes in enumerate(self.spec.padding, start=1):
            for i, pad in enumerate(modes, start=1):
                conv = layers.ConvParams(p[f"block{b}.conv{i}.weight"], p[f"block{b}.conv{i}.bias"], pad)
                x = layers.relu(layers.conv2d(x, conv))
            x = layers.dropout(layers.maxpool2(x), conv_drop, rng)
        x = layers.flatten(x)
        x = layers.relu(layers.dense(x, layers.DenseParams(p["dense.weight"], p["dense.bias"])))
        x = layers.dropout(x, dense_drop, rng)
        return layers.dense(x, layers.DenseParams(p["output.weight"], p["output.bias"]))

    def predict_proba(self, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
        """Eval-mode probabilities for a stack of images, batched to bound memory."""
        out = []
        for start in range(0, len(images), batch_size):
            out.append(self.forward(images[start : start + batch_size], "eval").array)
        if not out:
            return np.zeros((0, self.spec.num_classes), dtype=self.dtype)
        return np.concatenate(out)

    @property
    def dtype(self):
        return next(iter(self.params.values())).value.dtype


def build(spec: ModelSpec, seed: int | SplitMix64, dtype=np.float32) -> Model:
    """Fresh model with He-normal weights (std sqrt(2 / fan_in)) and zero biases."""
    spec.validate()
    rng = seed if isinstance(seed, SplitMix64) else SplitMix64(seed)
    params = {}
    for name, shape in parameter_shapes(spec):
        if name.endswith(".bias"):
            values = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            std = np.sqrt(2.0 / fan_in)
            values = (rng.normal(int(np.prod(shape))) * std).astype(dtype).reshape(shape)
        params[name] = leaf(Tensor.wrap(values), name=name)
    return Model(spec, params)


def save(model: Model, path) -> None:
    header = json.dumps(
        {"spec": model.spec.to_dict(), "class_names": list(model.class_names), "dtype": "float32"},
        sort_keys=True,
    ).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(header)), header]
    chunks.append(struct.pack("<I", len(model.params)))
    for name, node in model.params.items():
        raw_name = name.encode("utf-8")
        arr = node.value.array
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(
                f"checkpoint truncated reading {what}: need {n} bytes at offset {self.pos}, file has {len(self.buf)}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(buf: bytes) -> Model:
    r = _Reader(buf)
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"not a checkpoint: magic {buf[:4]!r} != {MAGIC!r}")
    r.pos = len(MAGIC)
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, this reader supports {FORMAT_VERSION}")
    (header_len,) = r.unpack("<I", "header length")
    raw_header = r.take(header_len, "header")
    try:
        header = json.loads(raw_header.decode("utf-8"))
        spec = ModelSpec.from_dict(header["spec"])
        spec.validate()
        class_names = tuple(header["class_names"])
    except (UnicodeDecodeError, ValueError, KeyError, TypeError, SpecError) as exc:
        raise CorruptHeaderError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("dtype") != "float32":
        raise CorruptHeaderError(f"unsupported tensor dtype {header.get('dtype')!r}")

    expected = dict(parameter_shapes(spec))
    (count,) = r.unpack("<I", "tensor count")
    params: dict[str, Node] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "tensor name length")
        try:
            name = r.take(name_len, "tensor name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptHeaderError(f"tensor name is not UTF-8: {exc}") from exc
        if name not in expected:
            raise UnknownLayerError(f"unknown parameter {name!r} in checkpoint")
        if name in params:
            raise CorruptHeaderError(f"parameter {name!r} appears twice")
        (rank,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{rank}I", f"dims of {name}")
        if tuple(dims) != expected[name]:
            raise CorruptHeaderError(f"parameter {name} has shape {tuple(dims)}, spec expects {expected[name]}")
        n = int(np.prod(dims))
        data = np.frombuffer(r.take(4 * n, f"data of {name}"), dtype="<f4").astype(np.float32)
        params[name] = leaf(Tensor.wrap(data.reshape(dims)), name=name)
    if r.pos != len(buf):
        raise CorruptHeaderError(f"{len(buf) - r.pos} unexpected trailing bytes after tensor data")
    missing = [n for n in expected if n not in params]
    if missing:
        raise TruncatedCheckpointError(f"checkpoint is missing parameters: {', '.join(missing)}")
    ordered = {n: params[n] for n in expected}
    return Model(spec, ordered, class_names)


def load(path) -> Model:
    return loads(Path(path).read_bytes())


def save_atomic(model: Model, path) -> None:
    """Write to ``<path>.partial`` then rename, so a crash never leaves a half file under ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    save(model, tmp)
    os.replace(tmp, path)
