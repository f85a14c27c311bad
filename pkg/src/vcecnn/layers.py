"""Forward and backward kernels for the network's layers.

All layers take and return :class:`~vcecnn.autograd.Node` objects and keep the
dtype of their input, so the same code serves float32 training and float64
gradient checks. Convolution is a 3x3, stride-1 cross-correlation lowered to a
single GEMM through im2col.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Node, record
from .errors import ConfigError, LabelError, NumericError, ShapeError
from .rng import SplitMix64

KERNEL = 3
PADDINGS = ("same", "valid")


@dataclass
class ConvParams:
    weights: Node  # [out_ch, in_ch, 3, 3]
    bias: Node  # [out_ch]
    padding: str = "same"

    def __post_init__(self):
        if self.padding not in PADDINGS:
            raise ConfigError(f"padding must be one of {PADDINGS}, got {self.padding!r}")
        shape = self.weights.shape
        if len(shape) != 4 or shape[2:] != (KERNEL, KERNEL):
            raise ShapeError(f"conv weights must be [out, in, 3, 3], got {shape}")
        if self.bias.shape != (shape[0],):
            raise ShapeError(f"conv bias must be [{shape[0]}], got {self.bias.shape}")


@dataclass
class DenseParams:
    weights: Node  # [in_features, out_features]
    bias: Node  # [out_features]

    def __post_init__(self):
        if len(self.weights.shape) != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(f"dense params mismatch: W {self.weights.shape}, b {self.bias.shape}")


@dataclass
class DropoutConfig:
    rate: float
    mode: str = "train"

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.rate}")
        if self.mode not in ("train", "eval"):
            raise ConfigError(f"dropout mode must be 'train' or 'eval', got {self.mode!r}")


def im2col(x: np.ndarray, pad: int) -> np.ndarray:
    """Unroll every 3x3 window of a channels-last batch into one row.

    ``[N, H, W, C] -> [N*H'*W', 9*C]``; columns are ordered (ky, kx, c). The
    nine window offsets are copied as contiguous slabs.
    """
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    n, hp, wp, c = x.shape
    h_out, w_out = hp - KERNEL + 1, wp - KERNEL + 1
    cols = np.empty((n, h_out, w_out, KERNEL * KERNEL, c), dtype=x.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            cols[:, :, :, i * KERNEL + j, :] = x[:, i : i + h_out, j : j + w_out, :]
    return cols.reshape(n * h_out * w_out, KERNEL * KERNEL * c)


def col2im(cols: np.ndarray, x_shape: tuple[int, ...], pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add rows back onto a ``[N, H, W, C]`` grid."""
    n, h, w, c = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    h_out, w_out = hp - KERNEL + 1, wp - KERNEL + 1
    cols = cols.reshape(n, h_out, w_out, KERNEL * KERNEL, c)
    out = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            out[:, i : i + h_out, j : j + w_out, :] += cols[:, :, :, i * KERNEL + j, :]
    if pad:
        out = out[:, pad:-pad, pad:-pad, :]
    return out


def conv_output_size(size: int, padding: str) -> int:
    return size if padding == "same" else size - (KERNEL - 1)


def conv2d(x: Node, p: ConvParams) -> Node:
    xa, w, b = x.array, p.weights.array, p.bias.array
    if xa.ndim != 4:
        raise ShapeError(f"conv2d expects [N, C, H, W], got {xa.shape}")
    n, c, h, wd = xa.shape
    out_ch, in_ch = w.shape[:2]
    if c != in_ch:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weights expect {in_ch}")
    if p.padding == "valid" and (h < KERNEL or wd < KERNEL):
        raise ShapeError(f"valid conv2d needs H, W >= 3, got {h}x{wd}")
    pad = 1 if p.padding == "same" else 0
    h_out, w_out = conv_output_size(h, p.padding), conv_output_size(wd, p.padding)

    x_nhwc = np.ascontiguousarray(xa.transpose(0, 2, 3, 1))
    cols = im2col(x_nhwc, pad)
    # Weight matrix rows follow the (ky, kx, c) column order of im2col.
    wmat = np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(out_ch, -1)
    out = cols @ wmat.T
    out += b
    y = np.ascontiguousarray(out.reshape(n, h_out, w_out, out_ch).transpose(0, 3, 1, 2))

    def backward_fn(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, out_ch)
        gw = (g2.T @ cols).reshape(out_ch, KERNEL, KERNEL, in_ch).transpose(0, 3, 1, 2)
        gb = g2.sum(axis=0)
        gx = None
        if x.requires_grad:
            gx = np.ascontiguousarray(col2im(g2 @ wmat, x_nhwc.shape, pad).transpose(0, 3, 1, 2))
        return gx, np.ascontiguousarray(gw), gb

    return record("conv2d", (x, p.weights, p.bias), y, backward_fn)


def maxpool2(x: Node) -> Node:
    """2x2 max-pooling, stride 2; an odd trailing row or column is dropped.

    Gradients go to the first maximum of each window in row-major order.
    The chosen window offsets are kept on the closure as ``argmax``.
    """
    xa = x.array
    if xa.ndim != 4:
        raise ShapeError(f"maxpool2 expects [N, C, H, W], got {xa.shape}")
    n, c, h, w = xa.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2 needs H, W >= 2, got {h}x{w}")
    ho, wo = h // 2, w // 2
    windows = xa[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(n, c, ho, wo, 4)
    argmax = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        gw = np.zeros((n, c, ho, wo, 4), dtype=g.dtype)
        np.put_along_axis(gw, argmax[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(xa)
        gx[:, :, : 2 * ho, : 2 * wo] = (
            gw.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
        )
        return (gx,)

    backward_fn.argmax = argmax
    return record("maxpool2", (x,), np.ascontiguousarray(y), backward_fn)


def relu(x: Node) -> Node:
    xa = x.array
    positive = xa > 0
    return record("relu", (x,), np.maximum(xa, 0), lambda g: (np.where(positive, g, 0),))


def dropout(x: Node, cfg: DropoutConfig, rng: SplitMix64 | None) -> Node:
    """Inverted dropout: zero with probability ``rate``, scale survivors by 1/(1-rate)."""
    if cfg.mode == "eval" or cfg.rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("train-mode dropout needs a PRNG")
    xa = x.array
    keep = rng.random(xa.size).reshape(xa.shape) >= cfg.rate
    scale = xa.dtype.type(1.0 / (1.0 - cfg.rate))
    mask = keep.astype(xa.dtype) * scale
    return record("dropout", (x,), xa * mask, lambda g: (g * mask,), stochastic=True)


def flatten(x: Node) -> Node:
    xa = x.array
    if xa.ndim != 4:
        raise ShapeError(f"flatten expects [N, C, H, W], got {xa.shape}")
    return record("flatten", (x,), xa.reshape(xa.shape[0], -1), lambda g: (g.reshape(xa.shape),))


def dense(x: Node, p: DenseParams) -> Node:
    xa, w, b = x.array, p.weights.array, p.bias.array
    if xa.ndim != 2 or xa.shape[1] != w.shape[0]:
        raise ShapeError(f"dense input {xa.shape} does not match weights {w.shape}")

    def backward_fn(g):
        return g @ w.T, xa.T @ g, g.sum(axis=0)

    return record("dense", (x, p.weights, p.bias), xa @ w + b, backward_fn)


def softmax_rows(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array, shifted by the row max."""
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax(logits: Node) -> Node:
    z = logits.array
    if z.ndim != 2 or z.shape[1] < 1:
        raise ShapeError(f"softmax expects [N, K], got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax received non-finite logits")
    p = softmax_rows(z)

    def backward_fn(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return record("softmax", (logits,), p, backward_fn)


def softmax_cross_entropy(logits: Node, onehot: np.ndarray) -> Node:
    """Mean categorical cross-entropy from raw logits via log-sum-exp."""
    z = logits.array
    onehot = np.asarray(onehot)
    if z.ndim != 2 or onehot.shape != z.shape:
        raise ShapeError(f"logits {z.shape} and one-hot {onehot.shape} must both be [N, K]")
    if not (np.all((onehot == 0) | (onehot == 1)) and np.all(onehot.sum(axis=1) == 1)):
        raise LabelError("each one-hot row must contain exactly one 1")
    if not np.all(np.isfinite(z)):
        raise NumericError("cross-entropy received non-finite logits")
    n = z.shape[0]
    row_max = z.max(axis=1, keepdims=True)
    shifted = z - row_max
    lse = np.log(np.exp(shifted).sum(axis=1))
    true_logit = (shifted * onehot).sum(axis=1)
    loss = np.asarray((lse - true_logit).mean(), dtype=z.dtype)

    def backward_fn(g):
        return (g * (softmax_rows(z) - onehot.astype(z.dtype)) / n,)

    return record("softmax_cross_entropy", (logits,), loss, backward_fn)


def one_hot(labels, num_classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.size, num_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out
