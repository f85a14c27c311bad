"""Adam and the mini-batch training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .autograd import Node, backward
from .data import Dataset, make_batches
from .errors import DataError, NumericError, ShapeError
from .layers import softmax_cross_entropy, softmax_rows
from .model import Model
from .rng import SplitMix64


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    # Largest |delta p| applied by any step so far; callers may reset it.
    max_abs_update: float = 0.0


def adam_step(params: dict[str, Node], state: AdamState) -> None:
    """Apply one bias-corrected Adam update using the gradients stored on ``params``.

    Parameters without a gradient are treated as having gradient zero.
    Gradients are left in place; the caller zeroes them.
    """
    grads = {}
    for name, p in params.items():
        g = p.grad.array if p.grad is not None else np.zeros_like(p.value.array)
        if g.shape != p.value.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {p.value.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")
        grads[name] = g

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.t
    correction2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        w = p.value.array
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = (state.lr / correction1) * m / (np.sqrt(v / correction2) + state.epsilon)
        if step.size:
            state.max_abs_update = max(state.max_abs_update, float(np.abs(step).max()))
        w -= step.astype(w.dtype, copy=False)


class EpochResult(NamedTuple):
    loss: float
    accuracy: float


def train_epoch(
    model: Model,
    data: Dataset,
    adam: AdamState,
    rng: SplitMix64,
    batch_size: int = 32,
    dropout_rng: SplitMix64 | None = None,
    epoch: int | None = None,
) -> EpochResult:
    """One shuffled pass: forward, fused softmax cross-entropy, backward, Adam, zero grads.

    ``rng`` drives the shuffle; dropout masks come from ``dropout_rng`` (or
    ``rng`` when none is given). Loss is the sample-weighted batch mean and
    accuracy is measured on the train-mode logits.
    """
    if len(data) == 0:
        raise DataError("cannot train on an empty dataset")
    dropout_rng = dropout_rng if dropout_rng is not None else rng
    total_loss = 0.0
    correct = 0
    for i, batch in enumerate(make_batches(data, batch_size, shuffle=True, rng=rng)):
        logits = model.forward(batch.images, "train", dropout_rng)
        loss = softmax_cross_entropy(logits, batch.onehot.array)
        value = loss.value.array.item()
        if not math.isfinite(value):
            where = f"epoch {epoch}, batch {i}" if epoch is not None else f"batch {i}"
            raise NumericError(f"non-finite loss at {where}")
        backward(loss)
        adam_step(model.params, adam)
        model.zero_grad()
        total_loss += value * len(batch)
        correct += int((logits.array.argmax(axis=1) == np.asarray(batch.labels)).sum())
    return EpochResult(total_loss / len(data), correct / len(data))


class EvalResult(NamedTuple):
    loss: float
    accuracy: float
    probabilities: np.ndarray
    predictions: np.ndarray


def evaluate(model: Model, data: Dataset, batch_size: int = 32) -> EvalResult:
    """Eval-mode pass in dataset order: mean cross-entropy, accuracy and probabilities."""
    if len(data) == 0:
        raise DataError("cannot evaluate an empty dataset")
    probs = []
    total_loss = 0.0
    for batch in make_batches(data, batch_size, shuffle=False):
        logits = model.eval_logits(batch.images)
        z = logits.astype(np.float64)
        z = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        total_loss += float((lse - z[np.arange(len(batch)), batch.labels]).sum())
        probs.append(softmax_rows(logits))
    probabilities = np.concatenate(probs)
    predictions = probabilities.argmax(axis=1)
    accuracy = float((predictions == data.labels).mean())
    return EvalResult(total_loss / len(data), accuracy, probabilities, predictions)
