"""Fully connected ReLU network with hand-written backpropagation."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class MlpParams:
    sizes: tuple
    weights: list  # weights[i] has shape (sizes[i], sizes[i + 1])
    biases: list

    def __post_init__(self):
        self.sizes = tuple(int(n) for n in self.sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("one weight matrix and bias per layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ValueError(f"layer {i} has shapes {W.shape}, {b.shape}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self):
        return MlpParams(self.sizes, [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype):
        return MlpParams(self.sizes, [W.astype(dtype) for W in self.weights], [b.astype(dtype) for b in self.biases])

    def load_from(self, other):
        """Copy ``other``'s values into this network's arrays in place."""
        for dst, src in zip(self.weights + self.biases, other.weights + other.biases):
            dst[...] = src

    def to_dict(self):
        return {
            "sizes": list(self.sizes),
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc, dtype=np.float64):
        return cls(
            doc["sizes"],
            [np.asarray(W, dtype=dtype) for W in doc["weights"]],
            [np.asarray(b, dtype=dtype) for b in doc["biases"]],
        )


def init_mlp(sizes, rng, dtype=np.float32):
    """Uniform ``(-1/sqrt(fan_in), 1/sqrt(fan_in))`` initialization for weights and biases."""
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        k = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-k, k, size=(n_in, n_out)).astype(dtype))
        biases.append(rng.uniform(-k, k, size=n_out).astype(dtype))
    return MlpParams(tuple(sizes), weights, biases)


def save_checkpoint(params, path):
    with open(path, "w") as fh:
        json.dump(params.to_dict(), fh)


def load_checkpoint(path, dtype=np.float64):
    with open(path) as fh:
        return MlpParams.from_dict(json.load(fh), dtype)


def _forward(params, x):
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ W
        h += b
        if i < last:
            np.maximum(h, 0.0, out=h)
        acts.append(h)
    return acts


def mlp_forward(params, x):
    """Action values for a batch ``x`` of shape ``(B, sizes[0])`` (or a single input)."""
    x = np.asarray(x, dtype=params.dtype)
    single = x.ndim == 1
    if x.shape[-1] != params.sizes[0]:
        raise ValueError(f"input dimension {x.shape[-1]} does not match {params.sizes[0]}")
    out = _forward(params, x[None] if single else x)[-1]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite network output")
    return out[0] if single else out


def mlp_forward_cached(params, x):
    """Forward pass keeping every layer's activations for ``backprop``."""
    acts = _forward(params, np.asarray(x, dtype=params.dtype))
    if not np.all(np.isfinite(acts[-1])):
        raise FloatingPointError("non-finite network output")
    return acts


def backprop(params, acts, dout, rows=None):
    """Parameter gradients given ``dL/d output``.

    ``rows`` restricts the pass to the first ``rows`` samples of a cached
    forward pass (the rest only fed the forward computation).
    """
    if rows is not None:
        acts = [a[:rows] for a in acts]
    grads_w, grads_b = [None] * len(params.weights), [None] * len(params.biases)
    delta = dout
    for i in range(len(params.weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = np.multiply(delta @ params.weights[i].T, acts[i] > 0)
    return grads_w, grads_b


def loss_output_grad(q_sa, targets, actions, num_actions, clip_targets=None, clip_mask=None, eta=0.0):
    """Loss value and ``dL/d output`` for the squared Bellman error.

    ``L = mean (q - y)^2 + eta * mean(mask * |q - c|)`` where ``q`` is the
    acted action's value, ``y`` the target and ``c`` the clipped target. The
    clip term only acts on samples flagged in ``clip_mask``.
    """
    B = q_sa.shape[0]
    err = q_sa - targets
    loss = float(np.mean(err * err))
    g = 2.0 * err / B
    clip_loss = 0.0
    if clip_targets is not None and eta > 0.0:
        gap = q_sa - clip_targets
        if clip_mask is not None:
            gap = np.where(clip_mask, gap, 0.0)
        clip_loss = float(np.mean(np.abs(gap)))
        g = g + eta * np.sign(gap) / B
    dout = np.zeros((B, num_actions), dtype=q_sa.dtype)
    dout[np.arange(B), actions] = g
    return loss, clip_loss, dout


def mlp_gradients(params, x, targets, actions, clip_targets=None, clip_mask=None, eta=0.0):
    """Gradients of the Bellman loss (plus the weighted clip loss) for a batch.

    Returns ``(grads_w, grads_b, loss)``.
    """
    acts = mlp_forward_cached(params, x)
    out = acts[-1]
    actions = np.asarray(actions, dtype=np.int64)
    q_sa = out[np.arange(out.shape[0]), actions]
    targets = np.asarray(targets, dtype=out.dtype)
    if clip_targets is not None:
        clip_targets = np.asarray(clip_targets, dtype=out.dtype)
    loss, clip_loss, dout = loss_output_grad(q_sa, targets, actions, out.shape[1], clip_targets, clip_mask, eta)
    gw, gb = backprop(params, acts, dout)
    if not all(np.all(np.isfinite(g)) for g in gw + gb):
        raise FloatingPointError("non-finite gradients")
    return gw, gb, loss + eta * clip_loss


def sgd_step(params, grads_w, grads_b, lr):
    for W, g in zip(params.weights, grads_w):
        W -= lr * g
    for b, g in zip(params.biases, grads_b):
        b -= lr * g
