"""Small numpy helpers shared by the hand-written networks."""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    out = np.empty_like(np.asarray(x, dtype=float))
    x = np.asarray(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def log_sigmoid(x):
    return -softplus(-np.asarray(x, dtype=float))


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    norm = global_norm(grads)
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


class MomentumSGD:
    """Heavy-ball SGD over a dict of parameter arrays (updated in place)."""

    def __init__(self, params: dict, lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        for k, g in grads.items():
            vel = self.velocity[k]
            vel *= self.momentum
            vel -= self.lr * g
            self.params[k] += vel


def dense_tanh_forward(x, W1, b1, W2, b2):
    h = np.tanh(x @ W1 + b1)
    return h, h @ W2 + b2


def dense_tanh_backward(x, h, W1, W2, dout):
    """Gradients of a tanh MLP given d(loss)/d(output). Returns (grads, dx)."""
    g = {"W2": h.T @ dout, "b2": dout.sum(axis=0)}
    dh = (dout @ W2.T) * (1.0 - h * h)
    g["W1"] = x.T @ dh
    g["b1"] = dh.sum(axis=0)
    return g, dh @ W1.T
