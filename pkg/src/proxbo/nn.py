"""Minimal dense-tensor layers with explicit reverse-mode gradients.

Just enough machinery for the two regressor architectures: 1D convolution
(stride 1, same padding), rectified-linear, dense layers, mean pooling over
positions, a tanh recurrence, and mean-squared-error. Everything is float64.
"""

from __future__ import annotations

import numpy as np


def he_uniform(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# layers: each forward returns (output, cache); backward takes (cache, dout)


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-padded 1D convolution via im2col and a single matmul.

    x: (B, L, Cin); w: (k, Cin, Cout) with k odd; b: (Cout,) -> (B, L, Cout).
    """
    k, cin, cout = w.shape
    pad = (k - 1) // 2
    bsz, l, _ = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    # (B, L, k, Cin) windows flattened to an im2col matrix
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)  # (B, L, Cin, k)
    col = win.transpose(0, 1, 3, 2).reshape(bsz * l, k * cin)
    out = col @ w.reshape(k * cin, cout) + b
    return out.reshape(bsz, l, cout), (col, w, (bsz, l))


def conv1d_backward(cache, dout: np.ndarray):
    col, w, (bsz, l) = cache
    k, cin, cout = w.shape
    pad = (k - 1) // 2
    dout2 = dout.reshape(bsz * l, cout)
    dw = (col.T @ dout2).reshape(k, cin, cout)
    db = dout2.sum(axis=0)
    dcol = (dout2 @ w.reshape(k * cin, cout).T).reshape(bsz, l, k, cin)
    # scatter the window gradients back onto the padded input
    dxp = np.zeros((bsz, l + 2 * pad, cin))
    for j in range(k):
        dxp[:, j:j + l, :] += dcol[:, :, j, :]
    return dxp[:, pad:pad + l, :], dw, db


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, (x, w)


def dense_backward(cache, dout: np.ndarray):
    x, w = cache
    dw = x.reshape(-1, x.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])
    db = dout.reshape(-1, dout.shape[-1]).sum(axis=0)
    return dout @ w.T, dw, db


def relu_forward(x: np.ndarray):
    out = np.maximum(x, 0.0)
    return out, (x > 0.0)


def relu_backward(cache, dout: np.ndarray):
    return dout * cache


def mean_pool_forward(x: np.ndarray):
    """Mean over the position axis: (B, L, C) -> (B, C)."""
    return x.mean(axis=1), x.shape


def mean_pool_backward(cache, dout: np.ndarray):
    b, l, c = cache
    return np.broadcast_to(dout[:, None, :] / l, (b, l, c)).copy()


def mse_forward(pred: np.ndarray, target: np.ndarray):
    diff = pred - target
    return float(np.mean(diff * diff)), diff


def mse_backward(cache: np.ndarray):
    diff = cache
    return 2.0 * diff / diff.size


class Adam:
    """Adaptive moment estimation over a dict of parameter arrays."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            params[k] -= self.lr * (self.m[k] / bias1) / (np.sqrt(self.v[k] / bias2) + self.eps)
