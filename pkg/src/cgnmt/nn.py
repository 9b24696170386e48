"""Recurrent cell, parameter initialization, and the SGD optimizer."""

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


def uniform_init(rng, shape, dtype, scale=0.1):
    """Uniform(-scale, scale) initialization."""
    return Tensor(rng.uniform(-scale, scale, size=shape).astype(dtype), requires_grad=True)


def zeros_init(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class LSTMCell:
    """Standard LSTM recurrence with gates ordered (input, forget, cand, output).

    One fused weight matrix W: [(input_size + hidden) x 4*hidden] applied to
    [x ; h]. The forget-gate bias block starts at 1.
    """

    def __init__(self, input_size, hidden_size, rng, dtype, name="lstm"):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.name = name
        self.w = uniform_init(rng, (input_size + hidden_size, 4 * hidden_size), dtype)
        bias = np.zeros(4 * hidden_size, dtype=dtype)
        bias[hidden_size:2 * hidden_size] = 1.0
        self.b = Tensor(bias, requires_grad=True)

    def params(self):
        return {f"{self.name}.W": self.w, f"{self.name}.b": self.b}

    def step(self, x, state):
        return lstm_cell(x, state, self.w, self.b)

    def initial_state(self, batch, dtype):
        h = Tensor(np.zeros((batch, self.hidden_size), dtype=dtype))
        c = Tensor(np.zeros((batch, self.hidden_size), dtype=dtype))
        return h, c


def lstm_cell(x, state, w, b):
    """One LSTM step. x: [B, I]; state: (h, c) each [B, D]. Returns (h', c')."""
    h, c = state
    d = h.data.shape[1]
    if x.data.shape[1] + d != w.data.shape[0] or w.data.shape[1] != 4 * d:
        raise ShapeError(
            f"lstm_cell: input {x.data.shape} with state dim {d} does not match weights {w.data.shape}"
        )
    z = ad.add(ad.matmul(ad.concat([x, h], axis=1), w), b)
    i = ad.sigmoid(ad.narrow(z, 1, 0, d))
    f = ad.sigmoid(ad.narrow(z, 1, d, d))
    g = ad.tanh(ad.narrow(z, 1, 2 * d, d))
    o = ad.sigmoid(ad.narrow(z, 1, 3 * d, d))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


class SgdState:
    """Plain SGD over a named parameter set; p <- p - lr * grad."""

    def __init__(self, params, learning_rate, max_grad_norm=None):
        if learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {learning_rate}")
        self.params = dict(params)
        self.learning_rate = float(learning_rate)
        self.max_grad_norm = max_grad_norm


def global_grad_norm(params):
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))


def sgd_step(state, grads=None):
    """Apply one SGD update from `grads` (or from each tensor's .grad)."""
    if grads is None:
        grads = {name: p.grad for name, p in state.params.items()}
    clip = 1.0
    if state.max_grad_norm is not None:
        norm = global_grad_norm(state.params)
        if norm > state.max_grad_norm:
            clip = state.max_grad_norm / norm
    for name, p in state.params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter {name} shape {p.data.shape}")
        p.data = p.data - (state.learning_rate * clip) * g.astype(p.data.dtype)
