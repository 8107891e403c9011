"""Peephole LSTM, stacked bidirectional encoder, embeddings and softmax heads.

All layers hold :class:`~morphtag.autodiff.Tensor` parameters and emit ops
onto a caller-supplied :class:`~morphtag.autodiff.Graph`. Sequences are
batch-major ``(B, T, D)`` and right-padded; ``mask`` is ``(B, T)`` with 1 for
real tokens.
"""
from __future__ import annotations

import numpy as np

from .autodiff import DTYPE, ShapeError, dropout_mask, parameter

PAD, UNK = 0, 1


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class LstmParams:
    """One LSTM layer with peepholes on the input, forget and output gates.

    Gate blocks in ``W``/``U``/``b`` are ordered input, forget, cell, output.
    """

    def __init__(self, input_size, hidden_size, rng, name="lstm"):
        if input_size <= 0 or hidden_size <= 0:
            raise ValueError("LSTM sizes must be positive")
        H = hidden_size
        self.input_size = input_size
        self.hidden_size = H
        self.W = parameter(glorot(rng, input_size, 4 * H), f"{name}.W")
        self.U = parameter(glorot(rng, H, 4 * H), f"{name}.U")
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # forget gate
        self.b = parameter(b, f"{name}.b")
        self.p_i = parameter(np.zeros(H), f"{name}.p_i")
        self.p_f = parameter(np.zeros(H), f"{name}.p_f")
        self.p_o = parameter(np.zeros(H), f"{name}.p_o")

    def parameters(self):
        return [self.W, self.U, self.b, self.p_i, self.p_f, self.p_o]


def lstm_cell_step(g, params, x_t, h_prev, c_prev, x_proj=None):
    """One peephole LSTM step; returns ``(h_t, c_t)``.

    ``x_proj`` may carry a precomputed ``x_t @ W + b`` (the encoder projects
    whole sequences at once); ``x_t`` is then ignored.
    """
    H = params.hidden_size
    if x_proj is None:
        if x_t.shape[-1] != params.input_size:
            raise ShapeError(f"LSTM input size {x_t.shape[-1]} != {params.input_size}")
        x_proj = g.add(g.matmul(x_t, params.W), params.b)
    if h_prev.shape[-1] != H or c_prev.shape[-1] != H:
        raise ShapeError(f"LSTM state size != hidden size {H}")
    z = g.add(x_proj, g.matmul(h_prev, params.U))
    i = g.sigmoid(g.add(g.slice(z, 0, H), g.mul(c_prev, params.p_i)))
    f = g.sigmoid(g.add(g.slice(z, H, 2 * H), g.mul(c_prev, params.p_f)))
    cand = g.tanh(g.slice(z, 2 * H, 3 * H))
    c_t = g.add(g.mul(f, c_prev), g.mul(i, cand))
    o = g.sigmoid(g.add(g.slice(z, 3 * H, 4 * H), g.mul(c_t, params.p_o)))
    h_t = g.mul(o, g.tanh(c_t))
    return h_t, c_t


def run_lstm(g, params, inputs, fused=True):
    """Left-to-right pass over a right-padded ``(B, T, D)`` tensor.

    Returns the ``(B, T, H)`` hidden states. Right padding means padded steps
    only ever follow real ones, so real positions never see padding.
    ``fused=False`` chains :func:`lstm_cell_step` nodes instead of the single
    scan node (same values, many more graph nodes).
    """
    B, T = inputs.shape[0], inputs.shape[1]
    if inputs.shape[-1] != params.input_size:
        raise ShapeError(f"LSTM input size {inputs.shape[-1]} != {params.input_size}")
    proj = g.add(g.matmul(inputs, params.W), params.b)
    if fused:
        return g.lstm_scan(proj, params.U, params.p_i, params.p_f, params.p_o)
    zeros = g.constant(np.zeros((B, params.hidden_size)))
    h, c = zeros, zeros
    outs = []
    for t in range(T):
        h, c = lstm_cell_step(g, params, None, h, c, x_proj=g.take(proj, t, axis=1))
        outs.append(h)
    return g.stack(outs, axis=1)


def reverse_index(lengths, T):
    """Per-row time permutation reversing each sequence within its length."""
    idx = np.tile(np.arange(T), (len(lengths), 1))
    for b, n in enumerate(lengths):
        idx[b, :n] = np.arange(n - 1, -1, -1)
    return idx


class BiLstmStack:
    """Stacked LSTMs per direction followed by ``tanh(affine([fwd; bwd]))``."""

    def __init__(self, input_size, hidden_size, rng, layers=2, keep_prob=0.7,
                 output_size=None, name="bilstm"):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.keep_prob = keep_prob
        self.output_size = output_size or hidden_size
        self.fwd, self.bwd = [], []
        for k in range(layers):
            size_in = input_size if k == 0 else hidden_size
            self.fwd.append(LstmParams(size_in, hidden_size, rng, f"{name}.fwd{k}"))
            self.bwd.append(LstmParams(size_in, hidden_size, rng, f"{name}.bwd{k}"))
        self.W_out = parameter(glorot(rng, 2 * hidden_size, self.output_size), f"{name}.W_out")
        self.b_out = parameter(np.zeros(self.output_size), f"{name}.b_out")

    def parameters(self):
        params = []
        for layer in self.fwd + self.bwd:
            params.extend(layer.parameters())
        return params + [self.W_out, self.b_out]

    def swapped(self):
        """Directions exchanged, with the output projection's halves swapped to match."""
        other = object.__new__(BiLstmStack)
        other.__dict__.update(self.__dict__)
        other.fwd, other.bwd = self.bwd, self.fwd
        H = self.hidden_size
        W = self.W_out.value
        other.W_out = parameter(np.concatenate([W[H:], W[:H]]), self.W_out.name)
        return other


def _stack_pass(g, layers, x, keep_prob, rng, train):
    for k, layer in enumerate(layers):
        if k > 0 and train and keep_prob < 1.0:
            x = g.dropout(x, dropout_mask(x.shape, keep_prob, rng))
        x = run_lstm(g, layer, x)
    return x


def bilstm_states(g, stack, inputs, mask, rng=None, train=False):
    """Top-layer forward and backward states, each ``(B, T, H)``."""
    mask = np.asarray(mask, dtype=DTYPE)
    if inputs.shape[1] == 0 or mask.sum() == 0:
        raise ValueError("cannot encode an empty sequence")
    if inputs.shape[-1] != stack.input_size:
        raise ShapeError(f"encoder input size {inputs.shape[-1]} != {stack.input_size}")
    lengths = mask.sum(axis=1).astype(int)
    T = inputs.shape[1]
    forward = _stack_pass(g, stack.fwd, inputs, stack.keep_prob, rng, train)
    rev = reverse_index(lengths, T)
    backward = _stack_pass(g, stack.bwd, g.take_along(inputs, rev, axis=1),
                           stack.keep_prob, rng, train)
    backward = g.take_along(backward, rev, axis=1)
    return forward, backward


def bilstm_encode(g, stack, inputs, mask, rng=None, train=False):
    """Joined context vectors ``tanh([fwd; bwd] @ W_out + b_out)``, zero at padding."""
    forward, backward = bilstm_states(g, stack, inputs, mask, rng, train)
    joined = g.tanh(g.add(g.matmul(g.concat([forward, backward], axis=-1), stack.W_out),
                          stack.b_out))
    return g.mul(joined, np.asarray(mask, dtype=DTYPE)[..., None])


class EmbeddingTable:
    """Embedding matrix with reserved PAD (all-zero, frozen) and UNK rows."""

    def __init__(self, vocab_size, dim, rng, name="emb", init=None, scale=None):
        if vocab_size < 2 or dim <= 0:
            raise ValueError("embedding table needs PAD, UNK and a positive dim")
        if init is None:
            scale = scale if scale is not None else np.sqrt(3.0 / dim)
            init = rng.uniform(-scale, scale, size=(vocab_size, dim))
        init = np.array(init, dtype=DTYPE)
        if init.shape != (vocab_size, dim):
            raise ShapeError(f"embedding init {init.shape} != {(vocab_size, dim)}")
        init[PAD] = 0.0
        self.table = parameter(init, name)

    @property
    def vocab_size(self):
        return self.table.value.shape[0]

    @property
    def dim(self):
        return self.table.value.shape[1]

    def lookup(self, g, ids):
        return g.gather(self.table, ids, frozen_id=PAD)

    def parameters(self):
        return [self.table]


class Head:
    """Affine output layer over a fixed tag vocabulary."""

    def __init__(self, input_size, n_classes, rng, name="head"):
        self.n_classes = n_classes
        self.W = parameter(glorot(rng, input_size, n_classes), f"{name}.W")
        self.b = parameter(np.zeros(n_classes), f"{name}.b")

    def logits(self, g, h):
        if h.shape[-1] != self.W.value.shape[0]:
            raise ShapeError(f"head input {h.shape[-1]} != {self.W.value.shape[0]}")
        return g.add(g.matmul(h, self.W), self.b)

    def parameters(self):
        return [self.W, self.b]


def linear_softmax_head(g, h, head):
    """Probability distribution over the head's tag vocabulary."""
    return g.softmax(head.logits(g, h))
