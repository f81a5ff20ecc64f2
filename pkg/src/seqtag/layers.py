"""Neural building blocks: embeddings, an LSTM cell, bidirectional runs.

The LSTM is the standard forget-gate cell without peepholes. Gates are
packed into one pre-activation vector in the order input, forget,
candidate, output:

    i = sigmoid(.)   f = sigmoid(.)   g = tanh(.)   o = sigmoid(.)
    c = f * c_prev + i * g
    h = o * tanh(c)

Weights are initialized Glorot-uniform; the forget-gate bias starts at
1.0 and all other biases at 0, which keeps early gradients flowing.
Initial hidden and cell states are zero vectors and are not learned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    const_like,
    matmul,
    multiply,
    narrow,
    pick_row,
    sigmoid,
    tanh,
)


@dataclass
class EmbeddingTable:
    """Lookup table of row vectors with a designated OOV row."""

    matrix: Tensor
    oov_row: int
    trainable: bool = True

    def __post_init__(self):
        if self.matrix.values.ndim != 2:
            raise ValueError(f"EmbeddingTable: matrix must be 2-D, got {self.matrix.shape}")
        rows = self.matrix.shape[0]
        if not 0 <= self.oov_row < rows:
            raise ValueError(f"EmbeddingTable: oov_row {self.oov_row} outside [0, {rows})")
        if not self.trainable:
            self.matrix.constant = True

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def embedding_lookup(table: EmbeddingTable, token_id: int) -> Tensor:
    if not 0 <= token_id < table.vocab_size:
        raise ValueError(
            f"embedding_lookup: id {token_id} outside [0, {table.vocab_size})"
        )
    return pick_row(table.matrix, token_id)


@dataclass
class LstmParams:
    """Packed cell parameters; see the module docstring for gate order."""

    w_x: Tensor  # [input_dim, 4*hidden]
    w_h: Tensor  # [hidden, 4*hidden]
    b: Tensor    # [4*hidden]
    hidden_size: int

    def __post_init__(self):
        h = self.hidden_size
        if h <= 0:
            raise ValueError("LstmParams: hidden_size must be positive")
        if self.w_x.values.ndim != 2 or self.w_x.shape[1] != 4 * h:
            raise ValueError(f"LstmParams: w_x shape {self.w_x.shape} != (input_dim, {4 * h})")
        if self.w_h.shape != (h, 4 * h):
            raise ValueError(f"LstmParams: w_h shape {self.w_h.shape} != ({h}, {4 * h})")
        if self.b.shape != (4 * h,):
            raise ValueError(f"LstmParams: b shape {self.b.shape} != ({4 * h},)")

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[0]


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def init_lstm_params(
    rng: np.random.Generator,
    input_dim: int,
    hidden_size: int,
    dtype,
    forget_bias: float = 1.0,
) -> LstmParams:
    w_x = Tensor(glorot_uniform(rng, input_dim, 4 * hidden_size, dtype))
    w_h = Tensor(glorot_uniform(rng, hidden_size, 4 * hidden_size, dtype))
    b = np.zeros(4 * hidden_size, dtype=dtype)
    b[hidden_size : 2 * hidden_size] = forget_bias
    return LstmParams(w_x, w_h, Tensor(b), hidden_size)


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmParams):
    """One cell update; returns (h, c)."""
    h = p.hidden_size
    if x.shape != (p.input_dim,) or h_prev.shape != (h,) or c_prev.shape != (h,):
        raise ValueError(
            f"lstm_step: got x {x.shape}, h {h_prev.shape}, c {c_prev.shape} "
            f"for cell expecting x ({p.input_dim},), state ({h},)"
        )
    pre = add(add(matmul(x, p.w_x), matmul(h_prev, p.w_h)), p.b)
    gate_i = sigmoid(narrow(pre, 0, h))
    gate_f = sigmoid(narrow(pre, h, 2 * h))
    gate_g = tanh(narrow(pre, 2 * h, 3 * h))
    gate_o = sigmoid(narrow(pre, 3 * h, 4 * h))
    c = add(multiply(gate_f, c_prev), multiply(gate_i, gate_g))
    new_h = multiply(gate_o, tanh(c))
    return new_h, c


@dataclass
class BiLstmOutput:
    per_step: list          # [concat(forward_t, backward_t)] per position
    forward_last: Tensor    # forward state after the final position
    backward_first: Tensor  # backward state after scanning back to position 0


def bilstm_run(inputs, fwd: LstmParams, bwd: LstmParams) -> BiLstmOutput:
    """Run both directions from zero initial states and join per position."""
    inputs = list(inputs)
    if not inputs:
        raise ValueError("bilstm_run: empty input sequence")
    if fwd.hidden_size != bwd.hidden_size:
        raise ValueError(
            f"bilstm_run: hidden sizes differ ({fwd.hidden_size} vs {bwd.hidden_size})"
        )
    hsize = fwd.hidden_size
    zero = const_like(0.0, inputs[0], (hsize,))

    fwd_states = []
    h, c = zero, zero
    for x in inputs:
        h, c = lstm_step(x, h, c, fwd)
        fwd_states.append(h)

    bwd_states = [None] * len(inputs)
    h, c = zero, zero
    for t in range(len(inputs) - 1, -1, -1):
        h, c = lstm_step(inputs[t], h, c, bwd)
        bwd_states[t] = h

    per_step = [concat((f, b)) for f, b in zip(fwd_states, bwd_states)]
    return BiLstmOutput(per_step, fwd_states[-1], bwd_states[0])


def dense_tanh(h: Tensor, w_d: Tensor) -> Tensor:
    """Narrow nonlinear layer on top of the recurrent states."""
    if w_d.values.ndim != 2 or w_d.shape[1] != h.shape[0]:
        raise ValueError(f"dense_tanh: weight {w_d.shape} does not apply to {h.shape}")
    return tanh(matmul(w_d, h))
