"""Character-level word representations and word/char combination.

A word's characters run through their own bidirectional LSTM; the final
state of each direction is concatenated and projected through tanh into
a vector ``m`` the same length as the word embedding. Two ways to merge
``m`` with the word embedding ``x``:

* concatenation, doubling the representation fed to the word-level LSTM
* a sigmoid gate ``z`` predicted from both vectors, combining them as
  ``z * x + (1 - z) * m`` feature by feature

The gated variant comes with an auxiliary objective that pulls ``m``
toward ``x`` for in-vocabulary tokens, summing ``1 - cos(m, x)`` over
them. The word-embedding side enters through ``stop_gradient``, so the
pull acts on the character composer only, and tokens mapped to the OOV
row are skipped entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    const_like,
    cosine_similarity,
    matmul,
    multiply,
    reduce_sum,
    sigmoid,
    stop_gradient,
    tanh,
)
from .layers import EmbeddingTable, LstmParams, bilstm_run, embedding_lookup


@dataclass
class CharComposerParams:
    char_embeddings: EmbeddingTable
    fwd: LstmParams
    bwd: LstmParams
    w_m: Tensor  # [word_dim, 2*char_hidden]

    def __post_init__(self):
        want = 2 * self.fwd.hidden_size
        if self.w_m.values.ndim != 2 or self.w_m.shape[1] != want:
            raise ValueError(
                f"CharComposerParams: w_m shape {self.w_m.shape} != (word_dim, {want})"
            )

    @property
    def word_dim(self) -> int:
        return self.w_m.shape[0]


def compose_word(char_ids, p: CharComposerParams) -> Tensor:
    """Build the character-level word vector m for one token."""
    char_ids = list(char_ids)
    if not char_ids:
        raise ValueError("compose_word: empty character sequence")
    embs = [embedding_lookup(p.char_embeddings, c) for c in char_ids]
    out = bilstm_run(embs, p.fwd, p.bwd)
    h_star = concat((out.forward_last, out.backward_first))
    return tanh(matmul(p.w_m, h_star))


def combine_concat(x: Tensor, m: Tensor) -> Tensor:
    if x.shape != m.shape:
        raise ValueError(f"combine_concat: length mismatch {x.shape} vs {m.shape}")
    return concat((x, m))


@dataclass
class AttentionParams:
    w_z1: Tensor
    w_z2: Tensor
    w_z3: Tensor

    def __post_init__(self):
        shape = self.w_z1.shape
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ValueError(f"AttentionParams: w_z1 must be square, got {shape}")
        for name in ("w_z2", "w_z3"):
            t = getattr(self, name)
            if t.shape != shape:
                raise ValueError(
                    f"AttentionParams: {name} shape {t.shape} != {shape}"
                )

    @property
    def dim(self) -> int:
        return self.w_z1.shape[0]


def combine_attention(x: Tensor, m: Tensor, p: AttentionParams):
    """Gate the two word representations; returns (combined, z).

    Every entry of z lies strictly inside (0, 1), so the combination is
    a per-feature convex mix of x and m. z is returned so callers can
    export and inspect it.
    """
    if x.shape != (p.dim,) or m.shape != (p.dim,):
        raise ValueError(
            f"combine_attention: got x {x.shape}, m {m.shape} for gate dim {p.dim}"
        )
    z = sigmoid(matmul(p.w_z3, tanh(add(matmul(p.w_z1, x), matmul(p.w_z2, m)))))
    one_minus_z = add(const_like(1.0, z), multiply(z, const_like(-1.0, z)))
    combined = add(multiply(z, x), multiply(one_minus_z, m))
    return combined, z


def char_aux_loss(m_seq, x_seq, oov_mask) -> Tensor:
    """Cosine pull of m toward x, summed over non-OOV positions.

    Each kept position contributes 1 - cos(m_t, x_t). x_t passes through
    stop_gradient, so minimizing this term never moves word embeddings.
    """
    m_seq, x_seq, oov_mask = list(m_seq), list(x_seq), list(oov_mask)
    if not (len(m_seq) == len(x_seq) == len(oov_mask)):
        raise ValueError(
            f"char_aux_loss: length mismatch {len(m_seq)}/{len(x_seq)}/{len(oov_mask)}"
        )
    terms = []
    for m, x, is_oov in zip(m_seq, x_seq, oov_mask):
        if is_oov:
            continue
        cos = cosine_similarity(m, stop_gradient(x))
        terms.append(add(const_like(1.0, cos), multiply(cos, const_like(-1.0, cos))))
    if not terms:
        anchor = m_seq[0] if m_seq else None
        dtype = anchor.values.dtype if anchor is not None else np.float64
        return Tensor(np.zeros((), dtype=dtype), constant=True)
    return reduce_sum(concat(terms))
