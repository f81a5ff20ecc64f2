"""Output layers: softmax prediction and a linear-chain CRF.

A sentence's scores live in a ``TagLattice``: an emission matrix with
one row per token and a square transition matrix over the label set
plus two boundary states (index K is the virtual start state, K + 1 the
virtual end state). The score of a label sequence is the sum of its
emissions, the transition from start into its first label, the
transitions between consecutive labels, and the transition from its
last label into end. Transitions into start and out of end are never
read by any scoring routine, which is equivalent to holding them at
minus infinity.

The negative log-likelihood runs the forward algorithm in log space on
the tape, so its gradient comes from the reverse pass like everything
else. Decoding is plain numeric Viterbi (see ``kernels``) with ties
broken toward the lowest label index at every backpointer decision; the
exhaustive oracle in this module applies the same preference, which for
enumeration order means keeping the candidate whose reversed sequence
compares lowest.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from . import kernels
from .autodiff import (
    Tensor,
    add,
    concat,
    const_like,
    log_sum_exp,
    matmul,
    multiply,
    narrow,
    pick_row,
    reduce_sum,
)

ENUMERATION_LIMIT = 10**6


class LabelSet:
    """Ordered, unique label strings with a stable index."""

    def __init__(self, labels):
        labels = tuple(labels)
        if len(set(labels)) != len(labels):
            raise ValueError("LabelSet: duplicate labels")
        if not labels:
            raise ValueError("LabelSet: empty label set")
        self.labels = labels
        self._index = {lab: i for i, lab in enumerate(labels)}

    def id(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ValueError(f"LabelSet: unknown label {label!r}") from None

    def label(self, i: int) -> str:
        return self.labels[i]

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return label in self._index

    def __iter__(self):
        return iter(self.labels)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return Tensor(arr)


class TagLattice:
    """Emission scores for one sentence plus the shared transition matrix."""

    def __init__(self, emissions, transitions):
        self.emissions = _as_tensor(emissions)
        self.transitions = _as_tensor(transitions)
        if self.emissions.values.ndim != 2 or self.emissions.shape[0] < 1:
            raise ValueError(f"TagLattice: emissions must be (T, K), got {self.emissions.shape}")
        t, k = self.emissions.shape
        if self.transitions.shape != (k + 2, k + 2):
            raise ValueError(
                f"TagLattice: transitions {self.transitions.shape} does not match "
                f"{k} labels plus start/end states"
            )
        self.seq_len = t
        self.num_labels = k

    @property
    def start_index(self) -> int:
        return self.num_labels

    @property
    def end_index(self) -> int:
        return self.num_labels + 1


def _check_sequence(lat: TagLattice, y) -> list:
    y = list(y)
    if len(y) != lat.seq_len:
        raise ValueError(f"label sequence length {len(y)} != lattice length {lat.seq_len}")
    for lab in y:
        if not 0 <= lab < lat.num_labels:
            raise ValueError(f"label id {lab} outside [0, {lat.num_labels})")
    return y


# ---------------------------------------------------------------------------
# softmax output
# ---------------------------------------------------------------------------

def softmax_predict(d, w_o) -> np.ndarray:
    """Probability distribution over labels for one token."""
    d = np.asarray(getattr(d, "values", d))
    w_o = np.asarray(getattr(w_o, "values", w_o))
    if w_o.ndim != 2 or d.ndim != 1 or w_o.shape[1] != d.shape[0]:
        raise ValueError(f"softmax_predict: weight {w_o.shape} does not apply to {d.shape}")
    logits = w_o @ d
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def crossentropy_loss(probs_seq, gold) -> float:
    """Negative log-probability of the gold labels under given distributions.

    Probabilities are floored at 1e-12 before the log so a confidently
    wrong model yields a large finite loss instead of an overflow.
    """
    probs_seq = list(probs_seq)
    gold = list(gold)
    if len(probs_seq) != len(gold):
        raise ValueError(f"crossentropy_loss: {len(probs_seq)} distributions vs {len(gold)} labels")
    total = 0.0
    for probs, y in zip(probs_seq, gold):
        probs = np.asarray(getattr(probs, "values", probs))
        if not 0 <= y < probs.shape[0]:
            raise ValueError(f"crossentropy_loss: gold id {y} outside [0, {probs.shape[0]})")
        total -= math.log(max(float(probs[y]), 1e-12))
    return total


def emission_scores(d_seq, w_o: Tensor) -> Tensor:
    """Stack per-token emission rows W_o @ d_t into one (T, K) tensor."""
    d_seq = list(d_seq)
    if not d_seq:
        raise ValueError("emission_scores: empty sequence")
    return concat([matmul(w_o, d) for d in d_seq], rows=True)


# ---------------------------------------------------------------------------
# CRF scoring and loss
# ---------------------------------------------------------------------------

def crf_sequence_score(lat: TagLattice, y) -> float:
    """Unnormalized score of one label sequence.

    Accumulation order matches the Viterbi recursion exactly, so the
    decoded path's score compares bit-for-bit equal.
    """
    y = _check_sequence(lat, y)
    a = lat.emissions.values
    b = lat.transitions.values
    s = b[lat.start_index, y[0]] + a[0, y[0]]
    for t in range(1, lat.seq_len):
        s = s + b[y[t - 1], y[t]]
        s = s + a[t, y[t]]
    s = s + b[y[-1], lat.end_index]
    return float(s)


def crf_log_partition(lat: TagLattice) -> Tensor:
    """Log of the summed exponentiated scores of all label sequences.

    Forward algorithm in log space over tape primitives; rows of the
    transition matrix are sliced once per sentence and reused.
    """
    a, b = lat.emissions, lat.transitions
    k = lat.num_labels
    out_rows = []
    end_parts = []
    for j in range(k):
        row = pick_row(b, j)
        out_rows.append(narrow(row, 0, k))
        end_parts.append(narrow(row, lat.end_index, lat.end_index + 1))
    into_end = concat(end_parts)

    alpha = add(narrow(pick_row(b, lat.start_index), 0, k), pick_row(a, 0))
    for t in range(1, lat.seq_len):
        shifted = [add(out_rows[j], narrow(alpha, j, j + 1)) for j in range(k)]
        alpha = add(log_sum_exp(concat(shifted, rows=True), axis=0), pick_row(a, t))
    return log_sum_exp(add(alpha, into_end))


def crf_nll(lat: TagLattice, y) -> Tensor:
    """Negative log-likelihood of the gold sequence; never below zero."""
    y = _check_sequence(lat, y)
    a, b = lat.emissions, lat.transitions

    def entry(m, r, c):
        return narrow(pick_row(m, r), c, c + 1)

    parts = [entry(b, lat.start_index, y[0]), entry(a, 0, y[0])]
    for t in range(1, lat.seq_len):
        parts.append(entry(b, y[t - 1], y[t]))
        parts.append(entry(a, t, y[t]))
    parts.append(entry(b, y[-1], lat.end_index))
    gold_score = reduce_sum(concat(parts))

    log_z = crf_log_partition(lat)
    return add(log_z, multiply(gold_score, const_like(-1.0, gold_score)))


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------

def viterbi_decode(lat: TagLattice):
    """Best label sequence and its score (exactly crf_sequence_score of it)."""
    path, score = kernels.viterbi(lat.emissions.values, lat.transitions.values)
    return [int(p) for p in path], score


def brute_force_oracle(lat: TagLattice):
    """Exhaustive enumeration of all K**T sequences.

    Returns (log partition, argmax sequence). Among equal-scoring
    sequences the one whose reversed tuple is smallest wins, matching
    the lowest-index backpointer preference of the Viterbi recursion.
    """
    t_len, k = lat.seq_len, lat.num_labels
    count = k**t_len
    if count > ENUMERATION_LIMIT:
        raise ValueError(
            f"brute_force_oracle: {k}^{t_len} sequences exceed the {ENUMERATION_LIMIT} limit"
        )
    a = lat.emissions.values
    b = lat.transitions.values
    start, end = lat.start_index, lat.end_index

    scores = np.empty(count, dtype=np.float64)
    best_seq = None
    best_key = None
    for idx, seq in enumerate(itertools.product(range(k), repeat=t_len)):
        s = b[start, seq[0]] + a[0, seq[0]]
        for t in range(1, t_len):
            s = s + b[seq[t - 1], seq[t]]
            s = s + a[t, seq[t]]
        s = s + b[seq[-1], end]
        scores[idx] = s
        key = (-s, tuple(reversed(seq)))
        if best_key is None or key < best_key:
            best_key = key
            best_seq = seq
    m = scores.max()
    log_z = float(m + np.log(np.exp(scores - m).sum()))
    return log_z, list(best_seq)
