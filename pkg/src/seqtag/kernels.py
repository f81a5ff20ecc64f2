"""Hot numeric kernels with interchangeable numpy and numba backends.

Outside of BLAS matrix products, nearly all of the numeric time in this
package is spent in a handful of small dense loops: elementwise
activations and their gradients, log-sum-exp reductions, and the Viterbi
recursion over a tag lattice. Each of those exists here in two variants:

* a pure-numpy implementation (``*_np``), always available
* a numba ``@njit`` twin (``*_nb``), compiled lazily and cached on disk

The active set is chosen once at import time. Set ``SEQTAG_BACKEND`` to
``numpy`` or ``numba`` to force a backend; the default is numba when it
imports cleanly, numpy otherwise. ``benchmarks/bench_backends.py`` times
one backend against the other.

Matrix products are deliberately left to ``np.matmul`` in both modes.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def sigmoid_np(x):
    return 1.0 / (1.0 + np.exp(-x))


def tanh_np(x):
    return np.tanh(x)


def sigmoid_grad_np(g, y):
    """Chain-rule contribution for sigmoid given output y = sigmoid(x)."""
    return g * (y * (1.0 - y))


def tanh_grad_np(g, y):
    """Chain-rule contribution for tanh given output y = tanh(x)."""
    return g * (1.0 - y * y)


def logsumexp_np(x):
    """Stable log(sum(exp(x))) of a vector; returns a python float."""
    m = x.max()
    return float(m + np.log(np.exp(x - m).sum()))


def logsumexp_grad_np(g, x, out):
    """Gradient of logsumexp: softmax(x) scaled by the scalar g."""
    return np.exp(x - out) * g


def logsumexp_cols_np(m):
    """Column-wise stable log-sum-exp of a matrix, reducing axis 0."""
    mx = m.max(axis=0)
    return mx + np.log(np.exp(m - mx).sum(axis=0))


def logsumexp_cols_grad_np(g, m, out):
    return np.exp(m - out) * g


def viterbi_np(emissions, transitions):
    """Highest-scoring label path through a lattice.

    ``emissions`` is (T, K); ``transitions`` is (K+2, K+2) with row K the
    start state and row/column K+1 the end state. Ties are broken toward
    the lowest label index at every decision (np.argmax keeps the first
    maximum). Score accumulation order matches the per-sequence scoring
    functions bit for bit, so exact score comparisons are meaningful.
    """
    T, K = emissions.shape
    start, end = K, K + 1
    alpha = transitions[start, :K] + emissions[0]
    backptr = np.zeros((T, K), dtype=np.int64)
    for t in range(1, T):
        cand = alpha[:, None] + transitions[:K, :K]
        best = np.argmax(cand, axis=0)
        alpha = cand[best, np.arange(K)] + emissions[t]
        backptr[t] = best
    final = alpha + transitions[:K, end]
    last = int(np.argmax(final))
    score = float(final[last])
    path = np.empty(T, dtype=np.int64)
    path[T - 1] = last
    for t in range(T - 1, 0, -1):
        path[t - 1] = backptr[t, path[t]]
    return path, score


# ---------------------------------------------------------------------------
# numba twins
# ---------------------------------------------------------------------------
# sigmoid/tanh/logsumexp bodies are valid nopython code as written, so the
# jitted twins share the source. The axis reductions and the Viterbi
# recursion get explicit loop versions instead (axis kwargs are not
# supported in nopython mode, and loops are what numba is good at).

def _logsumexp_loops(x):
    m = x[0]
    for i in range(1, x.shape[0]):
        if x[i] > m:
            m = x[i]
    s = 0.0
    for i in range(x.shape[0]):
        s += np.exp(x[i] - m)
    return m + np.log(s)


def _logsumexp_cols_loops(m):
    rows, cols = m.shape
    out = np.empty_like(m[0])
    for j in range(cols):
        mx = m[0, j]
        for i in range(1, rows):
            if m[i, j] > mx:
                mx = m[i, j]
        s = 0.0
        for i in range(rows):
            s += np.exp(m[i, j] - mx)
        out[j] = mx + np.log(s)
    return out


def _logsumexp_cols_grad_loops(g, m, out):
    res = np.empty_like(m)
    rows, cols = m.shape
    for j in range(cols):
        gj = g[j]
        oj = out[j]
        for i in range(rows):
            res[i, j] = np.exp(m[i, j] - oj) * gj
    return res


def _viterbi_loops(emissions, transitions):
    T, K = emissions.shape
    start, end = K, K + 1
    alpha = transitions[start, :K] + emissions[0]
    backptr = np.zeros((T, K), dtype=np.int64)
    for t in range(1, T):
        new = np.empty_like(alpha)
        for k in range(K):
            best = alpha[0] + transitions[0, k]
            arg = 0
            for j in range(1, K):
                cand = alpha[j] + transitions[j, k]
                if cand > best:
                    best = cand
                    arg = j
            new[k] = best + emissions[t, k]
            backptr[t, k] = arg
        alpha = new
    last = 0
    score = alpha[0] + transitions[0, end]
    for k in range(1, K):
        cand = alpha[k] + transitions[k, end]
        if cand > score:
            score = cand
            last = k
    path = np.empty(T, dtype=np.int64)
    path[T - 1] = last
    for t in range(T - 1, 0, -1):
        path[t - 1] = backptr[t, path[t]]
    return path, score


if HAVE_NUMBA:
    sigmoid_nb = njit(cache=True)(sigmoid_np)
    tanh_nb = njit(cache=True)(tanh_np)
    sigmoid_grad_nb = njit(cache=True)(sigmoid_grad_np)
    tanh_grad_nb = njit(cache=True)(tanh_grad_np)
    _logsumexp_nb = njit(cache=True)(_logsumexp_loops)
    logsumexp_grad_nb = njit(cache=True)(logsumexp_grad_np)
    logsumexp_cols_nb = njit(cache=True)(_logsumexp_cols_loops)
    logsumexp_cols_grad_nb = njit(cache=True)(_logsumexp_cols_grad_loops)
    _viterbi_nb = njit(cache=True)(_viterbi_loops)

    def logsumexp_nb(x):
        return float(_logsumexp_nb(x))

    def viterbi_nb(emissions, transitions):
        path, score = _viterbi_nb(emissions, transitions)
        return path, float(score)


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

def _resolve_backend() -> str:
    requested = os.environ.get("SEQTAG_BACKEND", "").strip().lower()
    if requested not in ("", "numpy", "numba"):
        raise ValueError(
            f"SEQTAG_BACKEND must be 'numpy' or 'numba', got {requested!r}"
        )
    if requested == "numba" and not HAVE_NUMBA:
        raise ImportError("SEQTAG_BACKEND=numba but numba is not importable")
    if requested:
        return requested
    return "numba" if HAVE_NUMBA else "numpy"


BACKEND = _resolve_backend()

if BACKEND == "numba":
    _active = {
        "sigmoid": sigmoid_nb,
        "tanh": tanh_nb,
        "sigmoid_grad": sigmoid_grad_nb,
        "tanh_grad": tanh_grad_nb,
        "logsumexp": logsumexp_nb,
        "logsumexp_grad": logsumexp_grad_nb,
        "logsumexp_cols": logsumexp_cols_nb,
        "logsumexp_cols_grad": logsumexp_cols_grad_nb,
        "viterbi": viterbi_nb,
    }
else:
    _active = {
        "sigmoid": sigmoid_np,
        "tanh": tanh_np,
        "sigmoid_grad": sigmoid_grad_np,
        "tanh_grad": tanh_grad_np,
        "logsumexp": logsumexp_np,
        "logsumexp_grad": logsumexp_grad_np,
        "logsumexp_cols": logsumexp_cols_np,
        "logsumexp_cols_grad": logsumexp_cols_grad_np,
        "viterbi": viterbi_np,
    }

_sigmoid = _active["sigmoid"]
_tanh = _active["tanh"]
_sigmoid_grad = _active["sigmoid_grad"]
_tanh_grad = _active["tanh_grad"]
_logsumexp = _active["logsumexp"]
_logsumexp_grad = _active["logsumexp_grad"]
_logsumexp_cols = _active["logsumexp_cols"]
_logsumexp_cols_grad = _active["logsumexp_cols_grad"]
_viterbi = _active["viterbi"]


# Public wrappers. They normalize the odd cases numba cannot take
# (zero-dimensional arrays) and keep output dtypes consistent across
# backends.

def sigmoid(x):
    if x.ndim == 0:
        return sigmoid_np(x)
    return _sigmoid(x)


def tanh(x):
    if x.ndim == 0:
        return tanh_np(x)
    return _tanh(x)


def sigmoid_grad(g, y):
    if y.ndim == 0:
        return sigmoid_grad_np(g, y)
    return _sigmoid_grad(g, y)


def tanh_grad(g, y):
    if y.ndim == 0:
        return tanh_grad_np(g, y)
    return _tanh_grad(g, y)


def logsumexp(x):
    return np.asarray(_logsumexp(x), dtype=x.dtype)


def logsumexp_grad(g, x, out):
    return _logsumexp_grad(float(g), x, float(out))


def logsumexp_cols(m):
    return np.asarray(_logsumexp_cols(m), dtype=m.dtype)


def logsumexp_cols_grad(g, m, out):
    return _logsumexp_cols_grad(np.ascontiguousarray(g), m, out)


def viterbi(emissions, transitions):
    if emissions.ndim != 2 or emissions.shape[0] < 1:
        raise ValueError(f"viterbi: bad emissions shape {emissions.shape}")
    K = emissions.shape[1]
    if transitions.shape != (K + 2, K + 2):
        raise ValueError(
            f"viterbi: transitions shape {transitions.shape} does not match "
            f"{K} labels plus start/end states"
        )
    return _viterbi(np.ascontiguousarray(emissions), np.ascontiguousarray(transitions))
