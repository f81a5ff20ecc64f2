#!/usr/bin/env python3
"""Times the numba kernels against their pure-numpy fallbacks.

Two views:

* microbenchmarks call both variants of each kernel directly on
  representative shapes (small dense vectors, a tag lattice);
* an end-to-end run times sentence loss forward+backward under each
  backend in a subprocess, since the backend is fixed at import time
  via SEQTAG_BACKEND.

Run:  python3 benchmarks/bench_backends.py
"""

import os
import subprocess
import sys
import time

import numpy as np

from seqtag import kernels


def best_of(fn, args, repeat=5, number=200):
    fn(*args)  # warmup; also triggers jit compilation
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / number)
    return best


def micro():
    rng = np.random.default_rng(0)
    vec = rng.normal(size=400)
    grad = rng.normal(size=400)
    act = kernels.sigmoid_np(vec)
    lse_in = rng.normal(size=64)
    lse_out = kernels.logsumexp_np(lse_in)
    mat = rng.normal(size=(12, 12))
    emissions = rng.normal(size=(60, 20))
    transitions = rng.normal(size=(22, 22))

    cases = [
        ("sigmoid fwd [400]", kernels.sigmoid_np, kernels.sigmoid_nb, (vec,)),
        ("sigmoid grad [400]", kernels.sigmoid_grad_np, kernels.sigmoid_grad_nb, (grad, act)),
        ("tanh grad [400]", kernels.tanh_grad_np, kernels.tanh_grad_nb, (grad, act)),
        ("logsumexp [64]", kernels.logsumexp_np, kernels.logsumexp_nb, (lse_in,)),
        ("logsumexp grad [64]", kernels.logsumexp_grad_np, kernels.logsumexp_grad_nb,
         (1.7, lse_in, lse_out)),
        ("logsumexp cols [12x12]", kernels.logsumexp_cols_np, kernels.logsumexp_cols_nb, (mat,)),
        ("viterbi T=60 K=20", kernels.viterbi_np, kernels.viterbi_nb,
         (emissions, transitions)),
    ]
    print(f"{'kernel':<24} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for name, fn_np, fn_nb, args in cases:
        t_np = best_of(fn_np, args)
        t_nb = best_of(fn_nb, args)
        print(f"{name:<24} {t_np * 1e6:>8.1f}us {t_nb * 1e6:>8.1f}us {t_np / t_nb:>7.2f}x")


END_TO_END = r"""
import time
import numpy as np
from seqtag.autodiff import Tape, backward
from seqtag.corpus import build_vocab
from seqtag.model import ModelConfig, assemble_model
from seqtag.synthdata import make_suffix_corpus

train, _, _ = make_suffix_corpus(n_train_types=120, seed=1)
vocab = build_vocab(train)
sents = vocab.encode_corpus(train)
config = ModelConfig(architecture="attention", output="crf", word_dim=50,
                     char_dim=25, word_lstm_hidden=50, char_lstm_hidden=50,
                     d_size=25, dtype="float32", seed=3)
model = assemble_model(config, vocab)

def one_pass():
    for sent in sents:
        tape = Tape()
        with tape:
            loss, _ = model.sentence_loss_parts(sent)
        backward(loss, tape)
        model.zero_grad()

one_pass()  # warmup / jit
best = float("inf")
for _ in range(3):
    t0 = time.perf_counter()
    one_pass()
    best = min(best, time.perf_counter() - t0)
print(f"{best:.4f}")
"""


def end_to_end():
    print(f"\n{'sentence loss fwd+bwd':<24} {'seconds/pass':>14}")
    results = {}
    for backend in ("numpy", "numba"):
        env = dict(os.environ, SEQTAG_BACKEND=backend)
        out = subprocess.run(
            [sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True
        )
        if out.returncode != 0:
            print(f"{backend:<24} failed:\n{out.stderr}")
            return
        results[backend] = float(out.stdout.strip().splitlines()[-1])
        print(f"{backend:<24} {results[backend]:>13.3f}s")
    print(f"{'speedup':<24} {results['numpy'] / results['numba']:>13.2f}x")


if __name__ == "__main__":
    if not kernels.HAVE_NUMBA:
        print("numba is not importable; nothing to compare")
        sys.exit(1)
    micro()
    end_to_end()
