import numpy as np
import pytest

from seqtag import kernels


needs_numba = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba unavailable")


def test_backend_is_resolved():
    assert kernels.BACKEND in ("numpy", "numba")


def test_backend_env_validation(monkeypatch):
    monkeypatch.setenv("SEQTAG_BACKEND", "gpu")
    with pytest.raises(ValueError, match="SEQTAG_BACKEND"):
        kernels._resolve_backend()
    monkeypatch.setenv("SEQTAG_BACKEND", "numpy")
    assert kernels._resolve_backend() == "numpy"


@needs_numba
@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-13), (np.float32, 1e-5)])
def test_elementwise_parity(dtype, tol):
    rng = np.random.default_rng(0)
    for shape in [(7,), (3, 4)]:
        x = rng.normal(size=shape).astype(dtype)
        g = rng.normal(size=shape).astype(dtype)
        assert np.allclose(kernels.sigmoid_np(x), kernels.sigmoid_nb(x), atol=tol)
        assert np.allclose(kernels.tanh_np(x), kernels.tanh_nb(x), atol=tol)
        y = kernels.sigmoid_np(x)
        assert np.allclose(kernels.sigmoid_grad_np(g, y), kernels.sigmoid_grad_nb(g, y), atol=tol)
        y = kernels.tanh_np(x)
        assert np.allclose(kernels.tanh_grad_np(g, y), kernels.tanh_grad_nb(g, y), atol=tol)


@needs_numba
@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-12), (np.float32, 1e-5)])
def test_logsumexp_parity(dtype, tol):
    rng = np.random.default_rng(1)
    x = (rng.normal(size=9) * 10).astype(dtype)
    assert kernels.logsumexp_np(x) == pytest.approx(kernels.logsumexp_nb(x), abs=tol)
    out = kernels.logsumexp_np(x)
    assert np.allclose(
        kernels.logsumexp_grad_np(2.5, x, out),
        kernels.logsumexp_grad_nb(2.5, x, out),
        atol=tol,
    )
    m = (rng.normal(size=(4, 6)) * 10).astype(dtype)
    a = kernels.logsumexp_cols_np(m)
    b = kernels.logsumexp_cols_nb(m)
    assert np.allclose(a, b, atol=tol)
    g = rng.normal(size=6).astype(dtype)
    assert np.allclose(
        kernels.logsumexp_cols_grad_np(g, m, a),
        kernels.logsumexp_cols_grad_nb(g, m, a),
        atol=tol,
    )


@needs_numba
def test_viterbi_parity():
    rng = np.random.default_rng(2)
    for _ in range(50):
        t_len = int(rng.integers(1, 8))
        k = int(rng.integers(1, 6))
        em = rng.normal(size=(t_len, k))
        tr = rng.normal(size=(k + 2, k + 2))
        p1, s1 = kernels.viterbi_np(em, tr)
        p2, s2 = kernels.viterbi_nb(em, tr)
        assert np.array_equal(p1, p2)
        assert s1 == s2


@needs_numba
def test_viterbi_parity_on_ties():
    rng = np.random.default_rng(3)
    for _ in range(100):
        t_len = int(rng.integers(2, 6))
        k = int(rng.integers(2, 4))
        em = rng.integers(0, 2, size=(t_len, k)).astype(np.float64)
        tr = rng.integers(0, 2, size=(k + 2, k + 2)).astype(np.float64)
        p1, s1 = kernels.viterbi_np(em, tr)
        p2, s2 = kernels.viterbi_nb(em, tr)
        assert np.array_equal(p1, p2)
        assert s1 == s2


def test_logsumexp_against_scipy():
    from scipy.special import logsumexp as scipy_lse

    rng = np.random.default_rng(4)
    for _ in range(25):
        x = rng.normal(size=int(rng.integers(1, 12))) * 20
        assert kernels.logsumexp_np(x) == pytest.approx(scipy_lse(x), abs=1e-12)
        m = rng.normal(size=(int(rng.integers(1, 6)), int(rng.integers(1, 6)))) * 20
        assert np.allclose(kernels.logsumexp_cols_np(m), scipy_lse(m, axis=0), atol=1e-12)


def test_logsumexp_preserves_dtype():
    x32 = np.ones(3, dtype=np.float32)
    assert kernels.logsumexp(x32).dtype == np.float32
    m32 = np.ones((2, 3), dtype=np.float32)
    assert kernels.logsumexp_cols(m32).dtype == np.float32


def test_viterbi_wrapper_validation():
    with pytest.raises(ValueError, match="emissions"):
        kernels.viterbi(np.zeros(3), np.zeros((5, 5)))
    with pytest.raises(ValueError, match="transitions"):
        kernels.viterbi(np.zeros((2, 3)), np.zeros((4, 4)))


def test_active_set_matches_backend():
    fn = kernels.viterbi_nb if kernels.BACKEND == "numba" else kernels.viterbi_np
    assert kernels._viterbi is fn
