import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anomalyflow import linalg
from anomalyflow.forms import random_hermitian
from anomalyflow.torus import TorusGrid


def _batch(n, rng, size=40, cond=50.0):
    return np.stack([random_hermitian(n, rng, cond=cond) for _ in range(size)])


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_det_matches_numpy(n):
    a = _batch(n, np.random.default_rng(n))
    want = np.linalg.det(a).real
    assert np.allclose(linalg.det(a), want, rtol=1e-13, atol=0)


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3, 4]))
@settings(max_examples=30, deadline=None)
def test_eig_extremes_match_eigvalsh(seed, n):
    a = _batch(n, np.random.default_rng(seed), size=8)
    w = np.linalg.eigvalsh(a)
    lo, hi = linalg.eig_extremes(a)
    assert np.allclose(lo, w[:, 0], rtol=1e-10, atol=1e-12)
    assert np.allclose(hi, w[:, -1], rtol=1e-10, atol=1e-12)


def test_eig_extremes_repeated_eigenvalues():
    for n in (2, 3):
        a = np.broadcast_to(2.5 * np.eye(n), (3, n, n))
        lo, hi = linalg.eig_extremes(a)
        assert np.allclose(lo, 2.5) and np.allclose(hi, 2.5)


def test_sylvester_positivity():
    a = np.diag([1.0, -1e-3, 2.0]).astype(complex)
    assert not linalg.is_positive(a)
    assert linalg.is_positive(np.eye(3))


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_parts_agree_with_full_matrix(n):
    a = _batch(n, np.random.default_rng(10 + n))
    re = [[a[:, k, j].real for j in range(n)] for k in range(n)]
    im = [[None if k == j else a[:, k, j].imag for j in range(n)] for k in range(n)]
    assert np.allclose(linalg.det_parts(re, im), np.linalg.det(a).real, rtol=1e-12)
    assert np.array_equal(linalg.assemble(re, im), a)
    assert np.all(linalg.is_positive_parts(re, im))


@pytest.mark.parametrize("n", [2, 3])
def test_hessian_parts_match_complex_path(n):
    grid = TorusGrid(n, 8)
    rng = np.random.default_rng(n)
    u = rng.standard_normal(grid.shape)
    full = grid.i_ddbar_scalar(u, uhat=np.fft.fftn(u))
    re, im = grid.hessian_parts(u)
    assert np.allclose(linalg.assemble(re, im), full, atol=1e-10)
