"""Brute-force reference computations used to check the closed forms.

Nothing here is on a hot path. Each oracle works from dense component tensors
or from the defining property of the quantity, never from the formula it is
meant to check.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .forms import PQForm, _sign, combos, omega_power, top_ratio, wedge


def wedge_bruteforce(a: PQForm, b: PQForm) -> PQForm:
    """Wedge product by explicit signed sums over all index permutations.

    Works on the dense component tensors of both factors:
    ``C[K, J] = p!q!/(pa!qa!pb!qb!) (-1)^{qa pb} Alt_{K,J} A[K[qb:], J[pb:]] B[K[:qb], J[:pb]]``.
    """
    n = a.n
    pa, qa, pb, qb = a.p, a.q, b.p, b.q
    p, q = pa + pb, qa + qb
    A, B = a.components(), b.components()
    batch = np.broadcast_shapes(a.batch_shape, b.batch_shape)
    out = np.zeros(batch + (n,) * (q + p), complex)
    pref = (math.factorial(p) * math.factorial(q)
            / (math.factorial(pa) * math.factorial(qa) * math.factorial(pb) * math.factorial(qb)))
    pref *= (-1) ** (qa * pb) / (math.factorial(p) * math.factorial(q))
    perms_q = [(s, _sign(s)) for s in itertools.permutations(range(q))]
    perms_p = [(s, _sign(s)) for s in itertools.permutations(range(p))]
    for K in itertools.product(range(n), repeat=q):
        if len(set(K)) < q:
            continue
        for J in itertools.product(range(n), repeat=p):
            if len(set(J)) < p:
                continue
            acc = 0.0
            for sk, gk in perms_q:
                Kp = tuple(K[i] for i in sk)
                for sj, gj in perms_p:
                    Jp = tuple(J[i] for i in sj)
                    acc = acc + gk * gj * (A[(...,) + Kp[qb:] + Jp[pb:]]
                                           * B[(...,) + Kp[:qb] + Jp[:pb]])
            out[(...,) + K + J] = pref * acc
    return PQForm.from_components(out, p, q)


def contraction_oracle(theta: PQForm, g):
    """``c`` with ``theta ^ omega^{n-p}/(n-p)! = c omega^n/n!`` by forming the top form."""
    n = theta.n
    top = wedge(theta, omega_power(g, n - theta.p)) / math.factorial(n - theta.p)
    return top_ratio(top, g)


def _basis_11(n):
    for k in range(n):
        for j in range(n):
            c = np.zeros((n, n), complex)
            c[k, j] = 1.0
            yield PQForm(1, 1, n, c)


def hermitian_pairing(beta: PQForm, s: PQForm, g):
    """``<beta, s> = g^{j mbar} g^{l kbar} beta_{kbar j} conj(s_{lbar m})``."""
    ginv = np.linalg.inv(np.asarray(g, dtype=complex))
    return np.einsum("jm,lk,kj,lm->", ginv, ginv, beta.coeffs, np.conj(s.coeffs))


def hodge_star_oracle(theta: PQForm, g) -> PQForm:
    """Solve ``beta ^ theta = <beta, *theta> omega^n/n!`` for ``*theta``.

    Valid for real (n-1,n-1)-forms. The pairing is conjugate-linear in its
    second slot, so the unknown is found from an n^2 x n^2 linear system over
    the elementary (1,1)-forms.
    """
    n = theta.n
    g = np.asarray(g, dtype=complex)
    ginv = np.linalg.inv(g)
    basis = list(_basis_11(n))
    rhs = np.array([top_ratio(wedge(b, theta), g) for b in basis])
    # <e_{kj}, s> = sum_{l,m} ginv[j,m] ginv[l,k] conj(s[l,m])
    mat = np.zeros((n * n, n * n), complex)
    for row, (k, j) in enumerate(itertools.product(range(n), repeat=2)):
        mat[row] = np.outer(ginv[:, k], ginv[j, :]).ravel()
    sol = np.linalg.solve(mat, rhs)
    return PQForm(1, 1, n, np.conj(sol).reshape(n, n))


def star_composition_oracle(form: PQForm, g) -> PQForm:
    """``*(form ^ omega^{n-p})`` computed by wedging then solving for the star."""
    n = form.n
    return hodge_star_oracle(wedge(form, omega_power(g, n - 1 - form.p)), g)


def finite_difference(u, axis: int, h: float):
    """Fourth-order central difference on a periodic array."""
    r = lambda k: np.roll(u, -k, axis=axis)  # noqa: E731
    return (-r(2) + 8 * r(1) - 8 * r(-1) + r(-2)) / (12 * h)


def point_derivative(func, x, axis: int, h: float = 1e-3):
    """Fourth-order central difference of ``func`` at the point ``x`` along one real axis."""
    x = np.asarray(x, dtype=float)
    e = np.zeros_like(x)
    e[axis] = h
    return (-func(x + 2 * e) + 8 * func(x + e) - 8 * func(x - e) + func(x - 2 * e)) / (12 * h)


def complex_derivative(func, x, j: int, bar: bool = False, h: float = 1e-3):
    """``d/dz^j`` (or ``d/dzbar^j``) of ``func`` at ``x`` by finite differences."""
    dx = point_derivative(func, x, 2 * j, h)
    dy = point_derivative(func, x, 2 * j + 1, h)
    return 0.5 * (dx + 1j * dy) if bar else 0.5 * (dx - 1j * dy)


def chern_curvature_fd(gfun, x, h: float = 1e-3):
    """Lowered Chern curvature ``R_{kbar j pbar q}`` at ``x`` from ``-d_kbar(g^{-1} d_j g)`` by nested differences."""
    n = np.asarray(gfun(x)).shape[-1]

    def conn(j):
        return lambda y: np.linalg.solve(gfun(y), complex_derivative(gfun, y, j, h=h))

    up = np.empty((n,) * 4, complex)
    for k in range(n):
        for j in range(n):
            up[k, j] = -complex_derivative(conn(j), x, k, bar=True, h=h)
    return np.einsum("ps,kjsq->kjpq", gfun(x), up)


__all__ = ["point_derivative", "complex_derivative", "chern_curvature_fd", "wedge_bruteforce", "contraction_oracle", "hodge_star_oracle",
           "star_composition_oracle", "hermitian_pairing", "finite_difference", "combos"]
