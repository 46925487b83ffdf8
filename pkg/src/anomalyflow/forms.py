"""Pointwise exterior algebra of (p,q)-forms on C^n.

Storage convention
------------------
A (p,q)-form is stored by its coefficients on the increasing monomials

    e(J, K) = dz^{j_1} ^ ... ^ dz^{j_p} ^ dzbar^{k_1} ^ ... ^ dzbar^{k_q},
    j_1 < ... < j_p,  k_1 < ... < k_q,

in an array of shape ``batch + (C(n,q), C(n,p))`` (barred index first). Any
leading batch axes are carried through every operation, so the same code
handles a single point or a whole grid of points.

Two component views are exposed on top of this storage:

* ``components()``: the antisymmetric tensor ``Theta[kbar_1..kbar_q, j_1..j_p]``
  defined by ``Theta = 1/(p!q!) sum Theta dz^{j_p}^..^dz^{j_1}^dzbar^{k_q}^..^dzbar^{k_1}``.
* ``paired()`` (p == q only): the interleaved tensor
  ``Theta[kbar_1, j_1, ..., kbar_p, j_p]`` with
  ``Theta = 1/(p!)^2 sum Theta (dz^{j_1}^dzbar^{k_1}) ^ ... ^ (dz^{j_p}^dzbar^{k_p})``.
  This is the view in which traces, pair contractions and the Hodge-star
  formulas are written. It differs from ``components()`` by ``(-1)^{p(p-1)/2}``.

The Kahler form of a Hermitian matrix ``g[..., k, j] = g_{kbar j}`` is
``omega = i g_{kbar j} dz^j ^ dzbar^k``; inverse matrices are indexed
``ginv[..., j, k] = g^{j kbar}``.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


class DegreeError(ValueError):
    """A form has the wrong bidegree for the requested operation."""


class UnsupportedDimensionError(ValueError):
    """The complex dimension is too small for a closed-form identity."""


def _sign(seq) -> int:
    s = 1
    seq = list(seq)
    for a in range(len(seq)):
        for b in range(a + 1, len(seq)):
            if seq[a] > seq[b]:
                s = -s
    return s


def _eps(p: int) -> int:
    return -1 if (p * (p - 1) // 2) % 2 else 1


@lru_cache(maxsize=None)
def combos(n: int, k: int) -> tuple:
    return tuple(itertools.combinations(range(n), k))


@lru_cache(maxsize=None)
def combo_index(n: int, k: int) -> dict:
    return {c: i for i, c in enumerate(combos(n, k))}


@lru_cache(maxsize=None)
def _merge_scatter(n: int, a: int, b: int):
    """Gather indices and signed scatter matrix for merging sorted index sets."""
    ia, ib, out, sgn = [], [], [], []
    index = combo_index(n, a + b)
    for x, ca in enumerate(combos(n, a)):
        for y, cb in enumerate(combos(n, b)):
            if set(ca) & set(cb):
                continue
            merged = ca + cb
            ia.append(x)
            ib.append(y)
            out.append(index[tuple(sorted(merged))])
            sgn.append(_sign(merged))
    scatter = np.zeros((len(ia), math.comb(n, a + b)))
    scatter[np.arange(len(ia)), out] = sgn
    return np.array(ia, dtype=int), np.array(ib, dtype=int), scatter


@lru_cache(maxsize=None)
def _dense_table(n: int, p: int, q: int):
    """Flat dense positions, compressed positions and signs for all orderings."""
    flat, ka, ja, sg = [], [], [], []
    shape = (n,) * (q + p)
    for a, K in enumerate(combos(n, q)):
        for b, J in enumerate(combos(n, p)):
            for sK in itertools.permutations(range(q)):
                for sJ in itertools.permutations(range(p)):
                    idx = tuple(K[i] for i in sK) + tuple(J[i] for i in sJ)
                    flat.append(np.ravel_multi_index(idx, shape) if idx else 0)
                    ka.append(a)
                    ja.append(b)
                    sg.append(_sign(sK) * _sign(sJ))
    return (np.array(flat, dtype=int), np.array(ka, dtype=int),
            np.array(ja, dtype=int), np.array(sg, dtype=float))


class PQForm:
    """A (p,q)-form, possibly a batch of them, in compressed monomial storage."""

    __slots__ = ("p", "q", "n", "coeffs")

    def __init__(self, p: int, q: int, n: int, coeffs):
        if not (0 <= p <= n and 0 <= q <= n):
            raise DegreeError(f"bidegree ({p},{q}) out of range for n={n}")
        coeffs = np.asarray(coeffs, dtype=complex)
        expected = (math.comb(n, q), math.comb(n, p))
        if coeffs.shape[-2:] != expected:
            raise DegreeError(f"coefficient shape {coeffs.shape[-2:]} != {expected}")
        self.p, self.q, self.n = p, q, n
        self.coeffs = coeffs

    def __repr__(self):
        return f"PQForm(p={self.p}, q={self.q}, n={self.n}, batch={self.batch_shape})"

    @property
    def batch_shape(self) -> tuple:
        return self.coeffs.shape[:-2]

    @classmethod
    def zeros(cls, p, q, n, batch=()):
        return cls(p, q, n, np.zeros(tuple(batch) + (math.comb(n, q), math.comb(n, p)), complex))

    @classmethod
    def scalar(cls, value, n):
        value = np.asarray(value, dtype=complex)
        return cls(0, 0, n, value[..., None, None])

    @classmethod
    def from_components(cls, comp, p: int, q: int, n: int | None = None):
        """Build from an antisymmetric component tensor (barred axes first)."""
        comp = np.asarray(comp, dtype=complex)
        if n is None and p + q:
            n = comp.shape[-1]
        if n is None:
            raise DegreeError("cannot infer n from a (0,0) component array")
        batch = comp.shape[: comp.ndim - (p + q)]
        out = np.empty(batch + (math.comb(n, q), math.comb(n, p)), complex)
        for a, K in enumerate(combos(n, q)):
            for b, J in enumerate(combos(n, p)):
                out[..., a, b] = comp[(...,) + K + J]
        return cls(p, q, n, _eps(p) * _eps(q) * out)

    def components(self) -> np.ndarray:
        """Dense antisymmetric component tensor ``[kbar_1..kbar_q, j_1..j_p]``."""
        n, p, q = self.n, self.p, self.q
        flat, ka, ja, sg = _dense_table(n, p, q)
        dense = np.zeros(self.batch_shape + (n ** (p + q),), complex)
        dense[..., flat] = sg * self.coeffs[..., ka, ja] * (_eps(p) * _eps(q))
        return dense.reshape(self.batch_shape + (n,) * (p + q))

    @classmethod
    def from_paired(cls, arr, p: int, n: int | None = None):
        """Build a (p,p)-form from interleaved components ``[k1, j1, ..., kp, jp]``."""
        arr = np.asarray(arr, dtype=complex)
        lead = arr.ndim - 2 * p
        perm = list(range(lead)) + [lead + 2 * i for i in range(p)] + [lead + 2 * i + 1 for i in range(p)]
        return cls.from_components(_eps(p) * np.transpose(arr, perm), p, p, n)

    def paired(self) -> np.ndarray:
        """Interleaved component tensor ``[kbar_1, j_1, ..., kbar_p, j_p]``."""
        if self.p != self.q:
            raise DegreeError("paired components need p == q")
        p = self.p
        comp = self.components()
        lead = comp.ndim - 2 * p
        perm = list(range(lead))
        for i in range(p):
            perm += [lead + i, lead + p + i]
        return _eps(p) * np.transpose(comp, perm)

    def _check_same(self, other):
        if (self.p, self.q, self.n) != (other.p, other.q, other.n):
            raise DegreeError("forms of different bidegree or dimension")

    def __add__(self, other):
        self._check_same(other)
        return PQForm(self.p, self.q, self.n, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check_same(other)
        return PQForm(self.p, self.q, self.n, self.coeffs - other.coeffs)

    def __neg__(self):
        return PQForm(self.p, self.q, self.n, -self.coeffs)

    def __mul__(self, scalar):
        s = np.asarray(scalar)
        if s.ndim:
            s = s[..., None, None]
        return PQForm(self.p, self.q, self.n, self.coeffs * s)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / np.asarray(scalar))

    def conj(self) -> "PQForm":
        """The complex-conjugate form, of bidegree (q,p)."""
        sign = -1 if (self.p * self.q) % 2 else 1
        return PQForm(self.q, self.p, self.n, sign * np.conj(np.swapaxes(self.coeffs, -1, -2)))

    def is_real(self, tol=1e-12) -> bool:
        if self.p != self.q:
            return False
        return bool(np.max(np.abs(self.coeffs - self.conj().coeffs), initial=0.0) <= tol)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coeffs), initial=0.0))


def wedge(a: PQForm, b: PQForm) -> PQForm:
    """Exterior product ``a ^ b`` (batch axes broadcast)."""
    if a.n != b.n:
        raise DegreeError("forms over different dimensions")
    n = a.n
    p, q = a.p + b.p, a.q + b.q
    if p > n or q > n:
        raise DegreeError(f"wedge degree ({p},{q}) exceeds n={n}")
    ka, kb, sk = _merge_scatter(n, a.q, b.q)
    ja, jb, sj = _merge_scatter(n, a.p, b.p)
    prod = a.coeffs[..., ka[:, None], ja[None, :]] * b.coeffs[..., kb[:, None], jb[None, :]]
    out = np.einsum("...xy,xK,yJ->...KJ", prod, sk, sj, optimize=True)
    if (a.q * b.p) % 2:
        out = -out
    return PQForm(p, q, n, out)


def omega(g) -> PQForm:
    """Kahler form ``i g_{kbar j} dz^j ^ dzbar^k`` of a Hermitian matrix (batch)."""
    g = np.asarray(g, dtype=complex)
    return PQForm(1, 1, g.shape[-1], 1j * g)


def omega_power(g, k: int) -> PQForm:
    g = np.asarray(g, dtype=complex)
    n = g.shape[-1]
    w = omega(g)
    out = PQForm.scalar(np.ones(g.shape[:-2]), n)
    for _ in range(k):
        out = wedge(out, w)
    return out


def volume_coefficient(g):
    """Coefficient of ``omega^n / n!`` on ``dz^1..dz^n dzbar^1..dzbar^n``."""
    g = np.asarray(g, dtype=complex)
    n = g.shape[-1]
    return (1j ** n) * (-1) ** (n * (n - 1) // 2) * np.linalg.det(g)


def top_ratio(theta: PQForm, g):
    """The scalar c with ``theta = c * omega^n / n!`` for a top-degree form."""
    if theta.p != theta.n or theta.q != theta.n:
        raise DegreeError("top_ratio needs an (n,n)-form")
    return theta.coeffs[..., 0, 0] / volume_coefficient(g)


def norm_omega_sq(g):
    """``|Omega|^2_omega`` for ``Omega = dz^1 ^ .. ^ dz^n`` from the top-form ratio.

    Computed as ``i^{n^2} n! Omega ^ Omegabar / omega^n``; equals ``1/det g``.
    """
    g = np.asarray(g, dtype=complex)
    n = g.shape[-1]
    omega_n = volume_coefficient(g) * math.factorial(n)
    return (1j ** (n * n)) * math.factorial(n) / omega_n


@lru_cache(maxsize=None)
def _pair_contraction_table(n: int, p: int, m: int):
    r = p - m
    full = combo_index(n, p)
    small = combo_index(n, m)
    rows = []  # (out_k, out_j, minor_u, minor_b, src_k, src_j, sign)
    for ok, Kr in enumerate(combos(n, r)):
        for oj, Jr in enumerate(combos(n, r)):
            for B in combos(n, m):
                if set(B) & set(Kr):
                    continue
                for U in combos(n, m):
                    if set(U) & set(Jr):
                        continue
                    kf, jf = Kr + B, Jr + U
                    sign = _sign(kf) * _sign(jf)
                    rows.append((ok, oj, small[U], small[B], full[tuple(sorted(kf))],
                                 full[tuple(sorted(jf))], sign))
    arr = np.array(rows, dtype=int).reshape(-1, 7)
    nr = math.comb(n, r)
    scatter = np.zeros((len(arr), nr * nr))
    scatter[np.arange(len(arr)), arr[:, 0] * nr + arr[:, 1]] = arr[:, 6]
    return arr, scatter


def contract_pairs(theta: PQForm, g, m: int) -> PQForm:
    """Contract ``m`` index pairs of a (p,p)-form with ``g^{j kbar}``.

    Returns the (p-m,p-m)-form whose paired components are
    ``g^{u_1 bbar_1} .. g^{u_m bbar_m} Theta[.., bbar_1, u_1, .., bbar_m, u_m]``.
    """
    if theta.p != theta.q:
        raise DegreeError("pair contraction needs a (p,p)-form")
    n, p = theta.n, theta.p
    if not 0 <= m <= p:
        raise DegreeError(f"cannot contract {m} pairs of a ({p},{p})-form")
    r = p - m
    ginv = np.linalg.inv(np.asarray(g, dtype=complex))
    cm = combos(n, m)
    if m:
        rows = np.array(cm)
        sub = ginv[..., rows[:, None, :, None], rows[None, :, None, :]]
        minors = np.linalg.det(sub)  # [..., U, B]
    else:
        minors = np.ones(ginv.shape[:-2] + (1, 1), complex)
    table, scatter = _pair_contraction_table(n, p, m)
    terms = minors[..., table[:, 2], table[:, 3]] * theta.coeffs[..., table[:, 4], table[:, 5]]
    out = (terms @ scatter) * (math.factorial(m) * _eps(p) * _eps(r))
    nr = math.comb(n, r)
    return PQForm(r, r, n, out.reshape(out.shape[:-1] + (nr, nr)))


def trace_pp(theta: PQForm, g):
    """``Tr Theta = i^{-p} prod g^{k_l jbar_l} Theta_{jbar_1 k_1 .. jbar_p k_p}``."""
    if theta.p != theta.q:
        raise DegreeError("trace needs a (p,p)-form")
    return (1j ** (-theta.p)) * contract_pairs(theta, g, theta.p).coeffs[..., 0, 0]


def contract_against_omega_power(theta: PQForm, g):
    """Closed-form scalar c with ``theta ^ omega^{n-p}/(n-p)! = c omega^n/n!``, p in {1,2,3}."""
    if theta.p != theta.q:
        raise DegreeError("contraction needs a (p,p)-form")
    ginv = np.linalg.inv(np.asarray(g, dtype=complex))
    p = theta.p
    if p == 1:
        return -1j * np.einsum("...jk,...kj->...", ginv, theta.coeffs)
    if p == 2:
        return -0.5 * np.einsum("...jk,...lm,...kjml->...", ginv, ginv, theta.paired())
    if p == 3:
        return (1j / 6) * np.einsum("...jk,...qp,...sr,...kjpqrs->...", ginv, ginv, ginv,
                                    theta.paired())
    raise DegreeError(f"no closed-form contraction for p={p}")


def hodge_star_n1n1(theta: PQForm, g) -> PQForm:
    """Hodge star of an (n-1,n-1)-form, returned as a (1,1)-form."""
    n = theta.n
    if theta.p != n - 1 or theta.q != n - 1:
        raise DegreeError("hodge_star_n1n1 needs an (n-1,n-1)-form")
    if n < 3:
        raise UnsupportedDimensionError("needs n >= 3")
    g = np.asarray(g, dtype=complex)
    partial = contract_pairs(theta, g, n - 2).coeffs
    tr = trace_pp(theta, g)[..., None, None]
    # fixed by the defining property beta ^ Theta = <beta, *Theta> omega^n/n!
    coef = 1.0 / math.factorial(n - 1)
    out = coef * (-(n - 1) * (1j ** (-(n - 2))) * partial + tr * 1j * g)
    return PQForm(1, 1, n, out)


def star_alpha_wedge(alpha: PQForm, g) -> PQForm:
    """Closed form of ``*(alpha ^ omega^{n-2})`` for a (1,1)-form alpha."""
    n = alpha.n
    if (alpha.p, alpha.q) != (1, 1):
        raise DegreeError("alpha must be a (1,1)-form")
    if n < 3:
        raise UnsupportedDimensionError("needs n >= 3")
    f = math.factorial(n - 2)
    tr = trace_pp(alpha, g)
    return -f * alpha + omega(g) * (f * tr)


def star_phi_wedge(phi: PQForm, g) -> PQForm:
    """Closed form of ``*(Phi ^ omega^{n-3})`` for a (2,2)-form Phi."""
    n = phi.n
    if (phi.p, phi.q) != (2, 2):
        raise DegreeError("Phi must be a (2,2)-form")
    if n < 3:
        raise UnsupportedDimensionError("needs n >= 3")
    g = np.asarray(g, dtype=complex)
    ginv = np.linalg.inv(g)
    f = math.factorial(n - 3)
    c = np.einsum("...sr,...rskj->...kj", ginv, phi.paired())
    tr = trace_pp(phi, g)[..., None, None]
    return PQForm(1, 1, n, 1j * f * c + 1j * (f / 2) * tr * g)


def star_psi_wedge(psi: PQForm, g) -> PQForm:
    """Closed form of ``*(Psi ^ omega^{n-4})`` for a (3,3)-form Psi; n >= 4."""
    n = psi.n
    if (psi.p, psi.q) != (3, 3):
        raise DegreeError("Psi must be a (3,3)-form")
    if n < 4:
        raise UnsupportedDimensionError("needs n >= 4")
    g = np.asarray(g, dtype=complex)
    ginv = np.linalg.inv(g)
    f = math.factorial(n - 4)
    c = np.einsum("...qp,...sr,...rspqkj->...kj", ginv, ginv, psi.paired())
    tr = trace_pp(psi, g)[..., None, None]
    return PQForm(1, 1, n, (f / 2) * c + 1j * (f / 6) * tr * g)


def torsion_form(T) -> PQForm:
    """(2,1)-form ``1/2 T_{kbar j l} dz^l ^ dz^j ^ dzbar^k`` from ``T[..., k, j, l]``."""
    return PQForm.from_components(T, 2, 1)


def t_wedge_tbar_components(T) -> PQForm:
    """``T ^ Tbar`` as a (3,3)-form from the nine-term antisymmetrized expansion."""
    T = np.asarray(T, dtype=complex)
    Tb = np.conj(T)  # Tb[q, p, r] = Tbar_{q pbar rbar}
    terms = ("ksj,qpr", "rsj,qkp", "psj,qrk", "kqs,jpr", "rqs,jkp",
             "pqs,jrk", "kjq,spr", "rjq,skp", "pjq,srk")
    psi = sum(np.einsum(f"...{t.split(',')[0]},...{t.split(',')[1]}->...pqrskj", T, Tb)
              for t in terms)
    return PQForm.from_paired(psi, 3)


def torsion_norms(T, g):
    """Torsion one-form ``T_l``, ``|T|^2`` and ``|tau|^2`` (batch)."""
    T = np.asarray(T, dtype=complex)
    ginv = np.linalg.inv(np.asarray(g, dtype=complex))
    tau = np.einsum("...jk,...kjl->...l", ginv, T)
    t2 = np.einsum("...mk,...jn,...lp,...kjl,...mnp->...", ginv, ginv, ginv, T, np.conj(T),
                   optimize=True)
    tau2 = np.einsum("...jk,...j,...k->...", ginv, tau, np.conj(tau))
    return tau, t2.real, tau2.real


# random data for tests and the identity suite

def random_hermitian(n: int, rng, scale: float = 0.5, batch=(), cond=None):
    """Random positive definite Hermitian matrix ``g[..., k, j]``.

    With ``cond`` the spectrum is drawn log-uniformly from
    ``[cond^{-1/2}, cond^{1/2}]`` and rotated by a random unitary.
    """
    shape = tuple(batch) + (n, n)
    if cond is not None:
        z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        q, _ = np.linalg.qr(z)
        half = 0.5 * math.log(cond)
        lam = np.exp(rng.uniform(-half, half, size=tuple(batch) + (n,)))
        g = (q * lam[..., None, :]) @ np.conj(np.swapaxes(q, -1, -2))
    else:
        a = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        h = np.eye(n) + scale * (a + np.conj(np.swapaxes(a, -1, -2))) / (2 * np.sqrt(n))
        g = h @ np.conj(np.swapaxes(h, -1, -2))
    # exact Hermitian symmetry, real diagonal
    return 0.5 * (g + np.conj(np.swapaxes(g, -1, -2)))


def random_form(p: int, q: int, n: int, rng, real: bool = False, batch=()) -> PQForm:
    shape = tuple(batch) + (math.comb(n, q), math.comb(n, p))
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    form = PQForm(p, q, n, c)
    if real:
        if p != q:
            raise DegreeError("real forms need p == q")
        form = (form + form.conj()) * 0.5
    return form


def random_torsion(n: int, rng, batch=()):
    """Random tensor ``T[..., k, j, l]`` antisymmetric in (j, l)."""
    shape = tuple(batch) + (n, n, n)
    a = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return a - np.swapaxes(a, -1, -2)


def tt_double_contraction(T, g):
    """Closed form of ``g^{q pbar} g^{s rbar} (T ^ Tbar)_{rbar s pbar q kbar j}`` as ``[..., k, j]``."""
    T = np.asarray(T, dtype=complex)
    ginv = np.linalg.inv(np.asarray(g, dtype=complex))
    Tb = np.conj(T)
    tau = np.einsum("...jk,...kjl->...l", ginv, T)
    taub = np.conj(tau)
    out = 2 * np.einsum("...qp,...sr,...psj,...qrk->...kj", ginv, ginv, T, Tb, optimize=True)
    out += np.einsum("...qp,...sr,...kqs,...jpr->...kj", ginv, ginv, T, Tb, optimize=True)
    out -= 2 * np.einsum("...sr,...kjs,...r->...kj", ginv, T, taub)
    out -= 2 * np.einsum("...sr,...s,...jkr->...kj", ginv, tau, Tb)
    out -= 2 * tau[..., None, :] * taub[..., :, None]
    return out
