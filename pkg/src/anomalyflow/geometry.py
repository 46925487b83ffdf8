"""Torsion, Chern curvature, Ricci tensors and i ddbar omega of Hermitian metrics.

Everything pointwise is written in terms of the 2-jet of the metric:

* ``g[..., k, l]   = g_{kbar l}``
* ``dg[..., j, k, l]  = d_j g_{kbar l}``
* ``ddg[..., p, q, k, l] = d_p d_qbar g_{kbar l}``

so the same algebra serves random jets (exact identity checks) and metric
fields on the torus (jets from spectral derivatives). Barred derivatives
follow from Hermitian symmetry: ``d_qbar g_{kbar l} = conj(d_q g_{lbar k})``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import linalg
from .forms import PQForm, omega, omega_power, random_hermitian
from .torus import TorusGrid, d_form

CHUNK = 8192


@dataclass
class MetricJet:
    g: np.ndarray
    dg: np.ndarray
    ddg: np.ndarray

    @property
    def n(self):
        return self.g.shape[-1]

    @property
    def ginv(self):
        return np.linalg.inv(self.g)

    @property
    def dbar_g(self):
        """``[..., q, k, l] = d_qbar g_{kbar l}``."""
        return np.conj(np.swapaxes(self.dg, -1, -2))

    def flat(self):
        n = self.n
        return MetricJet(self.g.reshape(-1, n, n), self.dg.reshape(-1, n, n, n),
                         self.ddg.reshape(-1, n, n, n, n))

    def take(self, sl):
        return MetricJet(self.g[sl], self.dg[sl], self.ddg[sl])


# pointwise algebra on jets -----------------------------------------------------

def torsion_from_jet(jet: MetricJet):
    """``T[..., k, j, l] = d_j g_{kbar l} - d_l g_{kbar j}``."""
    dg = jet.dg
    return np.einsum("...jkl->...kjl", dg) - np.einsum("...lkj->...kjl", dg)


def curvature_from_jet(jet: MetricJet, ginv=None):
    """Lowered Chern curvature ``R[..., k, j, p, q] = R_{kbar j pbar q}``.

    ``R_{kbar j pbar q} = -d_kbar d_j g_{pbar q} + d_kbar g_{pbar r} g^{r sbar} d_j g_{sbar q}``.
    """
    if ginv is None:
        ginv = jet.ginv
    first = -np.einsum("...jkpq->...kjpq", jet.ddg)
    second = np.einsum("...kpr,...rs,...jsq->...kjpq", jet.dbar_g, ginv, jet.dg, optimize=True)
    return first + second


@dataclass
class Riccis:
    ric: np.ndarray        # R_{kbar j}  = g^{q abar} R_{kbar j abar q}
    ric_tilde: np.ndarray  # R~_{abar b} = g^{j kbar} R_{kbar j abar b}
    ric_p: np.ndarray      # R'_{kbar j} = g^{p abar} R_{kbar p abar j}
    ric_pp: np.ndarray     # R''_{kbar j} = g^{p abar} R_{abar j kbar p}


def riccis(R, ginv) -> Riccis:
    return Riccis(
        np.einsum("...qa,...kjaq->...kj", ginv, R),
        np.einsum("...jk,...kjab->...ab", ginv, R),
        np.einsum("...pa,...kpaj->...kj", ginv, R),
        np.einsum("...pa,...ajkp->...kj", ginv, R),
    )


def i_ddbar_omega_direct(jet: MetricJet):
    """Paired components ``[..., k, j, l, m]`` of i ddbar omega from second derivatives of g."""
    d = jet.ddg  # [p, q, a, b] = d_p d_qbar g_{abar b}
    return (np.einsum("...jlkm->...kjlm", d) - np.einsum("...mlkj->...kjlm", d)
            - np.einsum("...jklm->...kjlm", d) + np.einsum("...mklj->...kjlm", d))


def i_ddbar_omega_from_curvature(R, T, ginv):
    """Paired components of i ddbar omega from curvature and torsion.

    ``R_{kbar j lbar m} - R_{kbar m lbar j} + R_{lbar m kbar j} - R_{lbar j kbar m}
    - g^{s rbar} T_{rbar m j} Tbar_{s lbar kbar}``.
    """
    Tb = np.conj(T)
    quad = np.einsum("...sr,...rmj,...slk->...kjlm", ginv, T, Tb, optimize=True)
    return (R - np.einsum("...kmlj->...kjlm", R) + np.einsum("...lmkj->...kjlm", R)
            - np.einsum("...ljkm->...kjlm", R) - quad)


def tr_i_ddbar_omega(P, ginv):
    """``g^{j kbar} P_{kbar j lbar m}`` as ``[..., l, m]``."""
    return np.einsum("...jk,...kjlm->...lm", ginv, P)


def tr_i_ddbar_omega_rhs(ric: Riccis, T, ginv):
    """``R~ - R'' + R - R' - g^{j kbar} g^{s rbar} T_{rbar m j} Tbar_{s lbar kbar}`` as ``[..., l, m]``."""
    quad = np.einsum("...jk,...sr,...rmj,...slk->...lm", ginv, ginv, T, np.conj(T), optimize=True)
    return ric.ric_tilde - ric.ric_pp + ric.ric - ric.ric_p - quad


def nabla_T_from_jet(jet: MetricJet, ginv=None, T=None):
    """``nabla^m T_{kbar j m} = g^{m pbar} (d_pbar T_{kbar j m} - conj(Gamma^a_{p k}) T_{abar j m})``.

    Chern connection with ``Gamma^a_{p k} = g^{a lbar} d_p g_{lbar k}``.
    """
    if ginv is None:
        ginv = jet.ginv
    if T is None:
        T = torsion_from_jet(jet)
    d = jet.ddg
    dbar_T = np.einsum("...jpkm->...pkjm", d) - np.einsum("...mpkj->...pkjm", d)
    gamma = np.einsum("...al,...plk->...pak", ginv, jet.dg)
    corr = np.einsum("...pak,...ajm->...pkjm", np.conj(gamma), T)
    return np.einsum("...mp,...pkjm->...kj", ginv, dbar_T - corr)


def torsion_norms_field(T, ginv):
    """``(tau_l, |T|^2, |tau|^2)`` for batched torsion with known inverse metric."""
    tau = np.einsum("...jk,...kjl->...l", ginv, T)
    t2 = np.einsum("...mk,...jn,...lp,...kjl,...mnp->...", ginv, ginv, ginv, T, np.conj(T),
                   optimize=True).real
    tau2 = np.einsum("...jk,...j,...k->...", ginv, tau, np.conj(tau)).real
    return tau, t2, tau2


# random jets --------------------------------------------------------------------

def _hermitize_dd(x):
    return 0.5 * (x + np.conj(np.einsum("...pqkl->...qplk", x)))


def random_metric_jet(n, rng, scale=0.5, cond=None) -> MetricJet:
    g = random_hermitian(n, rng, cond=cond)
    dg = scale * (rng.standard_normal((n,) * 3) + 1j * rng.standard_normal((n,) * 3))
    dd = rng.standard_normal((n,) * 4) + 1j * rng.standard_normal((n,) * 4)
    return MetricJet(g, dg, scale * _hermitize_dd(dd))


def random_kahler_jet(n, rng, scale=0.5, cond=None) -> MetricJet:
    """2-jet of ``chi0 + i ddbar P`` for a random polynomial potential P."""
    g = random_hermitian(n, rng, cond=cond)
    a = rng.standard_normal((n,) * 3) + 1j * rng.standard_normal((n,) * 3)
    dg = 0.5 * (a + np.einsum("jkl->lkj", a))
    b = rng.standard_normal((n,) * 4) + 1j * rng.standard_normal((n,) * 4)
    b = b + np.einsum("pqkl->lqkp", b)
    b = b + np.einsum("pqkl->pkql", b)
    return MetricJet(g, scale * dg, scale * _hermitize_dd(b) / 4)


def conformal_jet(chi: MetricJet, power: float) -> MetricJet:
    """2-jet of ``(det chi)^power * chi``."""
    ci = chi.ginv  # [l, k] = chi^{l kbar}
    du = power * np.einsum("...lk,...pkl->...p", ci, chi.dg)
    dbar_chi = chi.dbar_g
    ddu = power * (np.einsum("...lk,...pqkl->...pq", ci, chi.ddg)
                   - np.einsum("...la,...qab,...bk,...pkl->...pq", ci, dbar_chi, ci, chi.dg, optimize=True))
    dbu = np.conj(du)
    e = np.real(np.linalg.det(chi.g)) ** power
    scal = (ddu + du[..., :, None] * dbu[..., None, :])[..., None, None] * chi.g[..., None, None, :, :]
    g = e[..., None, None] * chi.g
    dg = e[..., None, None, None] * (du[..., :, None, None] * chi.g[..., None, :, :] + chi.dg)
    ddg = scal + du[..., :, None, None, None] * dbar_chi[..., None, :, :, :]
    ddg += dbu[..., None, :, None, None] * chi.dg[..., :, None, :, :] + chi.ddg
    ddg *= e[..., None, None, None, None]
    return MetricJet(g, dg, ddg)


def random_conformally_balanced_jet(n, rng, scale=0.5, cond=None) -> MetricJet:
    """Jet of ``(det chi)^{1/(n-2)} chi`` with chi Kaehler, which is conformally balanced."""
    return conformal_jet(random_kahler_jet(n, rng, scale, cond), 1.0 / (n - 2))


# metric fields on the torus ---------------------------------------------------------

def metric_jet(grid: TorusGrid, g) -> MetricJet:
    """Spectral 2-jet of a metric field ``g[grid..., k, l]``."""
    n = grid.n
    ghat = grid.fft(g)
    dg = np.stack([grid.apply_symbol(ghat, grid.symbol(j)) for j in range(n)], axis=2 * n)
    ddg = np.empty(grid.shape + (n,) * 4, complex)
    for p in range(n):
        for q in range(n):
            ddg[..., p, q, :, :] = grid.apply_symbol(ghat, grid.symbol(p) * grid.symbol(q, bar=True))
    return MetricJet(np.asarray(g, dtype=complex), dg, ddg)


def first_jet(grid: TorusGrid, g):
    n = grid.n
    ghat = grid.fft(g)
    return np.stack([grid.apply_symbol(ghat, grid.symbol(j)) for j in range(n)], axis=2 * n)


@dataclass
class TorsionField:
    T: np.ndarray
    tau: np.ndarray
    T2: np.ndarray
    tau2: np.ndarray


def torsion(grid: TorusGrid, g) -> TorsionField:
    """Torsion tensor, torsion one-form and their squared norms of a metric field."""
    dg = first_jet(grid, g)
    T = np.einsum("...jkl->...kjl", dg) - np.einsum("...lkj->...kjl", dg)
    tau, t2, tau2 = torsion_norms_field(T, np.linalg.inv(g))
    return TorsionField(T, tau, t2, tau2)


@dataclass
class CurvatureField:
    ric: np.ndarray
    ric_tilde: np.ndarray
    ric_p: np.ndarray
    ric_pp: np.ndarray
    R: np.ndarray | None = None
    nabla_T: np.ndarray | None = None
    torsion: np.ndarray | None = None


def _chunks(size, chunk=CHUNK):
    for s in range(0, size, chunk):
        yield slice(s, min(s + chunk, size))


def chern_curvature(grid: TorusGrid, g, keep_full=False, jet=None) -> CurvatureField:
    """Four Ricci tensors (and optionally the full lowered curvature) of a metric field.

    The n^4 curvature is built chunk by chunk over grid points unless
    ``keep_full`` asks for it.
    """
    n = grid.n
    jet = metric_jet(grid, g) if jet is None else jet
    fj = jet.flat()
    size = fj.g.shape[0]
    out = {k: np.empty((size, n, n), complex) for k in ("ric", "ric_tilde", "ric_p", "ric_pp", "nabla_T")}
    Tall = np.empty((size, n, n, n), complex)
    Rall = np.empty((size,) + (n,) * 4, complex) if keep_full else None
    for sl in _chunks(size):
        part = fj.take(sl)
        ginv = np.linalg.inv(part.g)
        R = curvature_from_jet(part, ginv)
        rc = riccis(R, ginv)
        T = torsion_from_jet(part)
        out["ric"][sl], out["ric_tilde"][sl] = rc.ric, rc.ric_tilde
        out["ric_p"][sl], out["ric_pp"][sl] = rc.ric_p, rc.ric_pp
        out["nabla_T"][sl] = nabla_T_from_jet(part, ginv, T)
        Tall[sl] = T
        if keep_full:
            Rall[sl] = R
    shp = grid.shape
    res = {k: v.reshape(shp + (n, n)) for k, v in out.items()}
    return CurvatureField(res["ric"], res["ric_tilde"], res["ric_p"], res["ric_pp"],
                          None if Rall is None else Rall.reshape(shp + (n,) * 4),
                          res["nabla_T"], Tall.reshape(shp + (n,) * 3))


def ricci_tilde(grid: TorusGrid, g, dg=None):
    """``R~_{kbar j} = -g^{p qbar} d_qbar d_p g_{kbar j} + g^{p qbar} g^{r sbar} d_qbar g_{kbar r} d_p g_{sbar j}``.

    Accumulates over derivative pairs so the n^4 second-derivative jet is never stored.
    """
    n = grid.n
    ginv = np.linalg.inv(g)
    ghat = grid.fft(g)
    if dg is None:
        dg = np.stack([grid.apply_symbol(ghat, grid.symbol(j)) for j in range(n)], axis=2 * n)
    out = np.zeros(grid.shape + (n, n), complex)
    for p in range(n):
        for q in range(n):
            dd = grid.apply_symbol(ghat, grid.symbol(p) * grid.symbol(q, bar=True))
            out -= ginv[..., p, q, None, None] * dd
    dbar = np.conj(np.swapaxes(dg, -1, -2))
    out += np.einsum("...pq,...rs,...qkr,...psj->...kj", ginv, ginv, dbar, dg, optimize=True)
    return out


@dataclass
class IDdbarOmega:
    direct: PQForm
    from_curvature: PQForm
    trace_lhs: np.ndarray
    trace_rhs: np.ndarray


def i_ddbar_omega(grid: TorusGrid, g) -> IDdbarOmega:
    """Both representations of i ddbar omega as (2,2)-form fields, plus the traced identity."""
    n = grid.n
    jet = metric_jet(grid, g).flat()
    size = jet.g.shape[0]
    nc = len(PQForm.zeros(2, 2, n).coeffs.ravel()) if n >= 2 else 0
    direct = np.empty((size, nc), complex)
    curv = np.empty((size, nc), complex)
    lhs = np.empty((size, n, n), complex)
    rhs = np.empty((size, n, n), complex)
    for sl in _chunks(size):
        part = jet.take(sl)
        ginv = np.linalg.inv(part.g)
        R = curvature_from_jet(part, ginv)
        T = torsion_from_jet(part)
        Pd = i_ddbar_omega_direct(part)
        Pc = i_ddbar_omega_from_curvature(R, T, ginv)
        direct[sl] = PQForm.from_paired(Pd, 2).coeffs.reshape(-1, nc)
        curv[sl] = PQForm.from_paired(Pc, 2).coeffs.reshape(-1, nc)
        lhs[sl] = tr_i_ddbar_omega(Pd, ginv)
        rhs[sl] = tr_i_ddbar_omega_rhs(riccis(R, ginv), T, ginv)
    shp = grid.shape
    k = PQForm.zeros(2, 2, n).coeffs.shape
    return IDdbarOmega(PQForm(2, 2, n, direct.reshape(shp + k)), PQForm(2, 2, n, curv.reshape(shp + k)),
                       lhs.reshape(shp + (n, n)), rhs.reshape(shp + (n, n)))


def omega_norm(g):
    """``||Omega||_omega = (det g)^{-1/2}`` for ``Omega = dz^1 ^ ... ^ dz^n``."""
    return linalg.det(g) ** -0.5


def conformally_balanced_form(g) -> PQForm:
    """``||Omega||_omega omega^{n-1}`` as an (n-1,n-1)-form field."""
    n = g.shape[-1]
    return omega_power(g, n - 1) * omega_norm(g)


def conf_balanced_residual(grid: TorusGrid, g) -> float:
    """Sup over the grid of all components of ``d(||Omega||_omega omega^{n-1})``."""
    form = conformally_balanced_form(g)
    res = max(d_form(grid, form).max_abs(), d_form(grid, form, bar=True).max_abs())
    return float(res)


def check_conformally_balanced(grid, g, tol=1e-6):
    res = conf_balanced_residual(grid, g)
    if res > tol * max(1.0, float(np.max(np.abs(g)))):
        warnings.warn(f"metric is not conformally balanced (residual {res:.3e})", stacklevel=3)
    return res


__all__ = [
    "MetricJet", "Riccis", "TorsionField", "CurvatureField", "IDdbarOmega",
    "torsion_from_jet", "curvature_from_jet", "riccis", "i_ddbar_omega_direct",
    "i_ddbar_omega_from_curvature", "tr_i_ddbar_omega", "tr_i_ddbar_omega_rhs", "nabla_T_from_jet",
    "torsion_norms_field", "random_metric_jet", "random_kahler_jet", "conformal_jet",
    "random_conformally_balanced_jet", "metric_jet", "first_jet", "torsion", "chern_curvature",
    "ricci_tilde", "i_ddbar_omega", "omega_norm", "conformally_balanced_form",
    "conf_balanced_residual", "check_conformally_balanced", "omega",
]
