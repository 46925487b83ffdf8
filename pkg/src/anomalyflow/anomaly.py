"""Anomaly flow of conformally balanced metrics and its reduction to the scalar flow.

Along ``d/dt(||Omega||_omega omega^{n-1}) = i ddbar omega^{n-2}`` with initial
data ``||Omega|| omega^{n-1} = chihat^{n-1}``, the metric stays of the form
``omega = (det chi)^{1/(n-2)} chi`` where ``chi = chihat + i ddbar phi`` and
``phi`` follows the Monge-Ampere flow with ``e^{-f} = det chihat / (n-1)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import linalg
from .forms import PQForm, UnsupportedDimensionError, omega, omega_power, wedge
from .geometry import (
    MetricJet, check_conformally_balanced, first_jet, metric_jet, nabla_T_from_jet, omega_norm, ricci_tilde,
    torsion_norms_field,
)
from .torus import TorusGrid, d_form, i_ddbar_form


def _need(n, lo, what):
    if n < lo:
        raise UnsupportedDimensionError(f"{what} needs n >= {lo}, got n = {n}")


# ansatz --------------------------------------------------------------------------

def ansatz_lift(chi):
    """``omega = ||Omega||_chi^{-2/(n-2)} chi = (det chi)^{1/(n-2)} chi``."""
    chi = np.asarray(chi)
    n = chi.shape[-1]
    _need(n, 3, "the ansatz")
    return linalg.det(chi)[..., None, None] ** (1.0 / (n - 2)) * chi


def ansatz_residual(g, chi):
    """Sup of the components of ``||Omega||_omega omega^{n-1} - chi^{n-1}``."""
    n = g.shape[-1]
    lhs = omega_power(g, n - 1) * omega_norm(g)
    return (lhs - omega_power(chi, n - 1)).max_abs()


def conformal_kahler_deviation(g, chi):
    """Relative sup distance of ``g`` from the pointwise conformal multiple of ``chi``."""
    n = g.shape[-1]
    scale = np.einsum("...jk,...kj->...", np.linalg.inv(chi), g).real / n
    dev = np.abs(g - scale[..., None, None] * chi)
    return float(np.max(dev) / np.max(np.abs(g)))


def balanced_class_pairings(grid: TorusGrid, form: PQForm):
    """``int form ^ gamma`` for the constant real (1,1)-forms ``gamma = omega(E)``, E a Hermitian basis."""
    n = form.n
    out = []
    for a in range(n):
        for b in range(n):
            E = np.zeros((n, n), complex)
            if a == b:
                E[a, a] = 1
            elif a < b:
                E[a, b] = E[b, a] = 1
            else:
                E[a, b], E[b, a] = 1j, -1j
            top = wedge(form, omega(E))
            out.append(grid.integrate(top.coeffs[..., 0, 0]))
    return np.array(out)


# metric evolution ----------------------------------------------------------------

def metric_velocity(g, ric_tilde, T, ginv=None):
    """Pointwise ``d_t g_{kbar j}`` of the anomaly flow from ``R~``, the torsion and the metric.

    Valid for conformally balanced metrics; n = 3 and n >= 4 use different
    torsion terms.
    """
    g = np.asarray(g)
    n = g.shape[-1]
    _need(n, 3, "the metric evolution")
    if ginv is None:
        ginv = np.linalg.inv(g)
    norm = omega_norm(g)[..., None, None]
    Tc = np.conj(T)
    if n == 3:
        quad = np.einsum("...ml,...sr,...rmj,...slk->...kj", ginv, ginv, T, Tc, optimize=True)
        return (-ric_tilde + quad) / (2 * norm)
    tau, t2, tau2 = torsion_norms_field(T, ginv)
    a = np.einsum("...qp,...sr,...kqs,...jpr->...kj", ginv, ginv, T, Tc, optimize=True)
    b = np.einsum("...sr,...kjs,...r->...kj", ginv, T, np.conj(tau))
    c = np.einsum("...sr,...s,...jkr->...kj", ginv, tau, Tc)
    d = np.conj(tau)[..., :, None] * tau[..., None, :]
    bracket = -ric_tilde + ((t2 - 2 * tau2) / (2 * (n - 2)))[..., None, None] * g - 0.5 * a + b + c + d
    return bracket / ((n - 1) * norm)


def _torsion_from_dg(dg):
    return np.einsum("...jkl->...kjl", dg) - np.einsum("...lkj->...kjl", dg)


def anomaly_rhs_metric(grid: TorusGrid, g, check=True, tol=1e-6):
    """``d_t g`` of the anomaly flow for a conformally balanced metric field."""
    _need(grid.n, 3, "the metric evolution")
    if check:
        check_conformally_balanced(grid, g, tol)
    dg = first_jet(grid, g)
    rt = ricci_tilde(grid, g, dg)
    return metric_velocity(g, rt, _torsion_from_dg(dg))


def af_lhs_form(g, gdot) -> PQForm:
    """``d/dt(||Omega||_omega omega^{n-1})`` for a metric moving with velocity ``gdot``.

    Uses ``d/dt ||Omega||_omega = -1/2 ||Omega||_omega Tr gdot``.
    """
    n = g.shape[-1]
    norm = omega_norm(g)
    tr = np.einsum("...jk,...kj->...", np.linalg.inv(g), gdot).real
    w = omega_power(g, n - 2)
    return (wedge(omega(gdot), w) * (n - 1) - omega_power(g, n - 1) * (0.5 * tr)) * norm


def anomaly_rhs_form(grid: TorusGrid, g) -> PQForm:
    """``i ddbar omega^{n-2}`` by spectral differentiation of the wedge power."""
    n = grid.n
    _need(n, 3, "the anomaly flow")
    return i_ddbar_form(grid, omega_power(g, n - 2))


def _dz(n, j, bar=False):
    c = np.zeros((n, 1) if bar else (1, n), complex)
    if bar:
        c[j, 0] = 1
        return PQForm(0, 1, n, c)
    c[0, j] = 1
    return PQForm(1, 0, n, c)


def i_ddbar_omega_power_jet(jet: MetricJet, k: int) -> PQForm:
    """``i ddbar omega^k`` at a point from the metric 2-jet, by the Leibniz rule on forms."""
    n = jet.n
    g = jet.g
    dbar = jet.dbar_g
    out = None
    for p in range(n):
        for q in range(n):
            ddw = wedge(omega(jet.ddg[..., p, q, :, :]), omega_power(g, k - 1)) * k
            if k >= 2:
                pair = wedge(omega(jet.dg[..., p, :, :]), omega(dbar[..., q, :, :]))
                ddw = ddw + wedge(pair, omega_power(g, k - 2)) * (k * (k - 1))
            term = wedge(_dz(n, p), wedge(_dz(n, q, bar=True), ddw))
            out = term if out is None else out + term
    return out * 1j


def af1_rhs(grid: TorusGrid, g, check=True, tol=1e-6):
    """Metric velocity of ``d_t omega^{n-1} = i ddbar omega^{n-2}`` for a balanced metric, n >= 4."""
    n = grid.n
    _need(n, 4, "the local form of this flow")
    if check:
        res = max(d_form(grid, omega_power(g, n - 1)).max_abs(), d_form(grid, omega_power(g, n - 1), bar=True).max_abs())
        if res > tol:
            warnings.warn(f"metric is not balanced (residual {res:.3e})", stacklevel=2)
    jet = metric_jet(grid, g)
    return af1_rhs_jet(jet)


def af1_rhs_jet(jet: MetricJet):
    n = jet.n
    ginv = jet.ginv
    T = _torsion_from_dg(jet.dg)
    _, t2, _ = torsion_norms_field(T, ginv)
    nab = nabla_T_from_jet(jet, ginv, T)
    a = np.einsum("...qp,...sr,...kqs,...jpr->...kj", ginv, ginv, T, np.conj(T), optimize=True)
    return -nab / (n - 1) + (-a + (t2 / (n - 1))[..., None, None] * jet.g) / (2 * (n - 1))


# dilaton functional ----------------------------------------------------------------

def volume_density(g):
    """``omega^n / dLeb = 2^n n! det g``."""
    n = g.shape[-1]
    return 2**n * math.factorial(n) * linalg.det(g)


def dilaton_functional(grid: TorusGrid, g):
    """``M = int ||Omega||_omega omega^n``."""
    n = g.shape[-1]
    return float(grid.integrate(2**n * math.factorial(n) * np.sqrt(linalg.det(g))))


@dataclass
class DilatonRates:
    general: float
    conformally_kahler: float
    T2: float
    tau2: float


def dilaton_rate(grid: TorusGrid, g, dg=None) -> DilatonRates:
    """``dM/dt`` from the general torsion integral and from its conformally Kahler form."""
    n = g.shape[-1]
    _need(n, 3, "the dilaton rate")
    if dg is None:
        dg = first_jet(grid, g)
    _, t2, tau2 = torsion_norms_field(_torsion_from_dg(dg), np.linalg.inv(g))
    vol = volume_density(g)
    it2 = float(grid.integrate(t2 * vol))
    itau2 = float(grid.integrate(tau2 * vol))
    general = (it2 - 2 * itau2) / (2 * (n - 1) * (n - 2))
    return DilatonRates(general, -it2 / (2 * (n - 1)), it2, itau2)


# stationarity ------------------------------------------------------------------------

def trace_stationarity_residual(grid: TorusGrid, g):
    """Sup of ``(n-2) Delta log||Omega||^2 - |T|^2 - 2(n-3)|tau|^2`` (zero at stationary points)."""
    n = g.shape[-1]
    ginv = np.linalg.inv(g)
    lap = grid.laplacian(-np.log(linalg.det(g)), ginv).real
    _, t2, tau2 = torsion_norms_field(_torsion_from_dg(first_jet(grid, g)), ginv)
    return float(np.max(np.abs((n - 2) * lap - t2 - 2 * (n - 3) * tau2)))


@dataclass
class Stationarity:
    rhs: float
    torsion: float
    log_norm: float

    @property
    def residual(self):
        return max(self.rhs, self.torsion, self.log_norm)


def stationary_residual(grid: TorusGrid, g, rhs=None) -> Stationarity:
    """Sup norms of the metric velocity, of ``|T|^2`` and of ``log||Omega||^2`` minus its mean."""
    dg = first_jet(grid, g)
    if rhs is None:
        rhs = metric_velocity(g, ricci_tilde(grid, g, dg), _torsion_from_dg(dg))
    _, t2, _ = torsion_norms_field(_torsion_from_dg(dg), np.linalg.inv(g))
    lg = -np.log(linalg.det(g))
    return Stationarity(float(np.max(np.abs(rhs))), float(np.max(t2)), float(np.max(np.abs(lg - lg.mean()))))


__all__ = [
    "ansatz_lift", "ansatz_residual", "conformal_kahler_deviation", "balanced_class_pairings",
    "metric_velocity", "anomaly_rhs_metric", "af_lhs_form", "anomaly_rhs_form", "i_ddbar_omega_power_jet",
    "af1_rhs", "af1_rhs_jet", "volume_density", "dilaton_functional", "DilatonRates", "dilaton_rate",
    "trace_stationarity_residual", "Stationarity", "stationary_residual", "omega_norm",
]
