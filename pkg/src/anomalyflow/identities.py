"""Randomized identity suite: closed forms against brute-force oracles."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .anomaly import af_lhs_form, i_ddbar_omega_power_jet, metric_velocity
from .forms import (
    contract_against_omega_power, contract_pairs, random_form, random_hermitian, random_torsion,
    star_alpha_wedge, star_phi_wedge, star_psi_wedge, t_wedge_tbar_components, torsion_form,
    torsion_norms, tt_double_contraction,
)
from .geometry import (
    curvature_from_jet, i_ddbar_omega_direct, nabla_T_from_jet, random_conformally_balanced_jet,
    random_metric_jet, riccis, torsion_from_jet, tr_i_ddbar_omega, tr_i_ddbar_omega_rhs,
)
from .oracles import contraction_oracle, star_composition_oracle, wedge_bruteforce


# spectrum of random metrics stays within [1/2, 2]
COND = 4.0


def rel_err(a, b, scale=0.0):
    """Sup error relative to the larger of ``sup|b|`` and the size ``scale`` of the summands."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), scale, 1e-300))


def _metric(n, rng):
    return random_hermitian(n, rng, cond=COND)


def _star(p, closed):
    def check(n, rng):
        g = _metric(n, rng)
        form = random_form(p, p, n, rng, real=True)
        return rel_err(closed(form, g).coeffs, star_composition_oracle(form, g).coeffs)
    return check


def _contract(p):
    def check(n, rng):
        g = _metric(n, rng)
        form = random_form(p, p, n, rng)
        return rel_err(contract_against_omega_power(form, g), contraction_oracle(form, g))
    return check


def _t_wedge_tbar(n, rng):
    T = random_torsion(n, rng)
    tf = torsion_form(T)
    return rel_err(t_wedge_tbar_components(T).coeffs, wedge_bruteforce(tf, tf.conj()).coeffs)


def _triple_trace(n, rng):
    g, T = _metric(n, rng), random_torsion(n, rng)
    _, t2, tau2 = torsion_norms(T, g)
    return rel_err(contract_pairs(t_wedge_tbar_components(T), g, 3).coeffs[0, 0], 3 * (t2 - 2 * tau2),
                   3 * (t2 + 2 * tau2))


def _double_trace(n, rng):
    g, T = _metric(n, rng), random_torsion(n, rng)
    return rel_err(tt_double_contraction(T, g), contract_pairs(t_wedge_tbar_components(T), g, 2).paired())


def _top(n, rng):
    g, T = _metric(n, rng), random_torsion(n, rng)
    _, t2, tau2 = torsion_norms(T, g)
    c = contraction_oracle(t_wedge_tbar_components(T), g) * math.factorial(n - 3) / math.factorial(n)
    k = 0.5 / (n * (n - 1) * (n - 2))
    return rel_err(c, 1j * k * (t2 - 2 * tau2), k * (t2 + 2 * tau2))


def _tr_iddbar(n, rng):
    jet = random_metric_jet(n, rng, cond=COND)
    ginv = jet.ginv
    R, T = curvature_from_jet(jet, ginv), torsion_from_jet(jet)
    lhs = tr_i_ddbar_omega(i_ddbar_omega_direct(jet), ginv)
    return rel_err(lhs, tr_i_ddbar_omega_rhs(riccis(R, ginv), T, ginv))


def _conf_bal(n, rng):
    jet = random_conformally_balanced_jet(n, rng, cond=COND)
    ginv = jet.ginv
    rc = riccis(curvature_from_jet(jet, ginv), ginv)
    return max(rel_err(rc.ric_p, rc.ric / 2), rel_err(rc.ric_pp, rc.ric / 2),
               rel_err(rc.ric_tilde, rc.ric / 2 + nabla_T_from_jet(jet, ginv)))


def _metric_evolution(n, rng):
    jet = random_conformally_balanced_jet(n, rng, cond=COND)
    ginv = jet.ginv
    rc = riccis(curvature_from_jet(jet, ginv), ginv)
    gdot = metric_velocity(jet.g, rc.ric_tilde, torsion_from_jet(jet), ginv)
    want = i_ddbar_omega_power_jet(jet, n - 2)
    return rel_err(af_lhs_form(jet.g, gdot).coeffs, want.coeffs)


# name, smallest n, check
IDENTITIES = [
    ("star-wedge-n-2", 3, _star(1, star_alpha_wedge)),
    ("star-wedge-n-3", 3, _star(2, star_phi_wedge)),
    ("star-wedge-n-4", 4, _star(3, star_psi_wedge)),
    ("contract-1-1", 3, _contract(1)),
    ("contract-2-2", 3, _contract(2)),
    ("contract-3-3", 3, _contract(3)),
    ("t-wedge-tbar", 3, _t_wedge_tbar),
    ("tr-tr-TT", 3, _double_trace),
    ("tr-tr-tr-TT", 3, _triple_trace),
    ("t-wedge-tbar-top", 3, _top),
    ("tr-iddb-omega", 3, _tr_iddbar),
    ("conf-bal-riccis", 3, _conf_bal),
    ("metric-evolution", 3, _metric_evolution),
]


@dataclass
class IdentityResult:
    name: str
    n: int
    trials: int
    max_rel_err: float
    passed: bool
    skipped: bool = False

    def line(self):
        if self.skipped:
            return f"SKIP {self.name:18s} n={self.n} (needs larger n)"
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name:18s} n={self.n} trials={self.trials} max_rel_err={self.max_rel_err:.3e}"

    def to_dict(self):
        return asdict(self)


def run_identities(seed=0, dims=(3, 4, 5), trials=50, tol=1e-10, names=None):
    """Run every identity ``trials`` times per dimension; returns (results, seconds)."""
    start = time.perf_counter()
    out = []
    if trials == 0:
        return out, 0.0
    for idx, (name, lo, check) in enumerate(IDENTITIES):
        if names is not None and name not in names:
            continue
        for n in dims:
            if n < lo:
                out.append(IdentityResult(name, n, 0, 0.0, True, skipped=True))
                continue
            rng = np.random.default_rng([seed, idx, n])
            err = max(check(n, rng) for _ in range(trials))
            out.append(IdentityResult(name, n, trials, err, err <= tol))
    return out, time.perf_counter() - start
