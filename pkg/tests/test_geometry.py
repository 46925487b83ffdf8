import numpy as np
import pytest

from anomalyflow.forms import random_hermitian
from anomalyflow.geometry import (
    MetricJet, chern_curvature, conf_balanced_residual, curvature_from_jet, i_ddbar_omega,
    i_ddbar_omega_direct, i_ddbar_omega_from_curvature, metric_jet, nabla_T_from_jet,
    random_conformally_balanced_jet, random_kahler_jet, random_metric_jet, ricci_tilde, riccis,
    torsion, torsion_from_jet, tr_i_ddbar_omega, tr_i_ddbar_omega_rhs,
)
from anomalyflow.oracles import chern_curvature_fd
from anomalyflow.torus import TorusGrid


def rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


def kahler_field(grid, amp=0.02):
    x = grid.coords()
    psi = amp * np.sin(2 * np.pi * (x[0] + x[1])) + 0.75 * amp * np.cos(2 * np.pi * (x[2] - x[1]))
    psi = np.broadcast_to(psi, grid.shape)
    return np.eye(grid.n) + grid.i_ddbar_scalar(psi)


@pytest.fixture(scope="module")
def grid3():
    return TorusGrid(3, shape=(8, 8, 8, 8, 1, 1))


# jet identities -------------------------------------------------------------------

@pytest.mark.parametrize("n", [3, 4, 5])
def test_iddbar_omega_two_representations_agree(n):
    rng = np.random.default_rng(n)
    for _ in range(10):
        jet = random_metric_jet(n, rng)
        ginv = jet.ginv
        R, T = curvature_from_jet(jet, ginv), torsion_from_jet(jet)
        assert rel(i_ddbar_omega_direct(jet), i_ddbar_omega_from_curvature(R, T, ginv)) < 1e-12


@pytest.mark.parametrize("n", [3, 4, 5])
def test_traced_iddbar_omega_identity(n):
    rng = np.random.default_rng(10 + n)
    for _ in range(10):
        jet = random_metric_jet(n, rng)
        ginv = jet.ginv
        R, T = curvature_from_jet(jet, ginv), torsion_from_jet(jet)
        lhs = tr_i_ddbar_omega(i_ddbar_omega_direct(jet), ginv)
        assert rel(lhs, tr_i_ddbar_omega_rhs(riccis(R, ginv), T, ginv)) < 1e-10


@pytest.mark.parametrize("n", [3, 4, 5])
def test_conformally_balanced_riccis(n):
    rng = np.random.default_rng(20 + n)
    for _ in range(10):
        jet = random_conformally_balanced_jet(n, rng)
        ginv = jet.ginv
        rc = riccis(curvature_from_jet(jet, ginv), ginv)
        assert rel(rc.ric_p, rc.ric / 2) < 1e-10
        assert rel(rc.ric_pp, rc.ric / 2) < 1e-10
        assert rel(rc.ric_tilde, rc.ric / 2 + nabla_T_from_jet(jet, ginv)) < 1e-10


def test_generic_jet_is_not_conformally_balanced():
    jet = random_metric_jet(4, np.random.default_rng(0))
    rc = riccis(curvature_from_jet(jet), jet.ginv)
    assert rel(rc.ric_p, rc.ric / 2) > 1e-3


def test_kahler_jet_has_no_torsion_and_closed_iddbar():
    jet = random_kahler_jet(4, np.random.default_rng(1))
    assert np.max(np.abs(torsion_from_jet(jet))) < 1e-14
    assert np.max(np.abs(i_ddbar_omega_direct(jet))) < 1e-13


def test_chern_curvature_hermitian_symmetry():
    jet = random_metric_jet(3, np.random.default_rng(2))
    R = curvature_from_jet(jet)
    # conj(R_{kbar j pbar q}) = R_{jbar k qbar p}
    assert rel(np.conj(R), np.einsum("kjpq->jkqp", R)) < 1e-12
    rc = riccis(R, jet.ginv)
    for r in (rc.ric, rc.ric_tilde):
        assert rel(r, np.conj(r.T)) < 1e-12
        assert abs(np.einsum("jk,kj->", jet.ginv, r).imag) < 1e-10


def _unitary(n, rng):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    return q


def test_unitary_equivariance():
    rng = np.random.default_rng(3)
    n = 3
    jet = random_metric_jet(n, rng)
    U = _unitary(n, rng)
    Uc = np.conj(U)
    # z = U w: g'_{kbar l} = conj(U_ak) g_{abar b} U_bl, d'_j = U_ij d_i, d'_qbar = conj(U_iq) d_ibar
    g2 = np.einsum("ak,ab,bl->kl", Uc, jet.g, U)
    dg2 = np.einsum("ij,ak,iab,bl->jkl", U, Uc, jet.dg, U)
    ddg2 = np.einsum("ip,jq,ak,ijab,bl->pqkl", U, Uc, Uc, jet.ddg, U)
    j2 = MetricJet(g2, dg2, ddg2)
    R1, R2 = curvature_from_jet(jet), curvature_from_jet(j2)
    assert rel(R2, np.einsum("ak,bj,cp,dq,abcd->kjpq", Uc, U, Uc, U, R1)) < 1e-12
    T1, T2 = torsion_from_jet(jet), torsion_from_jet(j2)
    assert rel(T2, np.einsum("ak,bj,cl,abc->kjl", Uc, U, U, T1)) < 1e-12


# metric fields ----------------------------------------------------------------------

def test_constant_metric_is_flat():
    grid = TorusGrid(3, 4)
    g = np.broadcast_to(random_hermitian(3, np.random.default_rng(0)), grid.shape + (3, 3)).copy()
    assert np.max(np.abs(torsion(grid, g).T)) < 1e-14
    cf = chern_curvature(grid, g)
    assert np.max(np.abs(cf.ric)) < 1e-14 and np.max(np.abs(cf.ric_tilde)) < 1e-14
    assert conf_balanced_residual(grid, g) < 1e-14


def test_kahler_field(grid3):
    chi = kahler_field(grid3)
    assert np.max(np.abs(torsion(grid3, chi).T)) < 1e-10
    assert i_ddbar_omega(grid3, chi).direct.max_abs() < 1e-10


def test_conformal_torsion_formula():
    n = 3
    grid3 = TorusGrid(3, shape=(32, 1, 1, 32, 1, 1))
    x = grid3.coords()
    psi = np.broadcast_to(0.1 * np.sin(2 * np.pi * x[0]) * np.cos(2 * np.pi * x[3]), grid3.shape)
    g0 = random_hermitian(n, np.random.default_rng(1))
    g = np.exp(psi)[..., None, None] * g0
    tf = torsion(grid3, g)
    dpsi = grid3.gradient(psi)
    # T_{kbar j l} = d_j psi g_{kbar l} - d_l psi g_{kbar j}
    expected = np.einsum("...j,...kl->...kjl", dpsi, g) - np.einsum("...l,...kj->...kjl", dpsi, g)
    assert rel(tf.T, expected) < 1e-8
    grad2 = np.einsum("...jk,...j,...k->...", np.linalg.inv(g), dpsi, np.conj(dpsi)).real
    assert rel(tf.T2, 2 * (n - 1) * grad2) < 1e-8
    assert rel(tf.tau2, (n - 1) ** 2 * grad2) < 1e-8
    assert rel(2 * tf.tau2, (n - 1) * tf.T2) < 1e-10


def test_ricci_tilde_of_conformally_flat_metric():
    grid = TorusGrid(3, shape=(16, 16, 16, 16, 1, 1))
    x = grid.coords()
    psi = np.broadcast_to(0.2 * np.sin(2 * np.pi * x[0]) + 0.1 * np.cos(2 * np.pi * (x[1] + x[2])), grid.shape)
    g = np.exp(psi)[..., None, None] * np.eye(3)
    ginv = np.linalg.inv(g)
    rt = ricci_tilde(grid, g)
    scalar = np.einsum("...jk,...kj->...", ginv, rt)
    # log det g = n psi is band limited, so the Laplacian is exact
    expected = -grid.laplacian(3 * psi, ginv)
    assert rel(scalar, expected) < 1e-8


def test_curvature_matches_finite_differences():
    n = 2
    grid = TorusGrid(n, 8)
    A = random_hermitian(n, np.random.default_rng(5))
    B = np.array([[0.1, 0.05 + 0.02j], [0.05 - 0.02j, -0.08]])
    C = np.array([[0.0, 0.03j], [-0.03j, 0.06]])

    def gfun(x):
        return A + B * np.sin(2 * np.pi * (x[0] + x[3])) + C * np.cos(2 * np.pi * (x[1] - x[2]))

    xs = grid.coords()
    s = np.sin(2 * np.pi * (xs[0] + xs[3]))[..., None, None]
    c = np.cos(2 * np.pi * (xs[1] - xs[2]))[..., None, None]
    g = A + B * s + C * c
    cf = chern_curvature(grid, g, keep_full=True)
    rng = np.random.default_rng(6)
    for _ in range(10):
        idx = tuple(rng.integers(0, 8, size=4))
        x = np.array([i / 8 for i in idx])
        assert rel(cf.R[idx], chern_curvature_fd(gfun, x)) < 1e-6


def test_ricci_tilde_light_path(grid3):
    chi = kahler_field(grid3)
    g = np.real(np.linalg.det(chi))[..., None, None] * chi
    assert rel(ricci_tilde(grid3, g), chern_curvature(grid3, g).ric_tilde) < 1e-12


def test_conformally_balanced_field(grid3):
    chi = kahler_field(grid3)
    g = np.real(np.linalg.det(chi))[..., None, None] * chi
    assert conf_balanced_residual(grid3, g) < 1e-9
    cf = chern_curvature(grid3, g)
    assert rel(cf.ric_p, cf.ric / 2) < 1e-8
    assert rel(cf.ric_pp, cf.ric / 2) < 1e-8
    assert rel(cf.ric_tilde, cf.ric / 2 + cf.nabla_T) < 1e-8
    idd = i_ddbar_omega(grid3, g)
    assert rel(idd.direct.coeffs, idd.from_curvature.coeffs) < 1e-10
    assert rel(idd.trace_lhs, idd.trace_rhs) < 1e-10


def test_non_balanced_residual_does_not_refine_away():
    res = []
    for m in (8, 16):
        grid = TorusGrid(3, shape=(m, m, 1, 1, 1, 1))
        x = grid.coords()
        psi = np.broadcast_to(0.1 * np.sin(2 * np.pi * x[0]), grid.shape)
        g = np.exp(psi)[..., None, None] * np.eye(3)
        res.append(conf_balanced_residual(grid, g))
    assert res[0] > 1e-2 and abs(res[1] - res[0]) < 1e-6 * res[0]


def test_metric_jet_matches_conformal_jet():
    """Spectral jets of (det chi) chi match the chain-rule jet at grid points."""
    from anomalyflow.geometry import conformal_jet
    grid = TorusGrid(3, shape=(8, 8, 8, 8, 1, 1))
    chi = kahler_field(grid)
    cj = metric_jet(grid, chi)
    g = np.real(np.linalg.det(chi))[..., None, None] * chi
    gj = metric_jet(grid, g)
    lifted = conformal_jet(cj, 1.0)
    assert rel(gj.dg, lifted.dg) < 1e-10
    assert rel(gj.ddg, lifted.ddg) < 1e-10
