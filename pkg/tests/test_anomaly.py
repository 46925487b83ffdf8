import math
import warnings

import numpy as np
import pytest

from anomalyflow.anomaly import (
    af1_rhs, af1_rhs_jet, af_lhs_form, anomaly_rhs_form, anomaly_rhs_metric, ansatz_lift, ansatz_residual,
    balanced_class_pairings, conformal_kahler_deviation, dilaton_functional, dilaton_rate,
    i_ddbar_omega_power_jet, metric_velocity, stationary_residual, trace_stationarity_residual,
)
from anomalyflow.forms import UnsupportedDimensionError, omega_power, random_hermitian
from anomalyflow.geometry import conf_balanced_residual, conformally_balanced_form, random_kahler_jet
from anomalyflow.maflow import FlowConfig, MAFlow
from anomalyflow.torus import TorusGrid

A = 0.05 / (2 * math.pi**2)
# the lift is polynomial in chi for n = 3, so eight points per direction resolve it exactly
PSI3 = [
    {"amplitude": A, "k": [1, 1, 0, 0, 0, 0]},
    {"amplitude": A, "k": [0, 0, 1, 0, 0, 0], "kind": "cos"},
    {"amplitude": A, "k": [0, 1, 0, 1, 0, 0]},
]


@pytest.fixture(scope="module")
def flow3():
    cfg = FlowConfig.from_dict({"n": 3, "shape": [8, 8, 8, 8, 1, 1], "psi": PSI3, "f": "derived"})
    return MAFlow.from_config(cfg)


@pytest.fixture(scope="module")
def flow4():
    psi = [{"amplitude": A, "k": [1, 1, 0, 0, 0, 0, 0, 0]}, {"amplitude": A, "k": [0, 0, 1, 1], "kind": "cos"}]
    # (det chi)^{1/2} is not band limited; at m = 16 the truncation error is near roundoff
    cfg = FlowConfig.from_dict({"n": 4, "shape": [16, 16, 16, 16, 1, 1, 1, 1], "psi": psi, "f": "derived"})
    return MAFlow.from_config(cfg)


def test_lift_needs_three_dimensions():
    with pytest.raises(UnsupportedDimensionError):
        ansatz_lift(np.eye(2))


def test_lift_of_constant_metric():
    chi = np.diag([1.0, 2.0, 4.0]).astype(complex)
    g = ansatz_lift(chi)
    assert np.allclose(g, 8.0 * chi)
    assert ansatz_residual(g, chi) < 1e-12
    assert conformal_kahler_deviation(g, chi) < 1e-15


@pytest.mark.parametrize("n", [3, 4, 5])
def test_ansatz_identity_pointwise(n):
    chi = random_hermitian(n, np.random.default_rng(n), batch=(5,))
    g = ansatz_lift(chi)
    assert ansatz_residual(g, chi) < 1e-12 * np.max(np.abs(omega_power(chi, n - 1).coeffs))


def test_lift_is_conformally_balanced(flow3):
    g = ansatz_lift(flow3.chi_hat)
    assert conf_balanced_residual(flow3.grid, g) < 1e-12


def test_metric_velocity_solves_flow_equation(flow3):
    g = ansatz_lift(flow3.chi_hat)
    gdot = anomaly_rhs_metric(flow3.grid, g)
    lhs = af_lhs_form(g, gdot)
    rhs = anomaly_rhs_form(flow3.grid, g)
    assert (lhs - rhs).max_abs() < 1e-10 * max(rhs.max_abs(), 1.0)


def test_metric_velocity_solves_flow_equation_n4(flow4):
    g = ansatz_lift(flow4.chi_hat)
    gdot = anomaly_rhs_metric(flow4.grid, g)
    rhs = anomaly_rhs_form(flow4.grid, g)
    assert (af_lhs_form(g, gdot) - rhs).max_abs() < 1e-10 * max(rhs.max_abs(), 1.0)


@pytest.mark.parametrize("name", ["flow3", "flow4"])
def test_scalar_flow_drives_lifted_metric(name, request):
    flow = request.getfixturevalue(name)
    s1 = flow.initial_state()
    h = 1e-4
    gm, gp = (ansatz_lift(flow.chi(s1.phi + sgn * h * s1.speed)) for sgn in (-1, 1))
    fd = (gp - gm) / (2 * h)
    want = anomaly_rhs_metric(flow.grid, ansatz_lift(s1.chi))
    assert np.max(np.abs(fd - want)) < 1e-6 * np.max(np.abs(want))


def test_non_balanced_metric_warns(flow3):
    g = ansatz_lift(flow3.chi_hat) * (1 + 0.1 * np.sin(2 * np.pi * flow3.grid.coords()[0]))[..., None, None]
    with pytest.warns(UserWarning):
        anomaly_rhs_metric(flow3.grid, g)


def test_kahler_ricci_flat_is_stationary():
    grid = TorusGrid(3, 4)
    g = np.broadcast_to(random_hermitian(3, np.random.default_rng(1)), grid.shape + (3, 3))
    st = stationary_residual(grid, g)
    assert st.residual < 1e-12
    assert trace_stationarity_residual(grid, g) < 1e-12
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert np.max(np.abs(anomaly_rhs_metric(grid, g))) < 1e-12


def test_dilaton_of_constant_metric():
    grid = TorusGrid(3, 4)
    g0 = np.diag([1.0, 2.0, 3.0]).astype(complex)
    g = np.broadcast_to(g0, grid.shape + (3, 3))
    assert math.isclose(dilaton_functional(grid, g), 2**3 * 6 * math.sqrt(6.0), rel_tol=1e-14)


@pytest.mark.parametrize("name", ["flow3", "flow4"])
def test_dilaton_rates_agree_for_conformally_kahler(name, request):
    flow = request.getfixturevalue(name)
    rates = dilaton_rate(flow.grid, ansatz_lift(flow.chi_hat))
    assert rates.T2 > 0
    assert math.isclose(rates.general, rates.conformally_kahler, rel_tol=1e-10)


def test_balanced_class_is_preserved(flow3):
    s = flow3.initial_state()
    s = flow3.step(flow3.step(s))
    p0 = balanced_class_pairings(flow3.grid, conformally_balanced_form(ansatz_lift(flow3.chi_hat)))
    p1 = balanced_class_pairings(flow3.grid, conformally_balanced_form(ansatz_lift(s.chi)))
    assert np.max(np.abs(p1 - p0)) < 1e-12 * np.max(np.abs(p0))


def test_metric_velocity_rejects_low_dimension():
    with pytest.raises(UnsupportedDimensionError):
        metric_velocity(np.eye(2), np.zeros((2, 2)), np.zeros((2, 2, 2)))


def test_af1_needs_four_dimensions(flow3):
    with pytest.raises(UnsupportedDimensionError):
        af1_rhs(flow3.grid, ansatz_lift(flow3.chi_hat))


@pytest.mark.parametrize("seed", range(5))
def test_af1_velocity_vanishes_on_kahler_jets(seed):
    # omega^2 is closed, and wedging with omega^2 is injective on (1,1)-forms when n = 4
    jet = random_kahler_jet(4, np.random.default_rng(seed), cond=4.0)
    assert i_ddbar_omega_power_jet(jet, 2).max_abs() < 1e-13
    assert np.max(np.abs(af1_rhs_jet(jet))) < 1e-13
