import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anomalyflow.forms import UnsupportedDimensionError
from anomalyflow.maflow import (
    FlowBreakdown, FlowConfig, MAFlow, OracleFailure, PositivityError, convergence_detector, cy_oracle, derived_f,
    evolution_residuals, ma_rhs, measure_order, richardson_order, run_flow, three_point_derivative,
)

EPS = 0.1 / (2 * math.pi**2)


def _cfg(**kw):
    base = {"n": 2, "m": 8, "psi": [{"amplitude": EPS, "k": [1, 1, 0, 0]}], "f": "derived"}
    base.update(kw)
    return FlowConfig.from_dict(base)


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        FlowConfig.from_dict({"n": 2, "bogus": 1})


def test_config_roundtrip():
    cfg = _cfg(shape=[8, 8, 1, 1])
    assert FlowConfig.from_dict(cfg.to_dict()) == cfg


def test_background_must_be_positive():
    cfg = _cfg(psi=[{"amplitude": 1.0, "k": [1, 1, 0, 0]}])
    with pytest.raises(PositivityError):
        cfg.chi_hat(cfg.grid())


def test_chi0_must_be_hermitian():
    cfg = _cfg(chi0=[[1, 1], [0, 1]])
    with pytest.raises(ValueError):
        cfg.chi_hat(cfg.grid())


def test_derived_f_needs_two_dimensions():
    with pytest.raises(UnsupportedDimensionError):
        derived_f(np.ones((4, 1, 1)))


def test_derived_f_values():
    chi = np.broadcast_to(np.diag([2.0, 3.0, 1.0]).astype(complex), (2, 3, 3))
    assert np.allclose(derived_f(chi), -math.log(6.0 / 2))


def test_speed_matches_reference_rhs():
    flow = MAFlow.from_config(_cfg())
    phi = 1e-3 * np.sin(2 * np.pi * flow.grid.coords()[1]) * np.ones(flow.grid.shape)
    assert np.allclose(flow.rhs(phi), ma_rhs(flow.grid, phi, flow.chi_hat, flow.f), rtol=1e-13)


def test_constant_background_converges_at_first_check():
    cfg = FlowConfig.from_dict({"n": 2, "m": 8, "f": 0.0, "chi0": [[2, 0.5j], [-0.5j, 1]]})
    flow = MAFlow.from_config(cfg)
    res = run_flow(flow, cfg)
    assert res.status.converged and res.steps == 0
    assert np.max(np.abs(flow.normalize(res.state.phi))) == 0.0


def test_normalize_is_orthogonal_to_volume():
    flow = MAFlow.from_config(_cfg())
    rng = np.random.default_rng(0)
    u = flow.normalize(rng.standard_normal(flow.grid.shape))
    assert abs(flow.grid.mean(u * flow.det_hat)) < 1e-14


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=5, deadline=None)
def test_maximum_principle_on_random_backgrounds(seed):
    rng = np.random.default_rng(seed)
    psi = [{"amplitude": float(rng.uniform(-1, 1)) * 0.3 * EPS, "k": list(rng.integers(-1, 2, 4)),
            "kind": str(rng.choice(["sin", "cos"]))} for _ in range(3)]
    cfg = _cfg(psi=psi, t_max=0.05)
    res = run_flow(MAFlow.from_config(cfg), cfg)
    assert res.max_drift <= 1e-8


def test_breakdown_when_halvings_exhausted():
    flow = MAFlow.from_config(_cfg(max_halvings=0))
    state = flow.initial_state()
    with pytest.raises(FlowBreakdown) as err:
        flow.step(state, dt=50.0)
    assert isinstance(err.value.cause, PositivityError)


def test_breakdown_is_reported_not_raised():
    cfg = _cfg(safety=200.0, max_halvings=0)
    res = run_flow(MAFlow.from_config(cfg), cfg)
    assert res.breakdown is not None and res.status.breakdown and not res.status.converged


def test_rk4_order():
    flow = MAFlow.from_config(_cfg())
    state = flow.initial_state()
    dt = flow.cfl_dt(state)
    local = measure_order(flow, state, [dt, dt / 2, dt / 4])
    assert local["local_order"] > 4.5
    glob = richardson_order(flow, state, 4 * dt, steps=(2, 4, 8, 16))
    assert glob["order"] >= 3.8


def test_three_point_derivative_exact_for_quadratics():
    t0, t1, t2 = 0.0, 0.3, 0.45
    q = lambda t: 2 - t + 5 * t**2
    assert math.isclose(three_point_derivative(q(t0), q(t1), q(t2), t0, t1, t2), -1 + 10 * t1, rel_tol=1e-12)


def test_evolution_residuals_are_second_order():
    flow = MAFlow.from_config(_cfg())
    s1 = flow.initial_state()
    dt = flow.cfl_dt(s1)
    res = []
    for h in (dt, dt / 2):
        s0, s2 = flow.step(s1, -h), flow.step(s1, h)
        res.append(evolution_residuals(flow, s0, s1, s2))
    for a, b in zip(*res):
        assert 3.5 < a / b < 4.5


def test_detector_needs_both_criteria():
    phi = np.zeros(4)
    assert not convergence_detector(np.array([1, 1.1]), phi, phi, 1.0).converged
    assert not convergence_detector(np.ones(4), phi + 1, phi, 1.0).converged
    assert convergence_detector(np.ones(4), phi, phi, 1.0).converged
    assert not convergence_detector(np.ones(4), phi, phi, 1.0, breakdown=True).converged


def test_oracle_constant_background():
    cfg = FlowConfig.from_dict({"n": 2, "m": 8})
    grid = cfg.grid()
    orc = cy_oracle(grid, cfg.chi_hat(grid))
    assert orc.iterations == 0 and len(orc.history) == 1 and np.all(orc.phi == 0)


def test_oracle_converges_quadratically():
    cfg = _cfg(m=16)
    flow = MAFlow.from_config(cfg)
    orc = cy_oracle(flow.grid, flow.chi_hat, flow.f)
    h = orc.history
    assert orc.residual <= 1e-10
    assert math.log(h[-1]) / math.log(h[-2]) > 1.8


def test_oracle_failure_carries_history():
    flow = MAFlow.from_config(_cfg())
    with pytest.raises(OracleFailure) as err:
        cy_oracle(flow.grid, flow.chi_hat, flow.f, max_iter=1)
    assert len(err.value.history) == 2


def test_flow_limit_matches_oracle():
    cfg = _cfg(tol_speed=1e-10, tol_phi=1e-10)
    flow = MAFlow.from_config(cfg)
    res = run_flow(flow, cfg)
    assert res.status.converged
    orc = cy_oracle(flow.grid, flow.chi_hat, flow.f)
    assert np.max(np.abs(flow.normalize(res.state.phi) - orc.phi)) < 1e-8
    # slowest mode decays like exp(-2 pi^2 t) at the flat background with unit speed
    assert abs(res.empirical_rate() - 2 * math.pi**2) / (2 * math.pi**2) < 0.05
