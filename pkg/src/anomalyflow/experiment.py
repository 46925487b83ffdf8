"""Experiment orchestration: configuration files, runs, time series and snapshots."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import linalg
from .anomaly import (
    ansatz_lift, ansatz_residual, balanced_class_pairings, conformal_kahler_deviation, dilaton_functional,
    metric_velocity, volume_density,
)
from .geometry import conf_balanced_residual, conformally_balanced_form, first_jet, ricci_tilde, torsion_norms_field
from .maflow import (
    FlowConfig, FlowState, MAFlow, OracleFailure, cy_oracle, evolution_residuals, run_flow, speed_ratio,
    three_point_derivative,
)
from .torus import write_snapshot

COLUMNS = [
    "t", "dt", "inf_speed", "sup_speed", "std_F_over_mean", "osc_phi", "min_eig_chi", "trh_max",
    "M_dilaton", "dM_dt_formula", "dM_dt_finite_diff", "stationary_residual",
    "torsion_L2", "tau_L2", "ansatz_residual",
]

CHECK_COLUMNS = [
    "t", "evol_F_residual", "evol_phi_residual", "metric_fd_error", "metric_fd_rel_error",
    "dM_dt_general_vs_ck", "conf_kahler_deviation", "balanced_pairing_drift", "conf_balanced_residual",
]


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    flow: FlowConfig = field(default_factory=FlowConfig)
    lift: bool = False
    oracle: bool = False
    checks: bool = False
    seed: int = 0
    out: str | None = "out"
    emit_snapshots: int = 0
    identities: dict = field(default_factory=lambda: {"dims": [3, 4, 5], "trials": 50})

    def validate(self):
        if self.lift:
            if self.flow.n < 3:
                raise ValueError("the lift to the anomaly flow needs n >= 3")
            if self.flow.f != "derived":
                raise ValueError("the lift requires f: derived")
        if self.emit_snapshots < 0:
            raise ValueError("emit_snapshots must be non-negative")
        dims = self.identities.get("dims", [])
        if not set(dims) <= {3, 4, 5, 6}:
            raise ValueError("identity dimensions must lie in {3, 4, 5, 6}")
        return self

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown experiment settings: {sorted(unknown)}")
        d["flow"] = FlowConfig.from_dict(d.get("flow") or {})
        return cls(**d).validate()

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["flow"] = self.flow.to_dict()
        return d


def load_spec(path) -> ExperimentSpec:
    with open(path) as fh:
        return ExperimentSpec.from_dict(yaml.safe_load(fh))


TEMPLATE = """\
# Experiment configuration.
name: reference
seed: 0                 # seeds every random metric and form
out: out                # output directory
lift: false             # also evolve omega = (det chi)^(1/(n-2)) chi (needs n >= 3 and f: derived)
oracle: true            # compare the flow limit with the Newton solution
checks: false           # centered time differences of the metric and evolution identities
emit_snapshots: 0       # snapshot every N output rows (0: final state only)
flow:
  n: 2                  # complex dimension
  m: 16                 # grid points per real direction (even, >= 4)
  shape: null           # per-axis sizes overriding m; 1 makes a direction constant
  periods: null         # lattice periods per real direction (default 1)
  chi0: null            # constant Hermitian part of chihat (default identity)
  psi:                  # chihat = chi0 + i ddbar psi, psi = sum amplitude * sin/cos(2 pi k.x)
    - {amplitude: 0.005066059182116889, k: [1, 1, 0, 0], kind: sin}
  f: derived            # "derived" (e^-f = det chihat/(n-1)), a number, or a list of modes
  phi0: []              # initial potential; nonzero data is not covered by the convergence guarantee
  safety: 0.4           # step = safety * h^2 / (directions * max speed / min eigenvalue of chi)
  t_max: 10.0
  max_steps: 200000
  tol_speed: 1.0e-8     # std(e^-f F)/mean
  tol_phi: 1.0e-9       # sup |change of normalized phi| per unit time
  check_interval: 0.05  # time between convergence checks
  output_every: 10      # accepted steps per output row
  max_halvings: 20      # step halvings tried after a loss of positivity
identities:
  dims: [3, 4, 5]
  trials: 50
"""


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return "%.17g" % x


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


class Recorder:
    """Observer producing one row per ``output_every`` accepted steps.

    A row for state ``k`` is completed once state ``k+1`` exists so that time
    derivatives are centered.
    """

    def __init__(self, flow: MAFlow, spec: ExperimentSpec, snapshot_dir=None):
        self.flow = flow
        self.spec = spec
        self.grid = flow.grid
        self.lift = spec.lift
        self.every = max(1, spec.flow.output_every)
        self.rows, self.checks = [], []
        self.count = 0
        self.window = []
        self.M = []  # (t, M) at every accepted step
        self.max_M_increase = 0.0
        self.pairings0 = None
        self.h_bound = 1.0
        self.snapshot_dir = snapshot_dir
        self.snapshots = []

    def lifted(self, state):
        return ansatz_lift(state.chi)

    def __call__(self, state: FlowState):
        if self.lift:
            M = dilaton_functional(self.grid, self.lifted(state))
            if self.M:
                self.max_M_increase = max(self.max_M_increase, (M - self.M[-1][1]) / abs(self.M[-1][1]))
            self.M.append((state.t, M))
        self.window.append((self.count, state))
        self.count += 1
        if len(self.window) == 3:
            if self.window[1][0] % self.every == 0:
                self.record(*[s for _, s in self.window])
            self.window.pop(0)
        elif len(self.window) == 2 and self.window[0][0] == 0:
            # the initial state has no predecessor; use a backward step of the same size
            s0, s1 = self.window[0][1], self.window[1][1]
            back = self.flow.step(s0, -(s1.t - s0.t), retry=False)
            self.record(back, s0, s1)

    def finish(self, state: FlowState):
        """Row for the final state, centered with one extra step beyond it."""
        if self.rows and self.rows[-1]["t"] == state.t:
            return
        if len(self.window) >= 2:
            prev = self.window[-2][1]
        else:
            prev = self.flow.step(state, -self.flow.cfl_dt(state), retry=False)
        nxt = self.flow.step(state, retry=False)
        if self.lift:
            self.M.append((nxt.t, dilaton_functional(self.grid, self.lifted(nxt))))
        self.record(prev, state, nxt, final=True)

    def _M_at(self, t):
        return next((M for tt, M in reversed(self.M) if tt == t), None)

    def record(self, prev, cur, nxt, final=False):
        flow, grid = self.flow, self.grid
        row = {
            "t": cur.t, "dt": cur.dt if not math.isnan(cur.dt) else nxt.t - cur.t,
            "inf_speed": float(cur.speed.min()), "sup_speed": float(cur.speed.max()),
            "std_F_over_mean": speed_ratio(cur.speed),
            "osc_phi": float(cur.phi.max() - cur.phi.min()), "min_eig_chi": cur.min_eig,
            "trh_max": float(flow.trace_h(cur).max()),
        }
        lo, hi = flow.h_eigen_extremes(cur)
        self.h_bound = max(self.h_bound, hi, 1 / lo)
        check = {"t": cur.t}
        check["evol_F_residual"], check["evol_phi_residual"] = evolution_residuals(flow, prev, cur, nxt)
        if self.lift:
            g = self.lifted(cur)
            dg = first_jet(grid, g)
            T = np.einsum("...jkl->...kjl", dg) - np.einsum("...lkj->...kjl", dg)
            rhs = metric_velocity(g, ricci_tilde(grid, g, dg), T)
            _, t2, tau2 = torsion_norms_field(T, np.linalg.inv(g))
            vol = volume_density(g)
            it2, itau2 = float(grid.integrate(t2 * vol)), float(grid.integrate(tau2 * vol))
            n = grid.n
            Mp, M, Mn = (self._M_at(s.t) for s in (prev, cur, nxt))
            if Mp is None:
                Mp = dilaton_functional(grid, self.lifted(prev))
            if Mn is None:
                Mn = dilaton_functional(grid, self.lifted(nxt))
            lg = -np.log(linalg.det(g))
            row.update({
                "M_dilaton": M,
                "dM_dt_formula": -it2 / (2 * (n - 1)),
                "dM_dt_finite_diff": float(three_point_derivative(Mp, M, Mn, prev.t, cur.t, nxt.t)),
                "stationary_residual": max(float(np.max(np.abs(rhs))), float(np.max(t2)),
                                           float(np.max(np.abs(lg - lg.mean())))),
                "torsion_L2": math.sqrt(max(it2, 0.0)), "tau_L2": math.sqrt(max(itau2, 0.0)),
                "ansatz_residual": ansatz_residual(g, cur.chi),
            })
            if self.spec.checks:
                gdot = three_point_derivative(self.lifted(prev), g, self.lifted(nxt), prev.t, cur.t, nxt.t)
                err = float(np.max(np.abs(gdot - rhs)))
                general = (it2 - 2 * itau2) / (2 * (n - 1) * (n - 2))
                pair = balanced_class_pairings(grid, conformally_balanced_form(g))
                if self.pairings0 is None:
                    self.pairings0 = pair
                check.update({
                    "metric_fd_error": err,
                    "metric_fd_rel_error": err / max(float(np.max(np.abs(rhs))), 1e-300),
                    "dM_dt_general_vs_ck": abs(general - row["dM_dt_formula"]) / max(abs(general), 1e-300),
                    "conf_kahler_deviation": conformal_kahler_deviation(g, cur.chi),
                    "balanced_pairing_drift": float(np.max(np.abs(pair - self.pairings0))
                                                    / np.max(np.abs(self.pairings0))),
                    "conf_balanced_residual": conf_balanced_residual(grid, g),
                })
        self.rows.append(row)
        self.checks.append(check)
        if self.snapshot_dir is not None and self.spec.emit_snapshots and not final:
            if (len(self.rows) - 1) % self.spec.emit_snapshots == 0:
                path = Path(self.snapshot_dir) / f"snapshot_{len(self.rows) - 1:05d}.bflw"
                write_snapshot(path, grid, self.fields(cur))
                self.snapshots.append(str(path))

    def fields(self, state):
        out = {"phi": state.phi, "chi": state.chi}
        if self.lift:
            out["omega"] = self.lifted(state)
        return out

    def max_d2M(self):
        """Largest second divided difference of the per-step dilaton series."""
        if len(self.M) < 3:
            return math.nan
        t, M = np.array(self.M).T
        slope = np.diff(M) / np.diff(t)
        return float(np.max(np.abs(2 * np.diff(slope) / (t[2:] - t[:-2]))))


def run_experiment(spec: ExperimentSpec, write=True):
    """Run a flow experiment; returns ``(summary, recorder, result)``."""
    spec.validate()
    started = time.time()
    flow = MAFlow.from_config(spec.flow)
    out = Path(spec.out) if (write and spec.out) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rec = Recorder(flow, spec, out)
    result = run_flow(flow, spec.flow, observer=rec)
    if result.breakdown is None:
        rec.finish(result.state)
    final = result.state
    status = "converged" if result.status.converged else ("breakdown" if result.status.breakdown else "not_converged")
    summary = {
        "name": spec.name,
        "status": status,
        "t_final": final.t,
        "steps": result.steps,
        "speed_ratio": result.status.speed_ratio,
        "phi_rate": result.status.phi_rate,
        "empirical_rate": result.empirical_rate(),
        "max_principle_drift": result.max_drift,
        "max_osc_phi": max((r["osc_phi"] for r in rec.rows), default=math.nan),
        "ellipticity_bound": rec.h_bound,
        "outside_convergence_hypotheses": bool(spec.flow.phi0),
        "rows": len(rec.rows),
    }
    if result.breakdown is not None:
        summary["breakdown"] = {"t": result.breakdown.t, "dt": result.breakdown.dt, "reason": str(result.breakdown.cause)}
    if spec.lift and rec.rows:
        last = rec.rows[-1]
        summary.update({
            "final_stationary_residual": last["stationary_residual"],
            "final_M": last["M_dilaton"],
            "final_dM_dt": last["dM_dt_formula"],
            "max_ansatz_residual": max(r["ansatz_residual"] for r in rec.rows),
            "max_relative_M_increase": rec.max_M_increase,
            "max_abs_d2M_dt2": rec.max_d2M(),
            "final_norm_std_over_mean": speed_ratio(1.0 / np.real(np.linalg.det(final.chi))),
        })
    if spec.oracle:
        try:
            orc = cy_oracle(flow.grid, flow.chi_hat, flow.f)
            summary["oracle"] = {
                "residual": orc.residual, "iterations": orc.iterations, "c": orc.c,
                "sup_diff": float(np.max(np.abs(flow.normalize(final.phi) - orc.phi))),
            }
        except OracleFailure as err:
            summary["oracle"] = {"failure": str(err), "history": err.history}
    summary["seconds"] = time.time() - started
    summary["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    if out is not None:
        write_csv(out / "timeseries.csv", COLUMNS, rec.rows)
        if spec.checks:
            write_csv(out / "checks.csv", CHECK_COLUMNS, rec.checks)
        write_snapshot(out / "final.bflw", flow.grid, rec.fields(final))
        summary["snapshots"] = rec.snapshots + [str(out / "final.bflw")]
        (out / "summary.json").write_text(json.dumps({"config": spec.to_dict(), **summary}, indent=2) + "\n")
    return summary, rec, result


def run_oracle(spec: ExperimentSpec, write=True):
    """Newton solve for the background of ``spec``; writes the solution and residual history."""
    flow = MAFlow.from_config(spec.flow)
    out = Path(spec.out) if (write and spec.out) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    try:
        orc = cy_oracle(flow.grid, flow.chi_hat, flow.f)
        history, failure = orc.history, None
    except OracleFailure as err:
        orc, history, failure = None, err.history, str(err)
    h = history
    ratios = [math.log(h[i + 1]) / math.log(h[i]) for i in range(len(h) - 1) if 0 < h[i] < 1 and h[i + 1] > 0]
    report = {"name": spec.name, "history": history, "failure": failure, "log_ratios": ratios}
    if orc is not None:
        report.update({"residual": orc.residual, "iterations": orc.iterations, "c": orc.c})
    if out is not None:
        write_csv(out / "oracle_history.csv", ["iteration", "residual"],
                  [{"iteration": i, "residual": r} for i, r in enumerate(history)])
        if orc is not None:
            chi = flow.chi_hat + flow.grid.i_ddbar_scalar(orc.phi)
            write_snapshot(out / "oracle.bflw", flow.grid, {"phi": orc.phi, "chi": chi})
        (out / "oracle.json").write_text(json.dumps(report, indent=2) + "\n")
    return report, orc
