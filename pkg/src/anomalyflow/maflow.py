"""Parabolic complex Monge-Ampere flow on the torus.

The flow is ``d phi/dt = e^{-f} det(chihat + i ddbar phi) / det chihat`` for a
background Kahler form ``chihat``. Time stepping is explicit RK4 with a
parabolic step restriction; a separate Newton-Krylov solver provides the
Ricci-flat limit for comparison.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from . import linalg
from .forms import UnsupportedDimensionError
from .torus import TorusGrid


class PositivityError(ValueError):
    """``chihat + i ddbar phi`` failed to be positive definite somewhere."""

    def __init__(self, index, margin):
        self.index = tuple(int(i) for i in index)
        self.margin = float(margin)
        super().__init__(f"chi not positive at grid point {self.index} (min eigenvalue {self.margin:.3e})")


class FlowBreakdown(RuntimeError):
    """Positivity could not be restored by shrinking the step."""

    def __init__(self, t, dt, cause):
        self.t, self.dt, self.cause = t, dt, cause
        super().__init__(f"flow breakdown at t={t:.6g} (last dt={dt:.3e}): {cause}")


class OracleFailure(RuntimeError):
    def __init__(self, message, history):
        self.history = list(history)
        super().__init__(f"{message}; residual history {['%.2e' % h for h in self.history]}")


# configuration -------------------------------------------------------------

def mode_field(grid: TorusGrid, modes):
    """Real trigonometric field ``sum amp * sin/cos(2 pi k.x)`` from a list of mode dicts."""
    x = grid.coords()
    out = np.zeros(grid.shape)
    for mode in modes or ():
        k = list(mode["k"]) + [0] * (2 * grid.n - len(mode["k"]))
        arg = 2 * np.pi * sum(ki * xi / L for ki, xi, L in zip(k, x, grid.periods))
        trig = np.cos if mode.get("kind", "sin") == "cos" else np.sin
        out = out + float(mode["amplitude"]) * trig(arg)
    return out


@dataclass
class FlowConfig:
    """Everything needed to set up and run one flow.

    ``chi0`` is the constant part of the background metric (identity when
    omitted) and ``psi`` a list of modes whose ``i ddbar`` is added to it.
    ``f`` is ``"derived"``, a number, or a list of modes.
    """

    n: int = 2
    m: int = 16
    shape: tuple | None = None
    periods: tuple | None = None
    chi0: list | None = None
    psi: list = field(default_factory=list)
    f: object = 0.0
    phi0: list = field(default_factory=list)
    safety: float = 0.4
    t_max: float = 10.0
    max_steps: int = 200000
    tol_speed: float = 1e-8
    tol_phi: float = 1e-9
    check_interval: float = 0.05
    output_every: int = 10
    max_halvings: int = 20

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown flow settings: {sorted(unknown)}")
        d = dict(d)
        for key in ("shape", "periods"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self):
        d = dataclasses.asdict(self)
        for key in ("shape", "periods"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    def grid(self) -> TorusGrid:
        return TorusGrid(self.n, self.m, periods=self.periods, shape=self.shape)

    def chi_hat(self, grid: TorusGrid):
        a = np.eye(self.n, dtype=complex) if self.chi0 is None else np.asarray(self.chi0, dtype=complex)
        if a.shape != (self.n, self.n) or not np.allclose(a, a.conj().T):
            raise ValueError("chi0 must be a Hermitian n x n matrix")
        chi = np.broadcast_to(a, grid.shape + a.shape).copy()
        if self.psi:
            chi += grid.i_ddbar_scalar(mode_field(grid, self.psi))
        if not np.all(linalg.is_positive(chi)):
            lo, _ = linalg.eig_extremes(chi)
            raise PositivityError(np.unravel_index(np.argmin(lo), lo.shape), lo.min())
        return chi

    def f_field(self, grid: TorusGrid, chi_hat):
        if isinstance(self.f, str):
            if self.f != "derived":
                raise ValueError(f"unknown f specification {self.f!r}")
            return derived_f(chi_hat)
        if isinstance(self.f, (int, float)):
            return np.full(grid.shape, float(self.f))
        f = mode_field(grid, self.f)
        if not np.all(np.isfinite(f)):
            raise ValueError("f must be finite")
        return f


def derived_f(chi_hat):
    """``f`` with ``e^{-f} = ||Omega||_{chihat}^{-2} / (n-1) = det chihat / (n-1)``."""
    n = chi_hat.shape[-1]
    if n < 2:
        raise UnsupportedDimensionError("the derived f needs n >= 2")
    return -np.log(linalg.det(chi_hat) / (n - 1))


# the flow --------------------------------------------------------------------

def _check_positive(chi):
    ok = linalg.is_positive(chi)
    if not np.all(ok):
        lo, _ = linalg.eig_extremes(chi)
        raise PositivityError(np.unravel_index(np.argmin(lo), lo.shape), lo.min())


def ma_rhs(grid: TorusGrid, phi, chi_hat, f):
    """Flow speed ``e^{-f} det(chihat + i ddbar phi) / det chihat``."""
    chi = chi_hat + grid.i_ddbar_scalar(phi)
    _check_positive(chi)
    return np.exp(-f) * linalg.det(chi) / linalg.det(chi_hat)


@dataclass
class FlowState:
    phi: np.ndarray
    t: float
    dt: float
    chi: np.ndarray
    F: np.ndarray
    speed: np.ndarray
    lam_min: np.ndarray
    lam_max: np.ndarray

    @property
    def min_eig(self):
        return float(self.lam_min.min())


class MAFlow:
    """Monge-Ampere flow for fixed background data on a grid."""

    def __init__(self, grid: TorusGrid, chi_hat, f, safety=0.4, max_halvings=20):
        self.grid = grid
        self.n = grid.n
        self.chi_hat = np.asarray(chi_hat, dtype=complex)
        self.f = np.broadcast_to(np.asarray(f, dtype=float), grid.shape)
        self.emf = np.exp(-self.f)
        self.det_hat = linalg.det(self.chi_hat)
        n = self.n
        full = np.broadcast_to(self.chi_hat, grid.shape + (n, n))
        self._hat_re = [[np.ascontiguousarray(full[..., k, j].real) for j in range(n)] for k in range(n)]
        self._hat_im = [[None if k == j else np.ascontiguousarray(full[..., k, j].imag) for j in range(n)]
                        for k in range(n)]
        self.safety = safety
        self.max_halvings = max_halvings

    @classmethod
    def from_config(cls, cfg: FlowConfig):
        grid = cfg.grid()
        chi_hat = cfg.chi_hat(grid)
        return cls(grid, chi_hat, cfg.f_field(grid, chi_hat), cfg.safety, cfg.max_halvings)

    def chi(self, phi):
        return self.chi_hat + self.grid.i_ddbar_scalar(phi)

    def _parts(self, phi):
        re, im = self.grid.hessian_parts(phi)
        n = self.n
        for k in range(n):
            for j in range(n):
                re[k][j] = re[k][j] + self._hat_re[k][j]
                if k != j:
                    im[k][j] = im[k][j] + self._hat_im[k][j]
        if not np.all(linalg.is_positive_parts(re, im)):
            lo, _ = linalg.eig_extremes(linalg.assemble(re, im))
            raise PositivityError(np.unravel_index(np.argmin(lo), lo.shape), lo.min())
        return re, im

    def rhs(self, phi):
        """Flow speed; raises :class:`PositivityError` where ``chi`` is not positive."""
        re, im = self._parts(phi)
        return self.emf * linalg.det_parts(re, im) / self.det_hat

    def state(self, phi, t=0.0, dt=math.nan) -> FlowState:
        re, im = self._parts(phi)
        chi = linalg.assemble(re, im)
        F = linalg.det_parts(re, im) / self.det_hat
        lo, hi = linalg.eig_extremes(chi)
        return FlowState(phi, t, dt, chi, F, self.emf * F, lo, hi)

    def initial_state(self, phi0=None):
        phi = np.zeros(self.grid.shape) if phi0 is None else np.asarray(phi0, dtype=float)
        return self.state(phi)

    def cfl_dt(self, state: FlowState):
        """``safety * h_min^2 / (d * max speed * lambda_max(chi^{-1}))`` with d the number of active complex directions."""
        active = sum(s > 1 for s in self.grid.shape) / 2
        if active == 0:
            return self.safety
        rate = np.max(state.speed / state.lam_min) * active
        return self.safety * self.grid.h_min**2 / rate

    def _rk4(self, state, dt):
        phi = state.phi
        k1 = state.speed
        k2 = self.rhs(phi + 0.5 * dt * k1)
        k3 = self.rhs(phi + 0.5 * dt * k2)
        k4 = self.rhs(phi + dt * k3)
        return self.state(phi + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4), state.t + dt, dt)

    def step(self, state: FlowState, dt=None, retry=True) -> FlowState:
        """One RK4 step; halves ``dt`` on positivity loss up to ``max_halvings`` times."""
        if dt is None:
            dt = self.cfl_dt(state)
        tries = self.max_halvings + 1 if retry else 1
        for _ in range(tries):
            try:
                return self._rk4(state, dt)
            except PositivityError as err:
                cause = err
                dt *= 0.5
        raise FlowBreakdown(state.t, 2 * dt, cause)

    def normalize(self, phi):
        """``phi - (1/V) int phi chihat^n`` with V the volume of ``chihat``."""
        return normalize(phi, self.det_hat, self.grid)

    def inverse_chi(self, state: FlowState):
        return np.linalg.inv(state.chi)

    def linearized_apply(self, state: FlowState, u, chi_inv=None):
        """``L u = e^{-f} F chi^{j kbar} d_j d_kbar u``."""
        if chi_inv is None:
            chi_inv = self.inverse_chi(state)
        lap = np.einsum("...jk,...kj->...", chi_inv, self.grid.i_ddbar_scalar(u)).real
        return state.speed * lap

    def trace_h_inverse(self, state: FlowState, chi_inv=None):
        """``Tr h^{-1} = chi^{p qbar} chihat_{qbar p}``."""
        if chi_inv is None:
            chi_inv = self.inverse_chi(state)
        return np.einsum("...pq,...qp->...", chi_inv, self.chi_hat).real

    def h_eigen_extremes(self, state: FlowState):
        """Extreme eigenvalues of ``h = chihat^{-1} chi`` over the grid."""
        c = np.linalg.cholesky(self.chi_hat)
        ci = np.linalg.inv(c)
        a = ci @ state.chi @ np.conj(np.swapaxes(ci, -1, -2))
        lo, hi = linalg.eig_extremes(0.5 * (a + np.conj(np.swapaxes(a, -1, -2))))
        return float(lo.min()), float(hi.max())

    def trace_h(self, state: FlowState):
        return np.einsum("...pq,...qp->...", np.linalg.inv(self.chi_hat), state.chi).real


def normalize(phi, det_hat, grid: TorusGrid):
    w = np.broadcast_to(det_hat, grid.shape)
    return phi - grid.mean(phi * w) / grid.mean(w)


# diagnostics -------------------------------------------------------------------

def three_point_derivative(prev, cur, nxt, t0, t1, t2):
    """Second order derivative at ``t1`` from three possibly unequal samples."""
    h0, h1 = t1 - t0, t2 - t1
    return (-h1 / (h0 * (h0 + h1))) * prev + ((h1 - h0) / (h0 * h1)) * cur + (h0 / (h1 * (h0 + h1))) * nxt


def evolution_residuals(flow: MAFlow, prev: FlowState, cur: FlowState, nxt: FlowState):
    """Sup-norm residuals of ``d_t(e^{-f}F) = L(e^{-f}F)`` and ``(d_t - L)phi = -(n-1)e^{-f}F + e^{-f}F Tr h^{-1}``."""
    ts = (prev.t, cur.t, nxt.t)
    chi_inv = flow.inverse_chi(cur)
    ds = three_point_derivative(prev.speed, cur.speed, nxt.speed, *ts)
    res_speed = np.max(np.abs(ds - flow.linearized_apply(cur, cur.speed, chi_inv)))
    dphi = three_point_derivative(prev.phi, cur.phi, nxt.phi, *ts)
    lhs = dphi - flow.linearized_apply(cur, cur.phi, chi_inv)
    rhs = -(flow.n - 1) * cur.speed + cur.speed * flow.trace_h_inverse(cur, chi_inv)
    return float(res_speed), float(np.max(np.abs(lhs - rhs)))


def step_doubling(flow: MAFlow, state: FlowState, dt):
    """Sup difference between one step of ``dt`` and two of ``dt/2``."""
    one = flow.step(state, dt, retry=False)
    half = flow.step(flow.step(state, dt / 2, retry=False), dt / 2, retry=False)
    return float(np.max(np.abs(one.phi - half.phi)))


def measure_order(flow: MAFlow, state: FlowState, dts):
    """Local and global order from step doubling over a decreasing sequence of ``dts``.

    One step carries an error ``C dt^{p+1}``; the reported global order is the
    median fitted local exponent minus one.
    """
    diffs = [step_doubling(flow, state, dt) for dt in dts]
    slopes = [math.log(diffs[i] / diffs[i + 1]) / math.log(dts[i] / dts[i + 1]) for i in range(len(dts) - 1)]
    local = float(np.median(slopes))
    return {"dts": list(dts), "diffs": diffs, "local_slopes": slopes, "local_order": local, "order": local - 1}


def integrate_fixed(flow: MAFlow, state: FlowState, horizon, steps):
    """``steps`` equal RK4 steps from ``state`` to ``state.t + horizon``."""
    dt = horizon / steps
    for _ in range(steps):
        state = flow.step(state, dt, retry=False)
    return state


def richardson_order(flow: MAFlow, state: FlowState, horizon, steps=(4, 8, 16, 32)):
    """Global order from solutions at a fixed time with successively halved steps."""
    phis = [integrate_fixed(flow, state, horizon, k).phi for k in steps]
    diffs = [float(np.max(np.abs(a - b))) for a, b in zip(phis, phis[1:])]
    ratios = [steps[i + 1] / steps[i] for i in range(len(steps) - 1)]
    orders = [math.log(diffs[i] / diffs[i + 1]) / math.log(ratios[i + 1]) for i in range(len(diffs) - 1)]
    return {"steps": list(steps), "diffs": diffs, "orders": orders, "order": orders[-1]}


@dataclass
class ConvergenceStatus:
    converged: bool
    breakdown: bool
    speed_ratio: float
    phi_rate: float


def speed_ratio(speed):
    return float(np.std(speed) / np.mean(speed))


def convergence_detector(speed, phi_tilde, prev_phi_tilde, interval, tol_speed=1e-8, tol_phi=1e-9,
                         breakdown=False) -> ConvergenceStatus:
    """Both ``std(speed)/mean <= tol_speed`` and ``sup|dphi~|/interval <= tol_phi``."""
    ratio = speed_ratio(speed)
    if prev_phi_tilde is None or interval <= 0:
        rate = math.inf
    else:
        rate = float(np.max(np.abs(phi_tilde - prev_phi_tilde))) / interval
    if breakdown:
        return ConvergenceStatus(False, True, ratio, rate)
    if ratio == 0.0 and rate == math.inf:
        # a spatially constant speed leaves phi~ fixed for all time
        rate = 0.0
    return ConvergenceStatus(ratio <= tol_speed and rate <= tol_phi, False, ratio, rate)


@dataclass
class RunResult:
    state: FlowState
    status: ConvergenceStatus
    steps: int
    max_drift: float
    breakdown: FlowBreakdown | None = None
    history: list = field(default_factory=list)

    def empirical_rate(self):
        """Exponential decay rate of ``std(speed)/mean`` fitted over the second half of the run."""
        pts = [(t, r) for t, r in self.history if r > 0]
        if len(pts) < 4:
            return math.nan
        pts = pts[len(pts) // 2:]
        t, r = np.array(pts).T
        return float(-np.polyfit(t, np.log(r), 1)[0])


def run_flow(flow: MAFlow, cfg: FlowConfig, state: FlowState | None = None, observer=None) -> RunResult:
    """Integrate until converged, ``t_max`` or breakdown.

    ``observer(state)`` sees the initial and every accepted state.
    """
    if state is None:
        state = flow.initial_state(mode_field(flow.grid, cfg.phi0) if cfg.phi0 else None)
    inf0, sup0 = float(state.speed.min()), float(state.speed.max())
    drift = 0.0
    if observer:
        observer(state)
    last_check_t, last_phit = state.t, flow.normalize(state.phi)
    status = convergence_detector(state.speed, last_phit, None, 0.0, cfg.tol_speed, cfg.tol_phi)
    history = [(state.t, status.speed_ratio)]
    steps = 0
    while not status.converged and state.t < cfg.t_max and steps < cfg.max_steps:
        try:
            state = flow.step(state)
        except FlowBreakdown as err:
            status = convergence_detector(state.speed, flow.normalize(state.phi), last_phit,
                                          state.t - last_check_t, breakdown=True)
            return RunResult(state, status, steps, drift, err, history)
        steps += 1
        drift = max(drift, inf0 - float(state.speed.min()), float(state.speed.max()) - sup0)
        if observer:
            observer(state)
        history.append((state.t, speed_ratio(state.speed)))
        if state.t - last_check_t >= cfg.check_interval:
            phit = flow.normalize(state.phi)
            status = convergence_detector(state.speed, phit, last_phit, state.t - last_check_t,
                                          cfg.tol_speed, cfg.tol_phi)
            last_check_t, last_phit = state.t, phit
    return RunResult(state, status, steps, drift, None, history)


# Calabi-Yau oracle ----------------------------------------------------------------

@dataclass
class OracleResult:
    phi: np.ndarray
    c: float
    residual: float
    history: list
    iterations: int


def cy_oracle(grid: TorusGrid, chi_hat, f=None, tol=1e-10, max_iter=40):
    """Solve ``det(chihat + i ddbar phi) = c e^{f} det chihat`` by Newton-Krylov.

    The unknowns are a mean-zero ``phi`` and ``b = log c``; each Newton system
    ``Delta_chi u - beta = -G`` is solved with GMRES preconditioned by the
    inverse flat Laplacian of the averaged metric. Returns ``phi`` normalized
    against ``chihat^n``.
    """
    n = grid.n
    N = grid.size
    chi_hat = np.broadcast_to(np.asarray(chi_hat, dtype=complex), grid.shape + (n, n))
    f = np.zeros(grid.shape) if f is None else np.broadcast_to(f, grid.shape)
    logdet_hat = np.linalg.slogdet(chi_hat)[1]

    def residual(phi, b):
        chi = chi_hat + grid.i_ddbar_scalar(phi)
        sign, logdet = np.linalg.slogdet(chi)
        if np.any(sign.real <= 0) or np.any(np.linalg.eigvalsh(chi)[..., 0] <= 0):
            return None, None
        return logdet - logdet_hat - f - b, chi

    phi, b = np.zeros(grid.shape), 0.0
    G, chi = residual(phi, b)
    b = float(np.mean(G))
    G = G - np.mean(G)
    history = [float(np.max(np.abs(G)))]
    for it in range(max_iter):
        if history[-1] <= tol:
            break
        chi_inv = np.linalg.inv(chi)
        gbar = chi_inv.mean(axis=grid.axes)
        sym = sum(gbar[j, k] * grid.symbol(j) * grid.symbol(k, bar=True) for j in range(n) for k in range(n)).real
        sym = np.broadcast_to(sym, grid.shape)
        safe = np.where(sym == 0, 1.0, sym)

        def apply(x):
            u = x[:N].reshape(grid.shape)
            lap = np.einsum("...jk,...kj->...", chi_inv, grid.i_ddbar_scalar(u)).real
            return np.concatenate([(lap - x[N]).ravel(), [u.mean()]])

        def precond(r):
            rg = r[:N].reshape(grid.shape)
            rm = rg.mean()
            u = grid.ifft(np.where(sym == 0, 0, grid.fft(rg - rm) / safe)).real + r[N]
            return np.concatenate([u.ravel(), [-rm]])

        A = LinearOperator((N + 1, N + 1), matvec=apply, dtype=float)
        M = LinearOperator((N + 1, N + 1), matvec=precond, dtype=float)
        rhs = np.concatenate([-G.ravel(), [0.0]])
        rtol = max(1e-13, min(1e-2, 0.1 * history[-1]))
        x, info = gmres(A, rhs, M=M, rtol=rtol, atol=0.0, restart=60, maxiter=20)
        du, db = x[:N].reshape(grid.shape), x[N]
        step = 1.0
        while step > 1e-4:
            Gn, chin = residual(phi + step * du, b + step * db)
            if Gn is not None and np.max(np.abs(Gn)) < history[-1]:
                break
            step *= 0.5
        else:
            raise OracleFailure("Newton line search failed", history)
        phi, b, G, chi = phi + step * du, b + step * db, Gn, chin
        history.append(float(np.max(np.abs(G))))
    if history[-1] > tol:
        raise OracleFailure("Newton iteration stagnated", history)
    det_hat = np.exp(logdet_hat)
    return OracleResult(normalize(phi, det_hat, grid), float(np.exp(b)), history[-1], history, len(history) - 1)
