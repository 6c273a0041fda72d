"""Closed-loop semidiscrete beam with delayed boundary feedback, and its time stepping.

The state is X = (U, V, w_1, ..., w_M) with U, V the free Hermite DOFs of the
displacement and velocity. The lag-zero delay sample is not a separate unknown:
w_0 = v(1) = e1 . V holds identically, so the coupling is exact at every time
level. The dynamics are written in mass form  Mass X' = Stiff X  with

    U' = V
    M V' = -K U - (kv e e^T + ka f f^T) V - kd e w_M + F(t)
    (w_{j-1}' + w_j') / 2 = -(w_j - w_{j-1}) / (tau ds),   j = 1..M

where K includes the boundary springs kb e e^T + kr f f^T. The last block is
the cell-centred box scheme for tau w_t + w_s = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .delay_line import init_from_history
from .expressions import Field
from .model import GainSet, ModelConfig, classify_degeneracy, effective_gamma
from .spatial import DiscreteForms, Mesh, assemble_forms, l2_error, load_vector

SCHEMES = ("midpoint", "backward_euler")


class NumericalFailure(RuntimeError):
    def __init__(self, message: str, t: float | None = None):
        super().__init__(message if t is None else f"{message} (t = {t!r})")
        self.t = t


@dataclass(frozen=True)
class SystemState:
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray  # w_0..w_M, empty when the delay line is absent
    t: float = 0.0


@dataclass
class ClosedLoopSystem:
    config: ModelConfig
    forms: DiscreteForms
    M_d: int
    with_delay: bool
    gamma: float
    mass: sp.csc_matrix
    stiff: sp.csc_matrix
    K: sp.csr_matrix
    damping: sp.csr_matrix
    energy_matrix: sp.csr_matrix
    pair_sum: sp.csr_matrix  # X -> (w_{j-1} + w_j)_j
    upsilon: float
    _factors: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.forms.n

    @property
    def dim(self) -> int:
        return 2 * self.n + (self.M_d if self.with_delay else 0)

    @property
    def tau(self) -> float:
        return self.config.delay.tau

    @property
    def ds(self) -> float:
        return 1.0 / self.M_d if self.with_delay else math.nan

    @property
    def gains(self):
        return self.config.gains

    # -- packing ---------------------------------------------------------
    def pack(self, state: SystemState) -> np.ndarray:
        parts = [state.U, state.V]
        if self.with_delay:
            parts.append(state.W[1:])
        return np.concatenate(parts)

    def unpack(self, X: np.ndarray, t: float = 0.0) -> SystemState:
        n = self.n
        U, V = X[:n].copy(), X[n:2 * n].copy()
        if self.with_delay:
            W = np.concatenate([[self.forms.e1 @ V], X[2 * n:]])
        else:
            W = np.zeros(0)
        return SystemState(U, V, W, float(t))

    def traces(self, X: np.ndarray) -> tuple[float, float, float, float, float]:
        """u(1), u_x(1), u_t(1), u_xt(1), w(1) of a packed state."""
        n = self.n
        e, f = self.forms.e1, self.forms.f1
        U, V = X[:n], X[n:2 * n]
        w1 = float(X[-1]) if self.with_delay else math.nan
        return float(e @ U), float(f @ U), float(e @ V), float(f @ V), w1

    # -- energy ------------------------------------------------------------
    def energy(self, X: np.ndarray) -> float:
        """1/2 X'HX, evaluated as a weighted sum of squares."""
        return sum(self.energy_parts(X))

    def energy_parts(self, X: np.ndarray, W: np.ndarray | None = None) -> tuple[float, float, float, float, float]:
        """Kinetic, bending, axial, spring and delay parts of the energy.

        The delay samples default to those of the packed state (with w_0 = v(1));
        an explicit W (w_0..w_M) is used as given.
        """
        n = self.n
        U, V = X[:n], X[n:2 * n]
        (B0, B1, B2), (w0, wq, ws) = self.forms.gauss_operators
        g = self.gains
        v, du, d2u = B0 @ V, B1 @ U, B2 @ U
        kin = 0.5 * float(w0 @ (v * v))
        bend = 0.5 * float(ws @ (d2u * d2u))
        ax = 0.5 * float(wq @ (du * du))
        spring = 0.5 * (g.kb * float(self.forms.e1 @ U) ** 2 + g.kr * float(self.forms.f1 @ U) ** 2)
        dl = 0.0
        if self.with_delay:
            p = 0.5 * (self.pair_sum @ X) if W is None else 0.5 * (W[1:] + W[:-1])
            dl = 0.5 * self.gamma * self.tau * self.ds * float(p @ p)
        return kin, bend, ax, spring, dl

    # -- factorisation cache ----------------------------------------------
    def _factor(self, dt: float, scheme: str):
        key = (float(dt), scheme)
        lu = self._factors.get(key)
        if lu is None:
            theta = 0.5 if scheme == "midpoint" else 1.0
            A = (self.mass - theta * dt * self.stiff).tocsc()
            try:
                lu = spla.splu(A)
            except RuntimeError as exc:
                raise NumericalFailure(f"singular step matrix: {exc}") from None
            self._factors[key] = lu
        return lu


def assemble_closed_loop(
    config: ModelConfig,
    mesh: Mesh,
    M_d: int,
    with_delay: bool = True,
    forms: DiscreteForms | None = None,
) -> ClosedLoopSystem:
    """Build the mass-form generator. ``with_delay=False`` drops the delay line
    entirely, which requires kd = 0."""
    g = config.gains
    if not with_delay and g.kd != 0:
        raise ValueError("the delay line can only be dropped when kd = 0")
    if with_delay and M_d < 1:
        raise ValueError("M_d must be >= 1")
    if forms is None:
        forms = assemble_forms(mesh, config.rigidity, config.axial, classify_degeneracy(config.rigidity))
    n = forms.n
    e, f = forms.e1, forms.f1
    K = forms.stiffness(g.kb, g.kr)
    D = sp.csr_matrix(g.kv * np.outer(e, e) + g.ka * np.outer(f, f))
    I = sp.identity(n, format="csr")
    Z = sp.csr_matrix((n, n))
    gamma = effective_gamma(config)
    q0, _, q2 = forms.axial_bounds
    ups = max(forms.degeneracy.K_sigma, q2 / q0)

    if not with_delay:
        mass = sp.bmat([[I, None], [None, forms.M]], format="csc")
        stiff = sp.bmat([[Z, I], [-K, -D]], format="csc")
        H = sp.bmat([[K, None], [None, forms.M]], format="csr")
        P = sp.csr_matrix((0, 2 * n))
        return ClosedLoopSystem(config, forms, 0, False, gamma, mass, stiff, K, D, H, P, ups)

    M = M_d
    tau, ds = config.delay.tau, 1.0 / M_d
    j = np.arange(M)
    # delay rows of the mass: 1/2 (w_{j-1} + w_j), w_0 = e . V
    Bw = sp.csr_matrix((np.full(M, 0.5), (j, j)), shape=(M, M)) + sp.csr_matrix(
        (np.full(M - 1, 0.5), (j[1:], j[:-1])), shape=(M, M)
    )
    Bv = sp.csr_matrix(np.outer(np.eye(M, 1).ravel(), 0.5 * e))
    # difference w_j - w_{j-1}
    Dw = sp.csr_matrix((np.ones(M), (j, j)), shape=(M, M)) - sp.csr_matrix(
        (np.ones(M - 1), (j[1:], j[:-1])), shape=(M, M)
    )
    Dv = sp.csr_matrix(np.outer(np.eye(M, 1).ravel(), -e))
    eM = sp.csr_matrix((np.array([-g.kd]), (np.array([0]), np.array([M - 1]))), shape=(1, M))
    kd_col = sp.csr_matrix(e[:, None]) @ eM

    mass = sp.bmat([[I, None, None], [None, forms.M, None], [None, Bv, Bw]], format="csc")
    c = 1.0 / (tau * ds)
    stiff = sp.bmat(
        [[Z, I, None], [-K, -D, kd_col], [None, -c * Dv, -c * Dw]], format="csc"
    )
    P = sp.hstack([sp.csr_matrix((M, n)), 2.0 * Bv, 2.0 * Bw], format="csr")
    H = sp.bmat([[K, None, None], [None, forms.M, None], [None, None, sp.csr_matrix((M, M))]], format="csr")
    H = (H + (0.25 * gamma * tau * ds) * (P.T @ P)).tocsr()
    return ClosedLoopSystem(config, forms, M_d, True, gamma, mass, stiff, K, D, H, P, ups)


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    T: float
    scheme: str = "midpoint"
    stride: int = 1
    full_state: bool = False

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if not self.T >= self.dt:
            raise ValueError("T must be at least dt")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown time scheme {self.scheme!r}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.T / self.dt + 1e-9))


def initial_state(system: ClosedLoopSystem, u0: Field | None = None, u1: Field | None = None,
                  g0: Field | None = None) -> SystemState:
    """Hermite interpolants of (u0, u1) and lag samples of g0; w_0 is then
    overwritten by u1(1)."""
    cfg = system.config
    u0 = cfg.u0 if u0 is None else u0
    u1 = cfg.u1 if u1 is None else u1
    g0 = cfg.delay.g0 if g0 is None else g0
    U = system.forms.interpolate(u0)
    V = system.forms.interpolate(u1)
    if system.with_delay:
        line = init_from_history(g0, system.M_d, system.tau, system.gamma, inflow=system.forms.e1 @ V)
        W = line.samples
    else:
        W = np.zeros(0)
    return SystemState(U, V, W, 0.0)


def _forcing_vector(system: ClosedLoopSystem, F: np.ndarray | None) -> np.ndarray | None:
    if F is None:
        return None
    out = np.zeros(system.dim)
    out[system.n:2 * system.n] = F
    return out


def step_packed(system: ClosedLoopSystem, X: np.ndarray, dt: float, scheme: str = "midpoint",
                forcing: np.ndarray | None = None, t: float | None = None) -> np.ndarray:
    lu = system._factor(dt, scheme)
    if scheme == "midpoint":
        rhs = system.mass @ X + (0.5 * dt) * (system.stiff @ X)
    else:
        rhs = system.mass @ X
    if forcing is not None:
        rhs = rhs + dt * _forcing_vector(system, forcing)
    Xn = lu.solve(rhs)
    if not np.all(np.isfinite(Xn)):
        raise NumericalFailure("non-finite state after step", t)
    return Xn


def step(system: ClosedLoopSystem, state: SystemState, dt: float, scheme: str = "midpoint",
         forcing: np.ndarray | None = None) -> SystemState:
    """One implicit step; ``forcing`` is an optional load on the velocity rows
    (midpoint value for the midpoint rule, end value for backward Euler)."""
    Xn = step_packed(system, system.pack(state), dt, scheme, forcing, state.t)
    return system.unpack(Xn, state.t + dt)


TRACE_NAMES = ("u1", "ux1", "ut1", "uxt1", "w1")


@dataclass
class TrajectoryRecord:
    """Diagnostics at every time step; ``stride`` selects the output rows."""

    t: np.ndarray
    E: np.ndarray
    G: np.ndarray
    L: np.ndarray
    traces: dict[str, np.ndarray]
    dt: float
    scheme: str
    stride: int = 1
    epsilon: float = math.nan
    states: list[SystemState] | None = None
    gains: GainSet | None = None

    @property
    def n_steps(self) -> int:
        return self.t.size - 1

    def output_indices(self) -> np.ndarray:
        return np.arange(0, self.t.size, self.stride)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.traces[name]


def lyapunov_cross(system: ClosedLoopSystem, X: np.ndarray, ups: float | None = None,
                   W: np.ndarray | None = None) -> float:
    """G = int v (2 x u_x + (ups/2) u) dx + gamma tau int exp(-2 tau s) w^2 ds,
    the delay part by cell midpoints to match the energy quadrature. W as in
    ``energy_parts``."""
    ups = system.upsilon if ups is None else ups
    n = system.n
    U, V = X[:n], X[n:2 * n]
    F = system.forms
    G = float(V @ (2.0 * (F.Cx @ U) + 0.5 * ups * (F.M @ U)))
    if system.with_delay:
        p = 0.5 * (system.pair_sum @ X) if W is None else 0.5 * (W[1:] + W[:-1])
        s_mid = (np.arange(system.M_d) + 0.5) * system.ds
        G += system.gamma * system.tau * system.ds * float(np.exp(-2.0 * system.tau * s_mid) @ (p * p))
    return G


def simulate(
    system: ClosedLoopSystem,
    integrator: IntegratorConfig,
    initial: SystemState | None = None,
    epsilon: float | None = None,
    forcing: Callable[[float], np.ndarray] | None = None,
) -> TrajectoryRecord:
    """Integrate from ``initial`` (default: the config's data) over [0, T].

    ``epsilon`` sets L = E + epsilon G; when omitted it is taken from the
    certificate constants if those exist, otherwise L is left as NaN.
    ``forcing(t)`` returns a velocity-row load.
    """
    if epsilon is None:
        from .model import AssumptionError, certificate_constants

        try:
            epsilon = certificate_constants(system.config).epsilon
        except AssumptionError:
            epsilon = math.nan
    state = initial_state(system) if initial is None else initial
    X = system.pack(state)
    dt, scheme = integrator.dt, integrator.scheme
    n = integrator.n_steps
    t = np.arange(n + 1) * dt
    E = np.empty(n + 1)
    G = np.empty(n + 1)
    tr = np.empty((n + 1, 5))
    states = [] if integrator.full_state else None

    def record(k, X):
        E[k] = system.energy(X)
        G[k] = lyapunov_cross(system, X)
        tr[k] = system.traces(X)
        if states is not None and k % integrator.stride == 0:
            states.append(system.unpack(X, t[k]))

    record(0, X)
    for k in range(n):
        F = None
        if forcing is not None:
            tf = t[k] + (0.5 * dt if scheme == "midpoint" else dt)
            F = forcing(tf)
        X = step_packed(system, X, dt, scheme, F, t[k])
        record(k + 1, X)
    L = E + epsilon * G
    traces = {name: tr[:, i].copy() for i, name in enumerate(TRACE_NAMES)}
    return TrajectoryRecord(t, E, G, L, traces, dt, scheme, integrator.stride, float(epsilon), states, system.gains)


# ---------------------------------------------------------------------------
# manufactured solutions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManufacturedSolution:
    """u*(x, t) = P(x) exp(-rate t) with P a polynomial (coefficients low to high)."""

    coeffs: tuple[float, ...]
    rate: float = 1.0

    def _p(self, k: int):
        c = np.polynomial.polynomial.polyder(self.coeffs, k) if k else np.asarray(self.coeffs, float)
        return lambda x: np.polynomial.polynomial.polyval(np.asarray(x, float), c) if c.size else 0.0 * x

    def time_factor(self, t, k: int = 0):
        return (-self.rate) ** k * np.exp(-self.rate * np.asarray(t, float))

    def value(self, x, t):
        return self._p(0)(x) * self.time_factor(t)

    def interior_forcing(self, config: ModelConfig):
        """f = u*_tt + (sigma u*_xx)_xx - (q u*_x)_x as a function of (x, t)."""
        s, q = config.rigidity, config.axial
        P1, P2, P3, P4 = (self._p(k) for k in (1, 2, 3, 4))
        P0 = self._p(0)

        def f(x, t):
            x = np.asarray(x, float)
            bend = s.d2(x) * P2(x) + 2.0 * s.d1(x) * P3(x) + s.eval(x) * P4(x)
            ax = q.d1(x) * P1(x) + q.eval(x) * P2(x)
            return (self.rate**2 * P0(x) + bend - ax) * self.time_factor(t)

        return f

    def boundary_residuals(self, config: ModelConfig, t: float) -> tuple[float, float]:
        """(g_b, g_r): the amounts by which u* misses the two feedback laws at x = 1."""
        g = config.gains
        s, q = config.rigidity, config.axial
        tau = config.delay.tau
        p = [float(self._p(k)(1.0)) for k in range(4)]
        s1, ds1 = float(s.eval(1.0)), float(s.d1(1.0))
        a0, a1 = float(self.time_factor(t)), float(self.time_factor(t, 1))
        lag = float(self.time_factor(t - tau, 1))
        shear = (ds1 * p[2] + s1 * p[3]) * a0
        gb = shear - float(q.eval(1.0)) * p[1] * a0 - g.kv * p[0] * a1 - g.kd * p[0] * lag - g.kb * p[0] * a0
        gr = -s1 * p[2] * a0 - g.kr * p[1] * a0 - g.ka * p[1] * a1
        return gb, gr

    def initial_state(self, system: ClosedLoopSystem) -> SystemState:
        from .expressions import Poly

        P = Poly(tuple(float(c) for c in self.coeffs))
        U = system.forms.interpolate(P)
        V = system.forms.interpolate(P.scaled(-self.rate))
        if system.with_delay:
            s = np.arange(system.M_d + 1) / system.M_d
            W = float(self._p(0)(1.0)) * self.time_factor(-s * system.tau, 1)
            W[0] = system.forms.e1 @ V
        else:
            W = np.zeros(0)
        return SystemState(U, V, W, 0.0)


@dataclass(frozen=True)
class MMSResult:
    N: int
    M_d: int
    dt: float
    l2_error: float
    energy_error: float


def mms_run(solution: ManufacturedSolution, system: ClosedLoopSystem, integrator: IntegratorConfig) -> MMSResult:
    """Integrate the forced problem whose exact solution is ``solution`` and
    measure the displacement error at the final time."""
    cfg = system.config
    F = system.forms
    f = solution.interior_forcing(cfg)
    e, f1 = F.e1, F.f1

    def load(t):
        b = load_vector(F, lambda x: f(x, t))
        gb, gr = solution.boundary_residuals(cfg, t)
        return b - gb * e - gr * f1

    final = _final_state(system, integrator, solution, load)
    T = final.t
    err_l2 = l2_error(F, final.U, lambda x: solution.value(x, T))
    from .expressions import Poly

    exact = F.interpolate(Poly(tuple(float(c) for c in solution.coeffs)).scaled(float(solution.time_factor(T))))
    d = final.U - exact
    en = float(d @ (system.K @ d))
    return MMSResult(F.mesh.n_elements, system.M_d, integrator.dt, err_l2, math.sqrt(max(en, 0.0)))


def _final_state(system, integrator, solution, load):
    X = system.pack(solution.initial_state(system))
    dt = integrator.dt
    for k in range(integrator.n_steps):
        tk = k * dt
        tf = tk + (0.5 * dt if integrator.scheme == "midpoint" else dt)
        X = step_packed(system, X, dt, integrator.scheme, load(tf), tk)
    return system.unpack(X, integrator.n_steps * dt)


def observed_orders(errors, factor: float = 2.0, floor: float = 1e-13) -> list[float]:
    """log_factor(e_k / e_{k+1}); inf when both errors sit at roundoff."""
    out = []
    for a, b in zip(errors[:-1], errors[1:]):
        if a <= floor and b <= floor:
            out.append(math.inf)
        else:
            out.append(math.log(max(a, floor) / max(b, floor)) / math.log(factor))
    return out
