"""Energy diagnostics, inequality checks along trajectories, spectra and the
exponential decay certificate."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .evolution import ClosedLoopSystem, SystemState, TrajectoryRecord, lyapunov_cross
from .model import CertificateConstants, damping_margin, decay_bound, gamma_window
from .spatial import DiscreteFunction


# ---------------------------------------------------------------------------
# energy and Lyapunov functional
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergySample:
    t: float
    E: float
    kinetic: float
    bending: float
    axial: float
    spring: float
    delay: float
    G: float = math.nan
    L: float = math.nan

    @property
    def components(self) -> tuple[float, float, float, float, float]:
        return self.kinetic, self.bending, self.axial, self.spring, self.delay


def energy(system: ClosedLoopSystem, state: SystemState) -> EnergySample:
    """E = 1/2 (v'Mv + u'K_s u + u'K_q u + kb u(1)^2 + kr u'(1)^2) + delay energy."""
    X = system.pack(state)
    kin, bend, ax, spring, dl = system.energy_parts(X, state.W if system.with_delay else None)
    E = kin + bend + ax + spring + dl
    return EnergySample(state.t, E, kin, bend, ax, spring, dl)


def lyapunov(system: ClosedLoopSystem, state: SystemState, constants: CertificateConstants) -> EnergySample:
    """Energy plus G and L = E + eps G."""
    s = energy(system, state)
    G = lyapunov_cross(system, system.pack(state), constants.upsilon, state.W if system.with_delay else None)
    return EnergySample(s.t, s.E, *s.components, G=G, L=s.E + constants.epsilon * G)


# ---------------------------------------------------------------------------
# dissipation
# ---------------------------------------------------------------------------


def _step_means(record: TrajectoryRecord):
    v, dv, w = record["ut1"], record["uxt1"], record["w1"]
    mid = lambda a: 0.5 * (a[1:] + a[:-1])
    return mid(v), mid(dv), mid(w)


def _without_delay(record: TrajectoryRecord) -> TrajectoryRecord:
    from dataclasses import replace

    tr = dict(record.traces)
    tr["w1"] = np.zeros_like(tr["w1"])
    return replace(record, traces=tr)


def dissipation_rate(v, dv, w, gains, gamma):
    """Right-hand side of the energy identity for given boundary traces."""
    return -gains.kd * w * v - gains.kv * v * v - gains.ka * dv * dv - 0.5 * gamma * (w * w - v * v)


@dataclass(frozen=True)
class IdentityResidual:
    residual: np.ndarray  # dE/dt - rhs per step
    rhs: np.ndarray
    dEdt: np.ndarray
    variant: str

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0


def dissipation_identity_residual(
    record: TrajectoryRecord, system: ClosedLoopSystem, variant: str = "midpoint"
) -> IdentityResidual:
    """Per-step residual of the energy identity.

    ``midpoint`` evaluates the right-hand side at the step-averaged traces;
    for the implicit midpoint rule the discrete identity is then exact and the
    residual is the scheme's own numerical dissipation (zero up to roundoff).
    ``trapezoid`` averages the right-hand side of the two end points, which is
    a consistent O(dt^2) approximation for any scheme.
    """
    g, gamma = system.gains, system.gamma
    if not system.with_delay:
        # no delay line: the w terms and the gamma weight drop out
        gamma = 0.0
        record = _without_delay(record)
    dEdt = np.diff(record.E) / record.dt
    if variant == "midpoint":
        rhs = dissipation_rate(*_step_means(record), g, gamma)
    elif variant == "trapezoid":
        r = dissipation_rate(record["ut1"], record["uxt1"], record["w1"], g, gamma)
        rhs = 0.5 * (r[1:] + r[:-1])
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return IdentityResidual(dEdt - rhs, rhs, dEdt, variant)


@dataclass(frozen=True)
class BoundCheck:
    margins: np.ndarray  # -(dE/dt + C (v^2 + w^2 + v'^2)); >= 0 when the bound holds
    c_gamma: float
    skipped: bool = False
    note: str = ""

    @property
    def worst(self) -> float:
        if self.skipped or self.margins.size == 0:
            return 0.0
        return float(np.min(self.margins))


def dissipation_bound_check(
    record: TrajectoryRecord, system: ClosedLoopSystem, c_gamma: float | None = None
) -> BoundCheck:
    """Margins of dE/dt <= -C (u_t(1)^2 + u_t(1, t - tau)^2 + u_xt(1)^2) per step.

    Skipped (with a note) when the gamma window is empty or gamma lies outside
    it, the situation in which no such bound is claimed.
    """
    n = record.n_steps
    if not system.with_delay:
        return BoundCheck(np.zeros(0), math.nan, True, "no delay line")
    g = system.gains
    lo, hi = gamma_window(g)
    if not (lo < system.gamma < hi):
        return BoundCheck(np.zeros(0), math.nan, True,
                          f"skipped: gamma = {system.gamma!r} not in ({lo!r}, {hi!r}) (|kd| < kv required)")
    if c_gamma is None:
        c_gamma = damping_margin(g, system.gamma)
    v, dv, w = _step_means(record)
    dEdt = np.diff(record.E) / record.dt
    margins = -(dEdt + c_gamma * (v * v + w * w + dv * dv))
    assert margins.size == n
    return BoundCheck(margins, c_gamma)


# ---------------------------------------------------------------------------
# auxiliary elliptic problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuxiliarySolution:
    y: DiscreteFunction
    lam: float
    mu: float
    triple_sq: float
    l2_sq: float
    c_lm: float
    q0: float

    @property
    def identity_residual(self) -> float:
        """Relative defect of |||y|||^2 = lam y(1) + mu y'(1)."""
        y1, dy1 = self.y.at_one
        rhs = self.lam * y1 + self.mu * dy1
        scale = max(abs(self.triple_sq), abs(rhs))
        return abs(self.triple_sq - rhs) / scale if scale > 0 else 0.0

    @property
    def l2_bound(self) -> float:
        return self.c_lm**2 / self.q0

    @property
    def triple_bound(self) -> float:
        return self.c_lm**2


def _matvec_extended(A: sp.csr_matrix, y: np.ndarray) -> np.ndarray:
    """A y accumulated in extended precision (long double)."""
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    out = np.zeros(A.shape[0], np.longdouble)
    np.add.at(out, rows, A.data.astype(np.longdouble) * np.asarray(y, np.longdouble)[A.indices])
    return out


def auxiliary_elliptic_solve(system: ClosedLoopSystem, lam: float, mu: float, refine: int = 3) -> AuxiliarySolution:
    """Solve  int sigma y'' phi'' + int q y' phi' + kb y(1) phi(1) + kr y'(1) phi'(1)
    = lam phi(1) + mu phi'(1)  for all discrete phi.

    The graded mesh makes K badly conditioned, so the double-precision solve is
    followed by ``refine`` steps of iterative refinement with residuals (and
    the final |||y|||^2) accumulated in long double.
    """
    g = system.gains
    if not (g.kb > 0 and g.kr > 0):
        raise ValueError("auxiliary problem needs kb > 0 and kr > 0")
    F = system.forms
    K = system.K.tocsr()
    solve = system._factors.get("elliptic")
    if solve is None:
        solve = spla.factorized(K.tocsc())
        system._factors["elliptic"] = solve
    rhs = lam * F.e1 + mu * F.f1
    if lam or mu:
        y = solve(rhs)
        b = rhs.astype(np.longdouble)
        for _ in range(refine):
            y = y + solve(np.asarray(b - _matvec_extended(K, y), float))
        triple = float(np.asarray(y, np.longdouble) @ _matvec_extended(K, y))
    else:
        y, triple = np.zeros(F.n), 0.0
    q0 = F.axial_bounds[0]
    K_s, s1 = F.degeneracy.K_sigma, F.degeneracy.sigma_at_one
    C1 = math.sqrt(2.0 * max(1.0 / q0, 1.0 / (s1 * (2.0 - K_s))))
    c = abs(lam) * math.sqrt(1.0 / q0) + abs(mu) * C1
    yy = DiscreteFunction(y, F)
    return AuxiliarySolution(yy, float(lam), float(mu), triple, float(y @ (F.M @ y)), c, q0)


# ---------------------------------------------------------------------------
# lemma checks
# ---------------------------------------------------------------------------


def _window(record: TrajectoryRecord, r: float, T: float) -> slice:
    i = int(round(r / record.dt))
    j = int(round(T / record.dt))
    if not (0 <= i < j <= record.n_steps):
        raise ValueError(f"window ({r}, {T}) outside the trajectory")
    return slice(i, j + 1)


def _integral(t, y):
    return float(np.trapezoid(y, t)) if hasattr(np, "trapezoid") else float(np.trapz(y, t))


@dataclass(frozen=True)
class InequalityCheck:
    name: str
    lhs: float
    rhs: float
    tol: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def ok(self) -> bool:
        return self.slack >= -self.tol


@dataclass(frozen=True)
class LemmaReport:
    r: float
    T: float
    pointwise_slack: np.ndarray  # rhs - dG/dt at interior samples of the window
    pointwise_tol: float
    integral: InequalityCheck
    trace: InequalityCheck

    @property
    def pointwise_worst(self) -> float:
        return float(np.min(self.pointwise_slack)) if self.pointwise_slack.size else 0.0

    @property
    def pointwise_ok(self) -> bool:
        return self.pointwise_worst >= -self.pointwise_tol

    @property
    def ok(self) -> bool:
        return self.pointwise_ok and self.integral.ok and self.trace.ok


def lemma_checks(
    record: TrajectoryRecord, constants: CertificateConstants, r: float, T: float, rtol: float = 1e-8
) -> LemmaReport:
    """Evaluate, over the window [r, T],

    * the pointwise bound on dG/dt (centred differences of G),
    * eps rate int E <= L(r) - L(T) + eps C0 int (u(1)^2 + u_x(1)^2),
    * int (u(1)^2 + u_x(1)^2) <= 2 [dt~ int E + C2 (E(r) - E(T)) + C3 (E(r) + E(T))],

    with time integrals by the trapezoid rule. Tolerances are ``rtol`` times
    the size of the terms involved; the pointwise check additionally allows the
    O(dt^2) error of the centred difference.
    """
    c = constants
    sl = _window(record, r, T)
    t = record.t[sl]
    E, G, L = record.E[sl], record.G[sl], record.L[sl]
    u, ux, v, dv, w = (record[k][sl] for k in ("u1", "ux1", "ut1", "uxt1", "w1"))
    ups, q1, s1, gm, tau = c.upsilon, c.q_at_one, c.sigma1, c.gamma, c.tau
    gains = _gains_from(record)
    kr, ka, kv, kd, kb = gains

    trace_coef = 2.0 / s1 + (2.0 + ups / 2.0) / q1
    rhs_pt = (
        -c.decay_factor * E
        + (trace_coef * kr**2 + (1.5 + ups / 4.0) * q1) * ux**2
        + trace_coef * ka**2 * dv**2
        + (3.0 * kd**2 / q1 - gm * math.exp(-2.0 * tau)) * w**2
        + (1.0 + gm + 3.0 * kv**2 / q1) * v**2
        + (3.0 * kb**2 / q1 + q1 * ups**2 / 4.0) * u**2
    )
    dt = record.dt
    if G.size >= 3:
        dG = (G[2:] - G[:-2]) / (2.0 * dt)
        slack_pt = rhs_pt[1:-1] - dG
        d3 = np.diff(G, 3) / dt**3 if G.size >= 4 else np.zeros(1)
        tol_pt = dt**2 * float(np.max(np.abs(d3))) / 6.0 + rtol * float(np.max(np.abs(rhs_pt)) + np.max(np.abs(dG)))
    else:
        slack_pt, tol_pt = np.zeros(0), 0.0

    intE = _integral(t, E)
    intB = _integral(t, u**2 + ux**2)
    lhs2 = c.epsilon * c.decay_factor * intE
    rhs2 = L[0] - L[-1] + c.epsilon * c.C0 * intB
    tol2 = rtol * max(abs(lhs2), abs(L[0]), abs(L[-1]), c.epsilon * c.C0 * intB, 1e-300)
    rhs3 = 2.0 * (c.delta_tilde * intE + c.C2 * (E[0] - E[-1]) + c.C3 * (E[0] + E[-1]))
    tol3 = rtol * max(intB, rhs3, 1e-300)
    return LemmaReport(
        float(t[0]), float(t[-1]), slack_pt, tol_pt,
        InequalityCheck("integral_energy", lhs2, rhs2, tol2),
        InequalityCheck("boundary_trace", intB, rhs3, tol3),
    )


def _gains_from(record: TrajectoryRecord):
    g = record.gains
    return g.kr, g.ka, g.kv, g.kd, g.kb


# ---------------------------------------------------------------------------
# spectrum
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectrumReport:
    """``eigenvalues`` carry real parts recomputed as Rayleigh quotients of the
    energy-symmetric part at the computed eigenvectors; ``raw_eigenvalues``
    are the eigensolver output. Both are reported because for stiff, weakly
    damped modes the raw real part is dominated by roundoff of order
    eps * |lambda|, whereas the quotient is accurate relative to the (small)
    dissipative part."""

    eigenvalues: np.ndarray
    raw_eigenvalues: np.ndarray
    abscissa: float
    raw_abscissa: float
    quad_form_max: float  # max <A X, X>_E over random X with ||X||_E = 1
    method: str

    @property
    def stable(self) -> bool:
        return self.abscissa < 0

    @property
    def roundoff_floor(self) -> float:
        return 8.0 * np.finfo(float).eps * float(np.max(np.abs(self.raw_eigenvalues), initial=0.0))


def energy_form_generator(system: ClosedLoopSystem) -> sp.csr_matrix:
    """H A assembled block by block, so that X' H A X = <A X, X>_E without any solve.

    The beam coupling blocks K and -K come out as exact negatives of each
    other, which keeps the conservative part exactly skew.
    """
    n = system.n
    S = system.stiff.tocsr()
    KU = system.K @ S[:n]
    rows = [KU, S[n:2 * n]]
    if system.with_delay:
        rows.append(sp.csr_matrix((system.M_d, system.dim)))
    HA = sp.vstack(rows, format="csr")
    if system.with_delay:
        c = 0.5 * system.gamma * system.tau * system.ds
        HA = HA + c * (system.pair_sum.T @ S[2 * n:])
    return HA.tocsr()


def spectrum(system: ClosedLoopSystem, cap: int = 2000, n_random: int = 100, seed: int = 0) -> SpectrumReport:
    """All eigenvalues of the discrete generator and the random quadratic-form check.

    Eigenvalues are computed for R A R^{-1} where H = R'R is the energy Gram
    matrix; in these coordinates the conservative part is an exactly
    antisymmetric matrix. Without a positive definite H (gamma = 0) the
    generator is solved for directly and no quadratic-form check is made.
    """
    d = system.dim
    if d > cap:
        raise ValueError(f"generator dimension {d} exceeds cap {cap}")
    HA = energy_form_generator(system).toarray()
    Sym = 0.5 * (HA + HA.T)
    Skw = 0.5 * (HA - HA.T)
    H = system.energy_matrix.toarray()
    rng = np.random.default_rng(seed)
    try:
        R = sla.cholesky(H, lower=False)
    except np.linalg.LinAlgError:
        R = None
    if R is not None:
        def congr(B):
            Y = sla.solve_triangular(R, B.T, trans="T", lower=False).T  # B R^{-1}
            return sla.solve_triangular(R, Y, trans="T", lower=False)  # R^{-T} B R^{-1}

        As = congr(Sym)
        As = 0.5 * (As + As.T)
        Ak = congr(Skw)
        At = As + 0.5 * (Ak - Ak.T)
        try:
            raw, vecs = sla.eig(At)
        except sla.LinAlgError as exc:
            raise RuntimeError(f"eigensolver failed: {exc}") from None
        re = np.einsum("ik,ij,jk->k", vecs.conj(), As, vecs).real / np.einsum("ik,ik->k", vecs.conj(), vecs).real
        ev = re + 1j * raw.imag
        Z = rng.standard_normal((d, n_random))
        Z /= np.linalg.norm(Z, axis=0)
        X = sla.solve_triangular(R, Z, lower=False)
        q = np.einsum("ik,ij,jk->k", X, Sym, X)
        method = "energy"
    else:
        A = sla.solve(system.mass.toarray(), system.stiff.toarray())
        try:
            raw = sla.eigvals(A)
        except sla.LinAlgError as exc:
            raise RuntimeError(f"eigensolver failed: {exc}") from None
        ev = raw
        q = np.zeros(0)
        method = "direct"
    q_max = float(np.max(q)) if q.size else math.nan
    return SpectrumReport(ev, raw, float(np.max(ev.real)), float(np.max(raw.real)), q_max, method)


# ---------------------------------------------------------------------------
# decay rate and certificate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecayFit:
    theta: float
    residual: float
    n_points: int
    truncated: bool


def fit_decay_rate(t: np.ndarray, E: np.ndarray, window: tuple[float, float] | None = None,
                   floor: float = 1e-300) -> DecayFit:
    """Least-squares slope of log E against t; theta = -slope.

    Samples at or below ``floor`` are dropped and the fit is flagged as
    truncated.
    """
    t = np.asarray(t, float)
    E = np.asarray(E, float)
    m = np.ones_like(t, bool) if window is None else (t >= window[0]) & (t <= window[1])
    pos = m & (E > floor)
    truncated = bool(np.any(m & ~pos))
    if pos.sum() < 2:
        return DecayFit(math.nan, math.nan, int(pos.sum()), True)
    tt, y = t[pos], np.log(E[pos])
    A = np.column_stack([tt, np.ones_like(tt)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    return DecayFit(float(-coef[0]), float(np.sqrt(np.mean(res**2))), int(pos.sum()), truncated)


@dataclass
class DecayCertificate:
    constants: CertificateConstants
    windows: list[InequalityCheck]
    pointwise: str  # "not reached" or "pass"/"fail"
    pointwise_margin: float
    fit: DecayFit
    monotone_worst: float  # max increase of E between steps, relative to E(0)
    equivalence_worst: float  # min of L - theta1 E and theta2 E - L, relative to E(0)
    bound_worst: float  # worst dissipation-bound margin, relative to E(0)
    lemmas: list[LemmaReport] = field(default_factory=list)
    checks: list[tuple[str, bool, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    @property
    def first_failure(self) -> tuple[str, float] | None:
        for name, ok, slack in self.checks:
            if not ok:
                return name, slack
        return None

    @property
    def inverse_M(self) -> float:
        return 1.0 / self.constants.M


def certify(record: TrajectoryRecord, constants: CertificateConstants, rtol: float = 1e-8,
            monotone_tol: float = 1e-10, bound_tol: float = 1e-8) -> DecayCertificate:
    """Check the decay certificate along a trajectory.

    (a) int_r^T E <= M E(r) on the windows r = k T_h / 8, k = 1..6;
    (b) E(t) <= E(0) exp(1 - t/M) at samples t >= M, if any;
    (c) theta from a log-linear fit over the second half of the horizon.
    Monotonicity of E, the L/E equivalence, the dissipation bound and the
    three lemma inequalities on the same windows are checked as well.
    """
    c = constants
    t, E, L = record.t, record.E, record.L
    Th = float(t[-1])
    E0 = float(E[0])
    scale = max(E0, 1e-300)
    checks: list[tuple[str, bool, float]] = []

    wins, lemmas = [], []
    for k in range(1, 7):
        r = k * Th / 8.0
        sl = _window(record, r, Th)
        lhs = _integral(t[sl], E[sl])
        rhs = c.M * float(E[sl][0])
        chk = InequalityCheck(f"integral_bound[r={t[sl][0]!r}]", lhs, rhs, rtol * max(lhs, rhs, 1e-300))
        wins.append(chk)
        checks.append((chk.name, chk.ok, chk.slack))
        lem = lemma_checks(record, c, r, Th, rtol)
        lemmas.append(lem)
        checks.append((f"lemma_dG[r={lem.r!r}]", lem.pointwise_ok, lem.pointwise_worst))
        checks.append((f"lemma_integral[r={lem.r!r}]", lem.integral.ok, lem.integral.slack))
        checks.append((f"lemma_trace[r={lem.r!r}]", lem.trace.ok, lem.trace.slack))

    late = t >= c.M
    if np.any(late):
        margin = float(np.min(decay_bound(c, E0, t[late]) - E[late]) / scale)
        pointwise = "pass" if margin >= -rtol else "fail"
        checks.append(("pointwise_bound", margin >= -rtol, margin))
    else:
        margin, pointwise = math.nan, "not reached"

    fit = fit_decay_rate(t, E, (0.5 * Th, Th))

    inc = float(np.max(np.diff(E)) / scale) if E.size > 1 else 0.0
    checks.append(("energy_monotone", inc <= monotone_tol, -inc))
    eq = float(min(np.min(L - c.theta1 * E), np.min(c.theta2 * E - L)) / scale)
    checks.append(("lyapunov_equivalence", eq >= -rtol, eq))
    v, dv, w = _step_means(record)
    bm = -(np.diff(E) / record.dt + c.c_gamma * (v * v + w * w + dv * dv))
    bw = float(np.min(bm) / scale) if bm.size else 0.0
    checks.append(("dissipation_bound", bw >= -bound_tol, bw))
    return DecayCertificate(c, wins, pointwise, margin, fit, inc, eq, bw, lemmas, checks)
