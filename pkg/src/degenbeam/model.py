"""Continuous problem definition, degeneracy classification and stability constants.

Everything here is a pure function of immutable dataclasses. The constants
of the decay certificate are assembled in :func:`certificate_constants`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .expressions import Field, Zero


class Degeneracy(str, Enum):
    WD = "WD"
    SD = "SD"
    NONDEGENERATE = "NONDEGENERATE"
    INVALID = "INVALID"


class AssumptionError(ValueError):
    """Raised when a structural assumption needed downstream is violated."""


# ---------------------------------------------------------------------------
# coefficient profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RigidityProfile:
    """Flexural rigidity sigma on [0, 1].

    ``kind`` is one of ``"power"`` (sigma = x**alpha), ``"constant"``
    (sigma = value) or ``"tabulated"`` (samples ``xs``, ``values``).
    Tabulated profiles interpolate linearly in log-log coordinates between
    positive samples; below the first positive abscissa the first log-log
    slope is extended as a power law when sigma(0) = 0, otherwise the first
    interval is interpolated linearly.
    """

    kind: str
    alpha: float = 1.0
    value: float = 1.0
    xs: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "power":
            if not (self.alpha > 0 and math.isfinite(self.alpha)):
                raise ValueError(f"power-law exponent must be positive, got {self.alpha}")
        elif self.kind == "constant":
            if not self.value > 0:
                raise ValueError("constant rigidity must be positive")
        elif self.kind == "tabulated":
            xs = np.asarray(self.xs, float)
            vs = np.asarray(self.values, float)
            if xs.ndim != 1 or xs.size < 2 or xs.size != vs.size:
                raise ValueError("tabulated rigidity needs matching xs/values with >= 2 samples")
            if np.any(np.diff(xs) <= 0) or xs[0] < 0 or not math.isclose(xs[-1], 1.0):
                raise ValueError("tabulated abscissae must increase strictly over [x0, 1]")
            if xs[0] > 0:
                raise ValueError("tabulated rigidity must include a sample at x = 0")
            if np.any(vs[1:] <= 0) or vs[0] < 0:
                raise ValueError("tabulated rigidity must be positive on (0, 1]")
            object.__setattr__(self, "xs", tuple(float(v) for v in xs))
            object.__setattr__(self, "values", tuple(float(v) for v in vs))
        else:
            raise ValueError(f"unknown rigidity kind {self.kind!r}")

    @classmethod
    def power(cls, alpha: float) -> "RigidityProfile":
        return cls("power", alpha=float(alpha))

    @classmethod
    def constant(cls, value: float = 1.0) -> "RigidityProfile":
        return cls("constant", value=float(value))

    @classmethod
    def tabulated(cls, xs: Sequence[float], values: Sequence[float]) -> "RigidityProfile":
        return cls("tabulated", xs=tuple(xs), values=tuple(values))

    # -- tabulated helpers: each piece is c * x**p (log-log) or linear
    def _pieces(self):
        xs = np.asarray(self.xs)
        vs = np.asarray(self.values)
        p = np.empty(xs.size - 1)
        lin = np.zeros(xs.size - 1, bool)
        for i in range(xs.size - 1):
            if xs[i] == 0.0:
                if vs[0] == 0.0:
                    # power-law extension of the next log-log slope
                    if xs.size > 2:
                        p[i] = np.log(vs[2] / vs[1]) / np.log(xs[2] / xs[1])
                    else:
                        p[i] = 1.0
                else:
                    lin[i] = True
                    p[i] = 0.0
            else:
                p[i] = np.log(vs[i + 1] / vs[i]) / np.log(xs[i + 1] / xs[i])
        return xs, vs, p, lin

    def _tab_eval(self, x, order):
        xs, vs, p, lin = self._pieces()
        x = np.asarray(x, float)
        k = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2)
        out = np.zeros_like(x)
        for i in np.unique(k):
            m = k == i
            xi = x[m]
            if lin[i]:
                slope = (vs[i + 1] - vs[i]) / (xs[i + 1] - xs[i])
                vals = (vs[i] + slope * (xi - xs[i]), np.full_like(xi, slope), np.zeros_like(xi))
            else:
                # anchor at the right end so the x = 0 piece stays well defined
                c = vs[i + 1] / xs[i + 1] ** p[i]
                with np.errstate(divide="ignore", invalid="ignore"):
                    s = c * xi ** p[i]
                    vals = (s, p[i] * s / xi, p[i] * (p[i] - 1) * s / xi**2)
            out[m] = vals[order]
        return out

    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        x = np.asarray(x, float)
        if self.kind == "power":
            return x**self.alpha
        if self.kind == "constant":
            return np.full_like(x, self.value)
        return self._tab_eval(x, 0)

    def d1(self, x):
        x = np.asarray(x, float)
        if self.kind == "power":
            return self.alpha * x ** (self.alpha - 1)
        if self.kind == "constant":
            return np.zeros_like(x)
        return self._tab_eval(x, 1)

    def d2(self, x):
        x = np.asarray(x, float)
        if self.kind == "power":
            a = self.alpha
            return a * (a - 1) * x ** (a - 2)
        if self.kind == "constant":
            return np.zeros_like(x)
        return self._tab_eval(x, 2)

    def at_zero(self) -> float:
        if self.kind == "power":
            return 0.0
        if self.kind == "constant":
            return self.value
        return self.values[0]


@dataclass(frozen=True)
class AxialForceProfile:
    """Axial force q on [0, 1]: ``constant`` (value), ``affine`` (a + b x) or
    ``tabulated`` (piecewise linear through ``xs``/``values``)."""

    kind: str
    value: float = 1.0
    a: float = 1.0
    b: float = 0.0
    xs: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "tabulated":
            xs = np.asarray(self.xs, float)
            if xs.size < 2 or xs.size != len(self.values):
                raise ValueError("tabulated axial force needs matching xs/values")
            if np.any(np.diff(xs) <= 0) or xs[0] != 0.0 or not math.isclose(xs[-1], 1.0):
                raise ValueError("tabulated axial abscissae must increase strictly over [0, 1]")
            object.__setattr__(self, "xs", tuple(float(v) for v in xs))
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        elif self.kind not in ("constant", "affine"):
            raise ValueError(f"unknown axial force kind {self.kind!r}")

    @classmethod
    def constant(cls, value: float = 1.0) -> "AxialForceProfile":
        return cls("constant", value=float(value))

    @classmethod
    def affine(cls, a: float, b: float) -> "AxialForceProfile":
        return cls("affine", a=float(a), b=float(b))

    @classmethod
    def tabulated(cls, xs: Sequence[float], values: Sequence[float]) -> "AxialForceProfile":
        return cls("tabulated", xs=tuple(xs), values=tuple(values))

    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        x = np.asarray(x, float)
        if self.kind == "constant":
            return np.full_like(x, self.value)
        if self.kind == "affine":
            return self.a + self.b * x
        return np.interp(x, self.xs, self.values)

    def d1(self, x):
        x = np.asarray(x, float)
        if self.kind == "constant":
            return np.zeros_like(x)
        if self.kind == "affine":
            return np.full_like(x, self.b)
        xs = np.asarray(self.xs)
        slopes = np.diff(self.values) / np.diff(xs)
        k = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2)
        return slopes[k]

    def bounds(self) -> tuple[float, float, float]:
        """Return (q0, q1, q2): min q, max q and max |q'| over [0, 1]."""
        if self.kind == "constant":
            return self.value, self.value, 0.0
        if self.kind == "affine":
            ends = (self.a, self.a + self.b)
            return min(ends), max(ends), abs(self.b)
        vs = np.asarray(self.values)
        slopes = np.diff(vs) / np.diff(self.xs)
        return float(vs.min()), float(vs.max()), float(np.abs(slopes).max())


@dataclass(frozen=True)
class GainSet:
    kr: float
    ka: float
    kv: float
    kd: float
    kb: float

    def __post_init__(self):
        for name in ("kr", "ka", "kv", "kb"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"gain {name} must be finite and >= 0, got {v}")
        if not math.isfinite(self.kd):
            raise ValueError("gain kd must be finite")


@dataclass(frozen=True)
class DelaySpec:
    """Delay ``tau``, state weight ``gamma`` (None = pick automatically) and
    the history ``g0`` of the boundary velocity indexed by lag in [0, tau]."""

    tau: float
    gamma: float | None = None
    g0: Field = field(default_factory=Zero)

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError("delay tau must be positive")
        if self.gamma is not None and not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ValueError("gamma must be nonnegative")


@dataclass(frozen=True)
class ModelConfig:
    rigidity: RigidityProfile
    axial: AxialForceProfile
    gains: GainSet
    delay: DelaySpec
    u0: Field = field(default_factory=Zero)
    u1: Field = field(default_factory=Zero)


def reference_config() -> ModelConfig:
    """sigma = x, q = 1, ka = kr = kb = 1, kv = 2, kd = 1, gamma = 2, tau = 1, u0 = x^2."""
    from .expressions import Poly

    return ModelConfig(
        rigidity=RigidityProfile.power(1.0),
        axial=AxialForceProfile.constant(1.0),
        gains=GainSet(kr=1.0, ka=1.0, kv=2.0, kd=1.0, kb=1.0),
        delay=DelaySpec(tau=1.0, gamma=2.0),
        u0=Poly((0.0, 0.0, 1.0)),
        u1=Zero(),
    )


# ---------------------------------------------------------------------------
# degeneracy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DegeneracyReport:
    cls: Degeneracy
    K_sigma: float
    witness: float
    sigma_at_one: float

    @property
    def certifiable(self) -> bool:
        return self.cls in (Degeneracy.WD, Degeneracy.SD)


def classify_degeneracy(rigidity: RigidityProfile, refine: int = 10) -> DegeneracyReport:
    """Compute K_sigma = sup x|sigma'|/sigma over (0, 1] and assign the class."""
    s1 = float(rigidity.eval(1.0))
    if rigidity.kind == "power":
        K, witness = rigidity.alpha, 1.0
    elif rigidity.kind == "constant":
        K, witness = 0.0, 1.0
    else:
        xs = np.asarray(rigidity.xs)
        pos = xs[xs > 0]
        grid = [np.linspace(a, b, refine + 1) for a, b in zip(pos[:-1], pos[1:])]
        # the first interval touches 0: sample it geometrically towards the origin
        first = pos[0] * np.logspace(-6, 0, 6 * refine + 1)
        grid = np.unique(np.concatenate([first] + grid))
        s = rigidity.eval(grid)
        if np.any(s <= 0):
            return DegeneracyReport(Degeneracy.INVALID, math.inf, float(grid[np.argmin(s)]), s1)
        ratio = grid * np.abs(rigidity.d1(grid)) / s
        i = int(np.argmax(ratio))
        K, witness = float(ratio[i]), float(grid[i])

    s0 = rigidity.at_zero()
    if s0 > 0:
        cls = Degeneracy.NONDEGENERATE
    elif 0 < K < 1:
        cls = Degeneracy.WD
    elif 1 <= K < 2:
        cls = Degeneracy.SD
    else:
        cls = Degeneracy.INVALID
    return DegeneracyReport(cls, float(K), witness, s1)


# ---------------------------------------------------------------------------
# assumption checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    value: str
    message: str
    required_for_certificate: bool = True


@dataclass(frozen=True)
class AssumptionReport:
    checks: tuple[AssumptionCheck, ...]
    strict: bool

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.required_for_certificate or not self.strict)

    @property
    def failures(self) -> list[AssumptionCheck]:
        return [c for c in self.checks if not c.passed and c.required_for_certificate]

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def gamma_window(gains: GainSet) -> tuple[float, float]:
    return abs(gains.kd), 2.0 * gains.kv - abs(gains.kd)


def resolve_gamma(gains: GainSet, requested: float | str | None = "auto") -> float:
    """Pick gamma inside the open window (|kd|, 2 kv - |kd|).

    ``"auto"`` (or None) returns the window centre, which is kv.
    """
    lo, hi = gamma_window(gains)
    if not lo < hi:
        raise AssumptionError(
            f"gamma window is empty: need |kd| < kv (|kd| = {abs(gains.kd)}, kv = {gains.kv})"
        )
    if requested is None or requested == "auto":
        return 0.5 * (lo + hi)
    g = float(requested)
    if not lo < g < hi:
        raise AssumptionError(f"gamma = {g} outside the admissible window ({lo}, {hi})")
    return g


def effective_gamma(config: ModelConfig) -> float:
    """Gamma used for simulation; never raises.

    Outside the admissible window an explicit value is used as is, and
    ``auto`` falls back to kv (or 1 when kv = 0).
    """
    g = config.delay.gamma
    if g is not None:
        return float(g)
    try:
        return resolve_gamma(config.gains, "auto")
    except AssumptionError:
        return config.gains.kv if config.gains.kv > 0 else 1.0


def damping_margin(gains: GainSet, gamma: float) -> float:
    """min{ka, (gamma - |kd|)/2, kv - (gamma + |kd|)/2}."""
    kd = abs(gains.kd)
    return min(gains.ka, 0.5 * (gamma - kd), gains.kv - 0.5 * (gamma + kd))


def upsilon(report: DegeneracyReport, axial: AxialForceProfile) -> float:
    """max{K_sigma, q2/q0}; must stay below 2."""
    if report.cls is Degeneracy.INVALID:
        raise AssumptionError("rigidity profile is not admissible")
    q0, _, q2 = axial.bounds()
    if q0 <= 0:
        raise AssumptionError("axial force lower bound q0 must be positive")
    u = max(report.K_sigma, q2 / q0)
    if u >= 2:
        raise AssumptionError(f"Upsilon = max(K_sigma, q2/q0) = {u} must be < 2")
    return u


def _initial_compatible(config: ModelConfig, cls: Degeneracy) -> tuple[bool, str]:
    u0 = config.u0
    bad = []
    if abs(u0.value(0.0)) > 1e-12:
        bad.append(f"u0(0) = {u0.value(0.0):g}")
    if cls in (Degeneracy.WD, Degeneracy.NONDEGENERATE) and abs(u0.deriv(0.0)) > 1e-12:
        bad.append(f"u0'(0) = {u0.deriv(0.0):g}")
    if abs(config.u1.value(0.0)) > 1e-12:
        bad.append(f"u1(0) = {config.u1.value(0.0):g}")
    return (not bad), ", ".join(bad) or "clamped end satisfied"


def validate_assumptions(config: ModelConfig, strict_for_certificate: bool = True) -> AssumptionReport:
    """Report-only check of every structural assumption, one entry each."""
    g = config.gains
    deg = classify_degeneracy(config.rigidity)
    q0, q1, q2 = config.axial.bounds()
    checks = []

    checks.append(
        AssumptionCheck(
            "degeneracy",
            deg.certifiable,
            f"class={deg.cls.value} K_sigma={deg.K_sigma!r}",
            "rigidity must be weakly or strongly degenerate"
            if not deg.certifiable
            else "rigidity is degenerate of admissible class",
        )
    )
    checks.append(
        AssumptionCheck(
            "delay_dominance",
            abs(g.kd) < g.kv,
            f"|kd|={abs(g.kd)!r} kv={g.kv!r}",
            "delay gain dominance |kd| < kv",
        )
    )
    checks.append(
        AssumptionCheck(
            "axial_bounds",
            q0 > 0 and math.isfinite(q1) and math.isfinite(q2),
            f"q0={q0!r} q1={q1!r} q2={q2!r}",
            "axial force bounds 0 < q0 <= q <= q1, |q'| <= q2",
        )
    )
    try:
        gamma = resolve_gamma(g, "auto" if config.delay.gamma is None else config.delay.gamma)
        ok, val = True, f"gamma={gamma!r}"
    except AssumptionError as exc:
        gamma, ok, val = None, False, str(exc)
    lo, hi = gamma_window(g)
    checks.append(
        AssumptionCheck("gamma_window", ok, val, f"weight window |kd| < gamma < 2kv - |kd| = ({lo!r}, {hi!r})")
    )
    try:
        ups = upsilon(deg, config.axial)
        checks.append(AssumptionCheck("upsilon", True, f"Upsilon={ups!r}", "Upsilon = max(K_sigma, q2/q0) < 2"))
    except AssumptionError as exc:
        checks.append(AssumptionCheck("upsilon", False, str(exc), "Upsilon = max(K_sigma, q2/q0) < 2"))
    checks.append(
        AssumptionCheck("ka_positive", g.ka > 0, f"ka={g.ka!r}", "rotational damping gain ka > 0")
    )
    checks.append(
        AssumptionCheck(
            "kb_kr_positive",
            g.kb > 0 and g.kr > 0,
            f"kb={g.kb!r} kr={g.kr!r}",
            "boundary spring gains kb > 0 and kr > 0",
        )
    )
    checks.append(
        AssumptionCheck(
            "kd_nonzero",
            g.kd != 0,
            f"kd={g.kd!r}",
            "kd = 0: delay channel inert (limit case, accepted)",
            required_for_certificate=False,
        )
    )
    ok, msg = _initial_compatible(config, deg.cls)
    checks.append(AssumptionCheck("initial_data", ok, msg, "initial data meets the clamped-end conditions"))
    return AssumptionReport(tuple(checks), strict_for_certificate)


# ---------------------------------------------------------------------------
# certificate constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CertificateConstants:
    K_sigma: float
    sigma1: float
    q0: float
    q1: float
    q2: float
    q_at_one: float
    tau: float
    gamma: float
    upsilon: float
    c_gamma: float
    c_upsilon: float
    theta1: float
    theta2: float
    C1: float
    C0: float
    decay_factor: float  # min{2 - Upsilon, 4 exp(-2 tau)}
    delta: float
    delta_tilde: float
    C2: float
    C3: float
    epsilon: float
    epsilon_bounds: tuple[float, ...]
    M: float

    def as_dict(self) -> dict[str, float]:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, tuple):
                for i, x in enumerate(v):
                    out[f"{k}[{i}]"] = x
            else:
                out[k] = v
        return out


def c_lambda_mu(constants: CertificateConstants, lam: float, mu: float) -> float:
    return abs(lam) * math.sqrt(1.0 / constants.q0) + abs(mu) * constants.C1


def certificate_constants(config: ModelConfig, epsilon: float | None = None) -> CertificateConstants:
    """Evaluate the full constant chain behind the exponential decay bound.

    epsilon defaults to half the smallest admissible upper bound.
    """
    report = validate_assumptions(config, strict_for_certificate=True)
    if not report.passed:
        names = ", ".join(f"{c.name} ({c.message})" for c in report.failures)
        raise AssumptionError(f"strict assumptions fail: {names}")
    g = config.gains
    deg = classify_degeneracy(config.rigidity)
    q0, q1, q2 = config.axial.bounds()
    qq = float(config.axial.eval(1.0))
    s1 = deg.sigma_at_one
    tau = config.delay.tau
    gamma = resolve_gamma(g, "auto" if config.delay.gamma is None else config.delay.gamma)
    ups = upsilon(deg, config.axial)
    cg = damping_margin(g, gamma)

    cu = 2.0 * max(1.0, 1.0 + ups / 4.0, (1.0 + ups / 8.0) / q0)
    C1 = math.sqrt(2.0 * max(1.0 / q0, 1.0 / (s1 * (2.0 - deg.K_sigma))))
    trace_coef = 2.0 / s1 + (2.0 + ups / 2.0) / qq

    bounds = [1.0 / cu]
    # a bound with a vanishing coefficient (kd = 0, or kd^2 underflowing) is vacuous
    for coef in (3.0 * g.kd**2 / qq, 1.0 + gamma + 3.0 * g.kv**2 / qq, trace_coef * g.ka**2):
        if coef > 0:
            bounds.append(cg / coef)
    eps = 0.5 * min(bounds) if epsilon is None else float(epsilon)
    if not 0 < eps < min(bounds):
        raise AssumptionError(f"epsilon = {eps} outside (0, {min(bounds)})")

    theta1 = 1.0 - eps * cu
    theta2 = 1.0 + eps * cu
    C0 = max(
        3.0 * g.kb**2 / qq + qq * ups**2 / 4.0,
        trace_coef * g.kr**2 + (1.5 + ups / 4.0) * qq,
    )
    rate = min(2.0 - ups, 4.0 * math.exp(-2.0 * tau))
    delta = 0.5 / ((1.0 / g.kb + 1.0 / g.kr) * max(1.0 / q0, C1**2))
    delta_t = rate / (4.0 * C0)
    C2 = max(g.kv**2 / delta, g.kd**2 / delta, g.ka**2 / (2.0 * delta)) / cg + max(
        1.0 / q0**2, C1**2 / q0
    ) / (delta_t * cg)
    C3 = max(1.0, 4.0 / (g.kb * q0**2), 4.0 * C1**2 / (g.kr * q0))
    M = 2.0 / (eps * rate) * (theta2 + 4.0 * eps * C0 * C3 + 2.0 * eps * C0 * C2)

    out = CertificateConstants(
        K_sigma=deg.K_sigma, sigma1=s1, q0=q0, q1=q1, q2=q2, q_at_one=qq, tau=tau,
        gamma=gamma, upsilon=ups, c_gamma=cg, c_upsilon=cu, theta1=theta1,
        theta2=theta2, C1=C1, C0=C0, decay_factor=rate, delta=delta,
        delta_tilde=delta_t, C2=C2, C3=C3, epsilon=eps,
        epsilon_bounds=tuple(bounds), M=M,
    )
    for name in ("c_gamma", "c_upsilon", "theta1", "C1", "C0", "decay_factor", "delta", "delta_tilde", "C2", "C3", "M"):
        if not getattr(out, name) > 0:
            raise AssumptionError(f"constant {name} = {getattr(out, name)} is not positive")
    return out


def decay_bound(constants: CertificateConstants, E0: float, t):
    """E0 * exp(1 - t/M) for t >= M.

    The bound is only asserted on [M, inf); for t < M the value is clamped
    to E0, which energy monotonicity already guarantees.
    """
    t = np.asarray(t, float)
    val = E0 * np.exp(1.0 - np.maximum(t, constants.M) / constants.M)
    return val if val.ndim else float(val)
