"""Scenario files: strict TOML with fixed sections.

::

    [sigma]           kind = "power" | "constant" | "tabulated"; alpha / value / xs, values
    [q]               kind = "constant" | "affine" | "tabulated"; value / a, b / xs, values
    [gains]           kr, ka, kv, kd, kb
    [delay]           tau, gamma = number | "auto", g0 = tag   (g0 optional, default "zero")
    [initial]         u0 = tag, u1 = tag
    [discretization]  N, beta, M_d, dt, T, scheme (optional, default "midpoint")
    [output]          stride, csv, report   (section and keys optional)

M_d = 0 removes the delay line altogether, which is allowed only for kd = 0.
Unknown sections or keys are errors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli
import tomli_w

from .expressions import parse_field
from .model import AxialForceProfile, DelaySpec, GainSet, ModelConfig, RigidityProfile


class ScenarioError(ValueError):
    """Malformed scenario document."""


@dataclass(frozen=True)
class Discretization:
    N: int = 64
    beta: float = 2.0
    M_d: int = 64
    dt: float = 1e-2
    T: float = 20.0
    scheme: str = "midpoint"


@dataclass(frozen=True)
class OutputSpec:
    stride: int = 1
    csv: str | None = None
    report: str | None = None


@dataclass(frozen=True)
class Scenario:
    config: ModelConfig
    disc: Discretization = field(default_factory=Discretization)
    output: OutputSpec = field(default_factory=OutputSpec)

    @property
    def with_delay(self) -> bool:
        return self.disc.M_d > 0


_SIGMA_KEYS = {"power": {"alpha"}, "constant": {"value"}, "tabulated": {"xs", "values"}}
_Q_KEYS = {"constant": {"value"}, "affine": {"a", "b"}, "tabulated": {"xs", "values"}}
_SECTIONS = {"sigma", "q", "gains", "delay", "initial", "discretization", "output"}


def _table(doc: dict, name: str, required: set[str], optional: set[str] = frozenset(), present: bool = True) -> dict:
    if name not in doc:
        if present:
            raise ScenarioError(f"missing [{name}] section")
        return {}
    tab = doc[name]
    if not isinstance(tab, dict):
        raise ScenarioError(f"[{name}] must be a table")
    missing = required - tab.keys()
    if missing:
        raise ScenarioError(f"[{name}] missing keys: {', '.join(sorted(missing))}")
    unknown = tab.keys() - required - optional
    if unknown:
        raise ScenarioError(f"[{name}] unknown keys: {', '.join(sorted(unknown))}")
    return tab


def _num(tab: dict, key: str, where: str) -> float:
    v = tab[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ScenarioError(f"[{where}] {key} must be a finite number, got {v!r}")
    return float(v)


def _int(tab: dict, key: str, where: str) -> int:
    v = tab[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScenarioError(f"[{where}] {key} must be an integer, got {v!r}")
    return v


def _nums(tab: dict, key: str, where: str) -> tuple[float, ...]:
    v = tab[key]
    if not isinstance(v, list) or not v:
        raise ScenarioError(f"[{where}] {key} must be a non-empty array")
    return tuple(_num({key: x}, key, where) for x in v)


def _kind(tab: dict, where: str, table: dict) -> str:
    if "kind" not in tab:
        raise ScenarioError(f"[{where}] missing key: kind")
    k = tab["kind"]
    if k not in table:
        raise ScenarioError(f"[{where}] unknown kind {k!r}")
    return k


def _tag(tab: dict, key: str, where: str):
    try:
        return parse_field(tab[key])
    except ValueError as exc:
        raise ScenarioError(f"[{where}] {key}: {exc}") from None


def from_dict(doc: dict) -> Scenario:
    unknown = doc.keys() - _SECTIONS
    if unknown:
        raise ScenarioError(f"unknown sections: {', '.join(sorted(unknown))}")
    try:
        sig = doc.get("sigma")
        if sig is None:
            raise ScenarioError("missing [sigma] section")
        kind = _kind(sig, "sigma", _SIGMA_KEYS)
        sig = _table(doc, "sigma", {"kind"} | _SIGMA_KEYS[kind])
        if kind == "power":
            rig = RigidityProfile.power(_num(sig, "alpha", "sigma"))
        elif kind == "constant":
            rig = RigidityProfile.constant(_num(sig, "value", "sigma"))
        else:
            rig = RigidityProfile.tabulated(_nums(sig, "xs", "sigma"), _nums(sig, "values", "sigma"))

        qt = doc.get("q")
        if qt is None:
            raise ScenarioError("missing [q] section")
        kind = _kind(qt, "q", _Q_KEYS)
        qt = _table(doc, "q", {"kind"} | _Q_KEYS[kind])
        if kind == "constant":
            ax = AxialForceProfile.constant(_num(qt, "value", "q"))
        elif kind == "affine":
            ax = AxialForceProfile.affine(_num(qt, "a", "q"), _num(qt, "b", "q"))
        else:
            ax = AxialForceProfile.tabulated(_nums(qt, "xs", "q"), _nums(qt, "values", "q"))

        gt = _table(doc, "gains", {"kr", "ka", "kv", "kd", "kb"})
        gains = GainSet(**{k: _num(gt, k, "gains") for k in ("kr", "ka", "kv", "kd", "kb")})

        dt_ = _table(doc, "delay", {"tau", "gamma"}, {"g0"})
        gamma = dt_["gamma"]
        if gamma == "auto":
            gamma = None
        else:
            gamma = _num(dt_, "gamma", "delay")
        g0 = _tag(dt_, "g0", "delay") if "g0" in dt_ else parse_field("zero")
        delay = DelaySpec(_num(dt_, "tau", "delay"), gamma, g0)

        it = _table(doc, "initial", {"u0", "u1"})
        cfg = ModelConfig(rig, ax, gains, delay, _tag(it, "u0", "initial"), _tag(it, "u1", "initial"))

        ds = _table(doc, "discretization", {"N", "beta", "M_d", "dt", "T"}, {"scheme"})
        disc = Discretization(
            N=_int(ds, "N", "discretization"), beta=_num(ds, "beta", "discretization"),
            M_d=_int(ds, "M_d", "discretization"), dt=_num(ds, "dt", "discretization"),
            T=_num(ds, "T", "discretization"), scheme=ds.get("scheme", "midpoint"),
        )
        if disc.N < 2 or disc.beta < 1 or disc.M_d < 0 or not disc.dt > 0 or not disc.T >= disc.dt:
            raise ScenarioError(f"invalid discretization {disc}")
        if disc.scheme not in ("midpoint", "backward_euler"):
            raise ScenarioError(f"unknown scheme {disc.scheme!r}")
        if disc.M_d == 0 and gains.kd != 0:
            raise ScenarioError("M_d = 0 (no delay line) requires kd = 0")

        ot = _table(doc, "output", set(), {"stride", "csv", "report"}, present=False)
        out = OutputSpec(
            stride=_int(ot, "stride", "output") if "stride" in ot else 1,
            csv=ot.get("csv"), report=ot.get("report"),
        )
        if out.stride < 1:
            raise ScenarioError("[output] stride must be >= 1")
        for k in ("csv", "report"):
            if getattr(out, k) is not None and not isinstance(getattr(out, k), str):
                raise ScenarioError(f"[output] {k} must be a string path")
    except ScenarioError:
        raise
    except (ValueError, TypeError) as exc:
        raise ScenarioError(str(exc)) from None
    return Scenario(cfg, disc, out)


def loads(text: str) -> Scenario:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError(f"not valid TOML: {exc}") from None
    return from_dict(doc)


def load(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from None
    return loads(text)


def to_dict(sc: Scenario) -> dict:
    c = sc.config
    r = c.rigidity
    if r.kind == "power":
        sig = {"kind": "power", "alpha": r.alpha}
    elif r.kind == "constant":
        sig = {"kind": "constant", "value": r.value}
    else:
        sig = {"kind": "tabulated", "xs": list(r.xs), "values": list(r.values)}
    q = c.axial
    if q.kind == "constant":
        qd = {"kind": "constant", "value": q.value}
    elif q.kind == "affine":
        qd = {"kind": "affine", "a": q.a, "b": q.b}
    else:
        qd = {"kind": "tabulated", "xs": list(q.xs), "values": list(q.values)}
    g = c.gains
    d = sc.disc
    out = {"stride": sc.output.stride}
    for k in ("csv", "report"):
        if getattr(sc.output, k) is not None:
            out[k] = getattr(sc.output, k)
    return {
        "sigma": sig,
        "q": qd,
        "gains": {"kr": g.kr, "ka": g.ka, "kv": g.kv, "kd": g.kd, "kb": g.kb},
        "delay": {"tau": c.delay.tau, "gamma": "auto" if c.delay.gamma is None else c.delay.gamma,
                  "g0": c.delay.g0.tag()},
        "initial": {"u0": c.u0.tag(), "u1": c.u1.tag()},
        "discretization": {"N": d.N, "beta": d.beta, "M_d": d.M_d, "dt": d.dt, "T": d.T, "scheme": d.scheme},
        "output": out,
    }


def dumps(sc: Scenario) -> str:
    return tomli_w.dumps(to_dict(sc))


def with_params(sc: Scenario, **params) -> Scenario:
    """Copy with selected parameters replaced: gain names, ``tau``, ``gamma``,
    ``alpha`` and discretization fields."""
    c = sc.config
    gains = {k: params.pop(k) for k in ("kr", "ka", "kv", "kd", "kb") if k in params}
    if gains:
        c = replace(c, gains=replace(c.gains, **gains))
    dl = {k: params.pop(k) for k in ("tau", "gamma") if k in params}
    if dl:
        c = replace(c, delay=replace(c.delay, **dl))
    if "alpha" in params:
        c = replace(c, rigidity=RigidityProfile.power(params.pop("alpha")))
    disc = {k: params.pop(k) for k in ("N", "beta", "M_d", "dt", "T", "scheme") if k in params}
    if params:
        raise ValueError(f"unknown parameters {sorted(params)}")
    return Scenario(c, replace(sc.disc, **disc), sc.output)
