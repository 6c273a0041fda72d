"""Command line entry point.

Exit codes: 0 success, 2 malformed input, 3 assumption violation,
4 numerical failure, 5 certificate failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import scenario as scn
from .analysis import certify, dissipation_bound_check, fit_decay_rate, spectrum
from .evolution import (
    IntegratorConfig,
    ManufacturedSolution,
    NumericalFailure,
    assemble_closed_loop,
    mms_run,
    observed_orders,
    simulate,
)
from .model import (
    AssumptionError,
    RigidityProfile,
    certificate_constants,
    decay_bound,
    reference_config,
    validate_assumptions,
)
from .spatial import build_mesh

EXIT_OK, EXIT_MALFORMED, EXIT_ASSUMPTION, EXIT_NUMERICAL, EXIT_CERTIFICATE = 0, 2, 3, 4, 5

CSV_HEADER = ("t", "E", "G", "L", "dE_bound_margin", "u1", "ux1", "ut1", "uxt1", "w1", "decay_bound")


class CliExit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def fmt(x) -> str:
    """Shortest round-trip representation; NaN becomes an empty field."""
    if x is None:
        return ""
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load(path: str) -> scn.Scenario:
    try:
        return scn.load(path)
    except scn.ScenarioError as exc:
        raise CliExit(EXIT_MALFORMED, f"malformed scenario {path}: {exc}") from None


def _system(sc: scn.Scenario):
    try:
        mesh = build_mesh(sc.disc.N, sc.disc.beta)
        return assemble_closed_loop(sc.config, mesh, sc.disc.M_d, with_delay=sc.with_delay)
    except ValueError as exc:
        raise CliExit(EXIT_ASSUMPTION, f"cannot discretise scenario: {exc}") from None


def _integrator(sc: scn.Scenario, full_state: bool = False) -> IntegratorConfig:
    d = sc.disc
    return IntegratorConfig(d.dt, d.T, d.scheme, sc.output.stride, full_state)


def _strict(sc: scn.Scenario):
    rep = validate_assumptions(sc.config, strict_for_certificate=True)
    if not rep.passed:
        lines = "; ".join(f"{c.name}: {c.message} [{c.value}]" for c in rep.failures)
        raise CliExit(EXIT_ASSUMPTION, f"assumption violation: {lines}")
    return rep


def _constants_or_none(sc: scn.Scenario):
    try:
        return certificate_constants(sc.config)
    except AssumptionError:
        return None


def _simulate(system, integ, epsilon):
    try:
        return simulate(system, integ, epsilon=epsilon)
    except NumericalFailure as exc:
        raise CliExit(EXIT_NUMERICAL, f"numerical failure: {exc}") from None


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def render_report(rep) -> str:
    lines = []
    for c in rep.checks:
        tag = "PASS" if c.passed else ("FAIL" if c.required_for_certificate else "NOTE")
        lines.append(f"{tag} {c.name}: {c.message} [{c.value}]")
    return "\n".join(lines)


def render_constants(c) -> str:
    return "\n".join(f"  {k} = {fmt(v)}" for k, v in c.as_dict().items())


def cmd_validate(args) -> int:
    sc = _load(args.scenario)
    rep = validate_assumptions(sc.config, strict_for_certificate=not args.lenient)
    print(render_report(rep))
    strict_ok = all(c.passed for c in rep.checks if c.required_for_certificate)
    if strict_ok:
        print("constants:")
        print(render_constants(certificate_constants(sc.config)))
        return EXIT_OK
    if args.lenient:
        return EXIT_OK
    raise CliExit(EXIT_ASSUMPTION, "assumption violation: "
                  + "; ".join(f"{c.name} ({c.message})" for c in rep.failures))


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def trajectory_csv(record, system, constants) -> str:
    """CSV text of the output rows of a trajectory."""
    bound = dissipation_bound_check(record, system, None if constants is None else constants.c_gamma)
    idx = record.output_indices()
    s = record.stride
    E0 = float(record.E[0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for k in idx:
        t = float(record.t[k])
        if k == 0 or bound.skipped:
            margin = None
        else:
            margin = float(np.min(bound.margins[k - s:k]))
        db = None
        if constants is not None and t >= constants.M:
            db = decay_bound(constants, E0, t)
        w.writerow([
            fmt(t), fmt(record.E[k]), fmt(record.G[k]), fmt(record.L[k]), fmt(margin),
            *(fmt(record[name][k]) for name in ("u1", "ux1", "ut1", "uxt1", "w1")), fmt(db),
        ])
    return buf.getvalue()


def _write(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_run(args) -> int:
    sc = _load(args.scenario)
    if not args.lenient:
        _strict(sc)
    constants = _constants_or_none(sc)
    system = _system(sc)
    integ = _integrator(sc, args.full_state)
    rec = _simulate(system, integ, None if constants is None else constants.epsilon)
    out = args.csv or sc.output.csv
    _write(trajectory_csv(rec, system, constants), out)
    if args.full_state:
        target = args.states or ((out + ".states.npz") if out not in (None, "-") else "states.npz")
        st = rec.states
        np.savez(target, t=np.array([s.t for s in st]), U=np.array([s.U for s in st]),
                 V=np.array([s.V for s in st]), W=np.array([s.W for s in st]))
        _err(f"full states written to {target}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# certify
# ---------------------------------------------------------------------------


def render_certificate(cert) -> str:
    c = cert.constants
    lines = ["constants:", render_constants(c), "integral windows (int_r^T E <= M E(r)):"]
    for wdw in cert.windows:
        lines.append(f"  {wdw.name}: lhs={fmt(wdw.lhs)} rhs={fmt(wdw.rhs)} slack={fmt(wdw.slack)}")
    lines.append(f"pointwise bound (t >= M): {cert.pointwise}"
                 + ("" if math.isnan(cert.pointwise_margin) else f" margin={fmt(cert.pointwise_margin)}"))
    lines.append("lemma slacks:")
    for lem in cert.lemmas:
        lines.append(
            f"  [r={fmt(lem.r)}, T={fmt(lem.T)}] dG/dt worst={fmt(lem.pointwise_worst)} "
            f"(tol {fmt(lem.pointwise_tol)}) integral={fmt(lem.integral.slack)} trace={fmt(lem.trace.slack)}"
        )
    lines.append(f"energy monotone: worst increase / E0 = {fmt(cert.monotone_worst)}")
    lines.append(f"L/E equivalence: worst slack / E0 = {fmt(cert.equivalence_worst)}")
    lines.append(f"dissipation bound: worst margin / E0 = {fmt(cert.bound_worst)}")
    lines.append(f"fitted decay rate theta = {fmt(cert.fit.theta)} (residual {fmt(cert.fit.residual)}"
                 f"{', truncated' if cert.fit.truncated else ''}); 1/M = {fmt(cert.inverse_M)}")
    ff = cert.first_failure
    lines.append("certificate: PASS" if ff is None else f"certificate: FAIL first violated {ff[0]} slack={fmt(ff[1])}")
    return "\n".join(lines) + "\n"


def cmd_certify(args) -> int:
    sc = _load(args.scenario)
    _strict(sc)
    constants = certificate_constants(sc.config)
    system = _system(sc)
    rec = _simulate(system, _integrator(sc), constants.epsilon)
    cert = certify(rec, constants)
    text = render_certificate(cert)
    _write(text, args.report or sc.output.report)
    if not cert.passed:
        ff = cert.first_failure
        raise CliExit(EXIT_CERTIFICATE, f"certificate failure: {ff[0]} slack={fmt(ff[1])}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# spectrum
# ---------------------------------------------------------------------------


def parse_grid(text: str | None, default: float) -> list[float]:
    """``a,b,c`` or ``start:stop:count`` (inclusive linspace)."""
    if text is None:
        return [default]
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise CliExit(EXIT_MALFORMED, f"bad grid {text!r}")
        try:
            a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise CliExit(EXIT_MALFORMED, f"bad grid {text!r}") from None
        if n < 1:
            raise CliExit(EXIT_MALFORMED, f"bad grid {text!r}")
        return [float(v) for v in np.linspace(a, b, n)]
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise CliExit(EXIT_MALFORMED, f"bad grid {text!r}") from None


def cmd_spectrum(args) -> int:
    sc = _load(args.scenario)
    g = sc.config.gains
    kds = parse_grid(args.kd, g.kd)
    taus = parse_grid(args.tau, sc.config.delay.tau)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kd", "tau", "abscissa", "raw_abscissa", "stable", "exploratory"])
    for kd in kds:
        for tau in taus:
            try:
                s = scn.with_params(sc, kd=kd, tau=tau)
            except ValueError as exc:
                raise CliExit(EXIT_MALFORMED, str(exc)) from None
            system = _system(s)
            try:
                rep = spectrum(system, cap=args.cap)
            except ValueError as exc:
                raise CliExit(EXIT_MALFORMED, str(exc)) from None
            except RuntimeError as exc:
                raise CliExit(EXIT_NUMERICAL, str(exc)) from None
            exploratory = not validate_assumptions(s.config).passed
            w.writerow([fmt(kd), fmt(tau), fmt(rep.abscissa), fmt(rep.raw_abscissa),
                        "1" if rep.stable else "0", "1" if exploratory else "0"])
    _write(buf.getvalue(), args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

SWEEP_PARAMS = ("kr", "ka", "kv", "kd", "kb", "tau", "gamma", "alpha", "N", "beta", "M_d", "dt", "T")
_INT_PARAMS = ("N", "M_d")


@dataclass(frozen=True)
class SweepRow:
    params: tuple
    E_ratio: float
    theta: float
    abscissa: float
    certificate: str
    status: str


def sweep_point(sc: scn.Scenario, params: tuple, cap: int = 2000) -> SweepRow:
    """Run, certify (when strict assumptions hold) and spectrum for one point;
    failures are reported in ``status`` rather than raised."""
    ratio = theta = absc = math.nan
    cert_s, status = "n/a", "ok"
    try:
        constants = _constants_or_none(sc)
        system = _system(sc)
        rec = simulate(system, _integrator(sc), epsilon=None if constants is None else constants.epsilon)
        E0 = float(rec.E[0])
        ratio = float(rec.E[-1] / E0) if E0 > 0 else math.nan
        Th = float(rec.t[-1])
        theta = fit_decay_rate(rec.t, rec.E, (0.5 * Th, Th)).theta
        if constants is not None:
            cert_s = "pass" if certify(rec, constants).passed else "fail"
        if system.dim <= cap:
            absc = spectrum(system, cap=cap).abscissa
    except CliExit as exc:
        status = f"error: {exc}"
    except (NumericalFailure, RuntimeError, ValueError) as exc:
        status = f"error: {type(exc).__name__}: {exc}"
    return SweepRow(params, ratio, theta, absc, cert_s, status)


def _sweep_task(item):
    text, params, cap = item
    return sweep_point(scn.loads(text), params, cap)


def default_jobs() -> int:
    v = os.environ.get("DEGENBEAM_JOBS")
    try:
        return max(1, int(v)) if v else 1
    except ValueError:
        return 1


def build_sweep(args) -> tuple[list[str], list[tuple[tuple, scn.Scenario]]]:
    if args.param:
        if len(args.scenarios) != 1:
            raise CliExit(EXIT_MALFORMED, "--param sweeps take exactly one template scenario")
        base = _load(args.scenarios[0])
        names, values = [], []
        for p in args.param:
            if "=" not in p:
                raise CliExit(EXIT_MALFORMED, f"bad --param {p!r}, expected name=values")
            name, text = p.split("=", 1)
            if name not in SWEEP_PARAMS:
                raise CliExit(EXIT_MALFORMED, f"unknown sweep parameter {name!r}")
            vals = parse_grid(text, 0.0)
            if name in _INT_PARAMS:
                vals = [int(round(v)) for v in vals]
            names.append(name)
            values.append(vals)
        grids = np.meshgrid(*[np.arange(len(v)) for v in values], indexing="ij")
        combos = sorted({tuple(values[i][g] for i, g in enumerate(ix)) for ix in zip(*(g.ravel() for g in grids))})
        points = []
        for combo in combos:
            try:
                points.append((combo, scn.with_params(base, **dict(zip(names, combo)))))
            except ValueError as exc:
                raise CliExit(EXIT_MALFORMED, f"invalid sweep point {combo}: {exc}") from None
        return names, points
    pts = sorted((p,) for p in args.scenarios)
    return ["scenario"], [(p, _load(p[0])) for p in pts]


def cmd_sweep(args) -> int:
    names, points = build_sweep(args)
    jobs = args.jobs if args.jobs is not None else default_jobs()
    items = [(scn.dumps(sc), params, args.cap) for params, sc in points]
    if jobs <= 1 or len(items) <= 1:
        rows = [_sweep_task(it) for it in items]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_sweep_task, items))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*names, "E_ratio", "theta", "abscissa", "certificate", "status"])
    for r in rows:
        w.writerow([*(v if isinstance(v, str) else fmt(v) if isinstance(v, float) else str(v) for v in r.params),
                    fmt(r.E_ratio), fmt(r.theta), fmt(r.abscissa), r.certificate, r.status])
    _write(buf.getvalue(), args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# mms
# ---------------------------------------------------------------------------


def mms_study(config, study: str, beta: float = 2.0, coeffs=(0.0, 0.0, 1.0)):
    """Space study: N = M_d in (8, 16, 32) at dt = 1e-3, T = 1.
    Time study: dt in (0.1, 0.05, 0.025) at N = 8, M_d = 512, T = 1."""
    sol = ManufacturedSolution(tuple(coeffs), 1.0)
    rows = []
    if study == "space":
        for N in (8, 16, 32):
            system = assemble_closed_loop(config, build_mesh(N, beta), N)
            rows.append(mms_run(sol, system, IntegratorConfig(1e-3, 1.0)))
    elif study == "time":
        system = assemble_closed_loop(config, build_mesh(8, beta), 512)
        for dt in (0.1, 0.05, 0.025):
            rows.append(mms_run(sol, system, IntegratorConfig(dt, 1.0)))
    else:
        raise ValueError(f"unknown study {study!r}")
    return rows, observed_orders([r.l2_error for r in rows])


def cmd_mms(args) -> int:
    config = _load(args.scenario).config if args.scenario else reference_config()
    if args.sigma is not None:
        rig = RigidityProfile.constant(1.0) if args.sigma == "one" else RigidityProfile.power(1.0)
        config = replace(config, rigidity=rig)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["study", "N", "M_d", "dt", "l2_error", "energy_error", "order"])
    studies = ("space", "time") if args.study == "both" else (args.study,)
    for study in studies:
        try:
            rows, orders = mms_study(config, study)
        except NumericalFailure as exc:
            raise CliExit(EXIT_NUMERICAL, f"numerical failure: {exc}") from None
        for i, r in enumerate(rows):
            w.writerow([study, r.N, r.M_d, fmt(r.dt), fmt(r.l2_error), fmt(r.energy_error),
                        "" if i == 0 else fmt(orders[i - 1])])
    _write(buf.getvalue(), args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="degenbeam", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check assumptions and print constants")
    v.add_argument("scenario")
    v.add_argument("--lenient", action="store_true", help="report only; never exit 3")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="simulate and write the trajectory CSV")
    r.add_argument("scenario")
    r.add_argument("--lenient", action="store_true", help="run even when assumptions fail")
    r.add_argument("--full-state", action="store_true", help="also save states at the output stride")
    r.add_argument("--csv", help="CSV path ('-' for stdout); default from [output] or stdout")
    r.add_argument("--states", help="path of the .npz file for --full-state")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("certify", help="simulate and check the decay certificate")
    c.add_argument("scenario")
    c.add_argument("--report", help="report path; default from [output] or stdout")
    c.set_defaults(func=cmd_certify)

    s = sub.add_parser("spectrum", help="spectral abscissa over a (kd, tau) grid")
    s.add_argument("scenario")
    s.add_argument("--kd", help="values 'a,b,c' or 'start:stop:count'")
    s.add_argument("--tau", help="values 'a,b,c' or 'start:stop:count'")
    s.add_argument("--cap", type=int, default=2000, help="maximum generator dimension")
    s.add_argument("-o", "--output", help="CSV path (default stdout)")
    s.set_defaults(func=cmd_spectrum)

    w = sub.add_parser("sweep", help="run many scenarios and aggregate a summary CSV")
    w.add_argument("scenarios", nargs="+", help="scenario files, or one template with --param")
    w.add_argument("--param", action="append", help="name=values, repeatable (grid product)")
    w.add_argument("--jobs", type=int, default=None, help="worker processes (default $DEGENBEAM_JOBS or 1)")
    w.add_argument("--cap", type=int, default=2000, help="maximum generator dimension for spectra")
    w.add_argument("-o", "--output", help="CSV path (default stdout)")
    w.set_defaults(func=cmd_sweep)

    m = sub.add_parser("mms", help="manufactured-solution convergence study")
    m.add_argument("scenario", nargs="?", help="take coefficients and gains from a scenario")
    m.add_argument("--sigma", choices=("one", "x"), default=None, help="override rigidity: 1 or x")
    m.add_argument("--study", choices=("space", "time", "both"), default="both")
    m.add_argument("-o", "--output", help="CSV path (default stdout)")
    m.set_defaults(func=cmd_mms)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliExit as exc:
        _err(str(exc))
        return exc.code
    except NumericalFailure as exc:
        _err(f"numerical failure: {exc}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
