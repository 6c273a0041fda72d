"""Run the dissipativity regression grid and print one CSV row per configuration.

kv in {1, 2}, kd in {0, +-0.5, +-0.9 kv}, tau in {0.1, 1, 5}, alpha in {0.5, 1.5};
sigma = x^alpha, q = 1, kr = ka = kb = 1, gamma = kv, u0 = x^2.
"""
import argparse
import csv
import itertools
import sys

import numpy as np

from degenbeam.analysis import certify, dissipation_bound_check, spectrum
from degenbeam.evolution import IntegratorConfig, assemble_closed_loop, simulate
from degenbeam.expressions import Poly, Zero
from degenbeam.model import AxialForceProfile, DelaySpec, GainSet, ModelConfig, RigidityProfile, certificate_constants
from degenbeam.spatial import build_mesh


def grid():
    for kv, tau, alpha in itertools.product((1.0, 2.0), (0.1, 1.0, 5.0), (0.5, 1.5)):
        for kd in sorted({0.0, 0.5, -0.5, 0.9 * kv, -0.9 * kv}):
            yield (kv, kd, tau, alpha), ModelConfig(
                RigidityProfile.power(alpha), AxialForceProfile.constant(1.0),
                GainSet(kr=1.0, ka=1.0, kv=kv, kd=kd, kb=1.0), DelaySpec(tau, None),
                Poly((0.0, 0.0, 1.0)), Zero())


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--N", type=int, default=32)
    p.add_argument("--M-d", type=int, default=32, dest="M_d")
    p.add_argument("--dt", type=float, default=1e-2)
    p.add_argument("--T", type=float, default=5.0)
    p.add_argument("--spectrum", action="store_true", help="also compute the spectral abscissa")
    args = p.parse_args(argv)

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["kv", "kd", "tau", "alpha", "max_dE", "min_margin", "min_equiv", "E_ratio", "certificate", "abscissa"])
    failures = 0
    for params, cfg in grid():
        c = certificate_constants(cfg)
        s = assemble_closed_loop(cfg, build_mesh(args.N, 2.0), args.M_d)
        rec = simulate(s, IntegratorConfig(args.dt, args.T), epsilon=c.epsilon)
        E0 = rec.E[0]
        inc = float(np.max(np.diff(rec.E)) / E0)
        margin = dissipation_bound_check(rec, s).worst / E0
        equiv = float(min(np.min(rec.L - c.theta1 * rec.E), np.min(c.theta2 * rec.E - rec.L)) / E0)
        ok = certify(rec, c).passed
        failures += not ok
        absc = spectrum(s).abscissa if args.spectrum else float("nan")
        w.writerow([*map(repr, params), repr(inc), repr(float(margin)), repr(equiv), repr(float(rec.E[-1] / E0)),
                    "pass" if ok else "fail", "" if np.isnan(absc) else repr(absc)])
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
