"""Simulate the reference beam, check the decay certificate and write the trajectory.

    python scripts/reference_run.py [--csv traj.csv] [--N 64] [--T 20]
"""
import argparse
import sys
import time

from degenbeam.analysis import certify, spectrum
from degenbeam.cli import render_certificate, trajectory_csv
from degenbeam.evolution import IntegratorConfig, assemble_closed_loop, simulate
from degenbeam.model import certificate_constants, reference_config
from degenbeam.spatial import build_mesh


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--N", type=int, default=64)
    p.add_argument("--M-d", type=int, default=64, dest="M_d")
    p.add_argument("--dt", type=float, default=1e-2)
    p.add_argument("--T", type=float, default=20.0)
    p.add_argument("--csv", help="write the trajectory CSV here")
    p.add_argument("--no-spectrum", action="store_true")
    args = p.parse_args(argv)

    cfg = reference_config()
    c = certificate_constants(cfg)
    t0 = time.perf_counter()
    system = assemble_closed_loop(cfg, build_mesh(args.N, 2.0), args.M_d)
    rec = simulate(system, IntegratorConfig(args.dt, args.T), epsilon=c.epsilon)
    cert = certify(rec, c)
    print(render_certificate(cert), end="")
    print(f"E(0) = {rec.E[0]!r}, E(T)/E(0) = {rec.E[-1] / rec.E[0]!r}, run {time.perf_counter() - t0:.2f} s")
    if not args.no_spectrum:
        rep = spectrum(system)
        print(f"spectral abscissa {rep.abscissa!r} (raw {rep.raw_abscissa!r})")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(trajectory_csv(rec, system, c))
    return 0 if cert.passed else 5


if __name__ == "__main__":
    sys.exit(main())
