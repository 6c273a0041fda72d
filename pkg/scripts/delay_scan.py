"""Exploratory spectral scan beyond delay-gain dominance.

For |kd| >= kv no decay is claimed. The scan records the sign of the spectral
abscissa of the discrete generator over a (kd/kv, tau) grid; gamma is kept at
the given value, since its admissible window is empty there.
"""
import argparse
import csv
import sys

import numpy as np

from degenbeam.analysis import spectrum
from degenbeam.evolution import assemble_closed_loop
from degenbeam.model import DelaySpec, GainSet, ModelConfig, reference_config, validate_assumptions
from degenbeam.spatial import build_mesh


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--kv", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--ratio", default="0,0.5,0.9,1.1,1.5,2,3", help="kd/kv values")
    p.add_argument("--tau", default="0.1,0.5,1,2,5")
    p.add_argument("--N", type=int, default=16)
    p.add_argument("--M-d", type=int, default=16, dest="M_d")
    args = p.parse_args(argv)

    base = reference_config()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["kd_over_kv", "tau", "abscissa", "sign", "exploratory"])
    for r in (float(v) for v in args.ratio.split(",")):
        for tau in (float(v) for v in args.tau.split(",")):
            cfg = ModelConfig(base.rigidity, base.axial,
                              GainSet(kr=1.0, ka=1.0, kv=args.kv, kd=r * args.kv, kb=1.0),
                              DelaySpec(tau, args.gamma), base.u0, base.u1)
            a = spectrum(assemble_closed_loop(cfg, build_mesh(args.N, 2.0), args.M_d)).abscissa
            explo = not validate_assumptions(cfg).passed
            w.writerow([repr(r), repr(tau), repr(a), int(np.sign(a)), int(explo)])
    return 0


if __name__ == "__main__":
    sys.exit(main())
