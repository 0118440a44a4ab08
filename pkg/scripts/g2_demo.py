"""Divergence-free torsion for an isometric family of G2-structures on T^7.

Perturbs the standard 3-form by a unit octonion section V0 = exp(xi), solves
the octonionic Coulomb problem and reports the G2 and octonionic divergences.
"""

import argparse
import json

from loopgauge import coulomb as cs
from loopgauge import fields as fl
from loopgauge import g2
from loopgauge import loops as lp


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=4, help="points per axis")
    ap.add_argument("--eps", type=float, default=0.02)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    L = lp.get_instance("octonion")
    grid = fl.TorusGrid.periodic((args.n,) * 7)
    V0 = L.exp(cs.perturbation_field(grid, args.seed, args.eps))
    _, _, rep, summary = g2.g2_coulomb_solve(grid, V0)
    summary.update(newton_steps=rep.iterations, kernel_dim=rep.kernel_dim, seconds=rep.wall_time)
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
