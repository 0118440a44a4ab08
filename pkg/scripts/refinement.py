"""Convergence table for the discrete field identities under grid halving."""

import argparse
import time

import numpy as np

from loopgauge import loops as lp
from loopgauge.suites import field_identity_residuals


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--instance", default="octonion")
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128])
    args = ap.parse_args()
    L = lp.get_instance(args.instance)
    levels = []
    for N in args.sizes:
        t0 = time.perf_counter()
        levels.append(field_identity_residuals(L, N))
        print(f"N={N:4d}  {time.perf_counter() - t0:6.2f} s")
    names = list(levels[0])
    print("identity".ljust(18) + "".join(f"{N:>12d}" for N in args.sizes) + "   orders")
    for name in names:
        vals = [lv[name] for lv in levels]
        orders = [np.log2(a / b) for a, b in zip(vals, vals[1:])]
        print(name.ljust(18) + "".join(f"{v:12.3e}" for v in vals) + "   " + " ".join(f"{o:.2f}" for o in orders))


if __name__ == "__main__":
    main()
