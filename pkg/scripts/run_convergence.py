"""Refinement study: Poisson error ratio and prescribed-Jacobian mismatch as h shrinks."""

import argparse
import csv
import sys

import numpy as np

from jdcv.deformation import DeformationConfig, cell_mismatch, deform, gaussian_bump_monitor
from jdcv.field_core import LatticeGeometry, ScalarField
from jdcv.numerics import solve_poisson_neumann


def poisson_errors(sizes):
    rows = []
    for n in sizes:
        g = LatticeGeometry((n, n), (1 / (n - 1),) * 2)
        x = g.node_positions()
        exact = np.cos(np.pi * x[..., 0]) * np.cos(np.pi * x[..., 1])
        w = solve_poisson_neumann(ScalarField(g, -2 * np.pi**2 * exact))
        rows.append((n, float(np.max(np.abs(w.values - exact)))))
    return rows


def jacobian_mismatch(sizes, box=64.0, base_steps=50):
    rows = []
    for k, n in enumerate(sizes):
        g = LatticeGeometry((n, n), (box / (n - 1),) * 2)
        f1 = gaussian_bump_monitor(g)
        steps = base_steps * 2**k
        rows.append((n, steps, float(cell_mismatch(deform(f1, DeformationConfig(time_steps=steps)), f1).max())))
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[17, 33, 65, 129])
    parser.add_argument("--csv", help="optional output file")
    args = parser.parse_args(argv)

    print("Poisson (w = cos(pi x) cos(pi y))")
    perr = poisson_errors(args.sizes)
    for (n, e), prev in zip(perr, [None] + perr[:-1]):
        ratio = f"{prev[1] / e:6.3f}" if prev else "     -"
        print(f"  n={n:4d}  max error {e:.3e}  ratio {ratio}")

    print("Gaussian bump, max |J - f1| / f1 at cell centres")
    jerr = jacobian_mismatch(args.sizes)
    for n, steps, m in jerr:
        print(f"  n={n:4d}  steps={steps:4d}  mismatch {m:.4%}")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "poisson_error", "steps", "jacobian_mismatch"])
            for (n, e), (_, steps, m) in zip(perr, jerr):
                writer.writerow([n, e, steps, m])
    return 0


if __name__ == "__main__":
    sys.exit(main())
