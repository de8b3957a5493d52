"""Empirical tightness of the displacement bound on the sech^2 family.

For each amplitude the smallest admissible M is read off the hypothesis
grid (the worst ratio is linear in |p|/M), the map is built, and the largest
deviation/bound ratio over seeded random pairs is recorded.  Nothing is
asserted; the output is a table for inspection.

    python3 scripts/displacement_tightness.py --pairs 20000 > tightness.csv
"""

import argparse
import csv
import math
import sys

import numpy as np

from hillmap.cli import sample_pairs
from hillmap.corpus import sech2
from hillmap.expr import parse
from hillmap.geometry import GridSpec, Strip, check_hypothesis
from hillmap.liouville import construct_map, displacement_sweep


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--amplitudes", default="0.005,0.01,0.02,0.05,0.1,0.15,0.05i,0.1i")
    ap.add_argument("--pairs", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--grid", default="200,50,-20,20,1e-3")
    args = ap.parse_args(argv)

    nx, ny, x0, x1, margin = args.grid.split(",")
    grid = GridSpec(int(nx), int(ny), float(x0), float(x1), float(margin))
    strip = Strip(math.pi)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["amplitude", "m_min", "pairs", "passed", "max_ratio", "p99_ratio", "worst_re_r", "worst_im_r"])
    for amp in args.amplitudes.split(","):
        p = parse(sech2(amp.replace("i", "*i") if amp.endswith("i") else amp))
        m_min = check_hypothesis(strip, p, 1.0, grid).worst_ratio
        if not m_min < 1:
            out.writerow([amp, m_min, 0, 0, "", "", "", ""])
            continue
        lmap = construct_map(strip, p, 25.0)
        rng = np.random.Generator(np.random.PCG64(args.seed))
        s, t = sample_pairs(rng, strip, grid, args.pairs)
        sw = displacement_sweep(lmap, m_min, s, t)
        ratio = sw.deviation / sw.bound
        k = int(np.argmax(ratio))
        out.writerow([amp, f"{m_min:.6g}", args.pairs, int(sw.passed.sum()), f"{ratio[k]:.6g}",
                      f"{np.percentile(ratio, 99):.6g}", f"{sw.r[k].real:.6g}", f"{sw.r[k].imag:.6g}"])
        sys.stdout.flush()


if __name__ == "__main__":
    main()
