"""Radius of tract-metric balls against the Euclidean containment bound.

Along each direction the boundary of the ball of radius (1/2) log K about r
is located by bisection on the tract distance; the table reports the largest
boundary radius relative to (K - 1)(|Re r| + 3 pi/2).  Values below one mean
the Euclidean disk contains the sampled ball.

    python3 scripts/ball_containment.py --directions 64
"""

import argparse
import math
import sys

import numpy as np
from scipy.optimize import brentq

from hillmap.hyperbolic import euclid_ball_bound, tract_distance


def boundary_radius(r: complex, R: float, theta: float, rho: float) -> float:
    u = np.exp(1j * theta)
    f = lambda t: tract_distance(r, r + t * u).value - R  # noqa: E731
    hi = rho
    while f(hi) < 0:
        hi *= 2
    return brentq(f, 1e-9 * rho, hi, xtol=1e-6 * rho)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", default="1.05,1.2,1.5,2.0")
    ap.add_argument("--r", default="0,1,1+3.141592653589793j,5")
    ap.add_argument("--directions", type=int, default=32)
    args = ap.parse_args(argv)

    th = 2 * math.pi * np.arange(args.directions) / args.directions
    print("K,r,bound,max_radius,max_radius_over_bound,argmax_theta")
    for K in map(float, args.k.split(",")):
        R = 0.5 * math.log(K)
        for r in (complex(s) for s in args.r.split(",")):
            rho = euclid_ball_bound(K, r)
            radii = np.array([boundary_radius(r, R, t, rho) for t in th])
            k = int(np.argmax(radii))
            print(f"{K:g},{r:g},{rho:.6g},{radii[k]:.6g},{radii[k] / rho:.8f},{th[k]:.6f}")
            sys.stdout.flush()


if __name__ == "__main__":
    main()
