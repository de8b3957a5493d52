"""Strips, edge distance, metric densities and the smallness hypothesis.

The strip is normalised to ``{0 < Im z < height}``; ``height = inf`` stands for
the infinite bicorn, where the edge distance is infinite and the Thurston
density is constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .expr import PotentialExpr, evaluate_many

GRID_LIMIT = 10**8


class OutsideDomainError(ValueError):
    pass


@dataclass(frozen=True)
class Strip:
    height: float = math.pi

    def __post_init__(self):
        h = float(self.height)
        if math.isnan(h) or h < math.pi:
            raise ValueError(f"strip height must be >= pi or inf, got {self.height!r}")
        object.__setattr__(self, "height", h)

    @property
    def infinite(self) -> bool:
        return math.isinf(self.height)

    @property
    def midline(self) -> float:
        return math.pi if self.infinite else self.height / 2

    def contains(self, z) -> np.ndarray | bool:
        im = np.imag(z)
        inside = (im > 0) & (im < self.height)
        return bool(inside) if np.ndim(inside) == 0 else inside

    def require(self, z) -> None:
        if not np.all(self.contains(z)):
            zs = np.atleast_1d(np.asarray(z, dtype=complex))
            first = zs[~np.atleast_1d(self.contains(zs))][0]
            raise OutsideDomainError(f"point {complex(first)!r} is not inside {self}")


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    x_min: float
    x_max: float
    edge_margin: float
    # Upper bound of the sampled band for infinite strips (finite strips use
    # height - edge_margin).
    y_max: float | None = None

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid counts must be positive")
        if self.nx * self.ny > GRID_LIMIT:
            raise ValueError("grid larger than 1e8 points")
        if not self.x_max >= self.x_min:
            raise ValueError("x_max must be >= x_min")
        if not self.edge_margin > 0:
            raise ValueError("edge_margin must be positive")

    def y_range(self, strip: Strip) -> tuple[float, float]:
        if not strip.infinite and self.edge_margin >= strip.height / 2:
            raise ValueError("edge_margin must be below height/2")
        lo = self.edge_margin
        if strip.infinite:
            hi = self.y_max if self.y_max is not None else 2 * math.pi
        else:
            hi = strip.height - self.edge_margin
            if self.y_max is not None:
                hi = min(hi, self.y_max)
        return lo, hi

    def points(self, strip: Strip) -> np.ndarray:
        """Grid points, x varying slowest: shape (nx * ny,)."""
        lo, hi = self.y_range(strip)
        xs = np.linspace(self.x_min, self.x_max, self.nx)
        ys = np.linspace(lo, hi, self.ny)
        return (xs[:, None] + 1j * ys[None, :]).ravel()


def edge_distance(strip: Strip, z) -> float | np.ndarray:
    """Distance to the nearer edge; infinite for the infinite bicorn."""
    strip.require(z)
    im = np.imag(z)
    if strip.infinite:
        ell = np.full(np.shape(im), np.inf)
    else:
        ell = np.minimum(im, strip.height - im)
    return float(ell) if np.ndim(ell) == 0 else ell


def thurston_factor_from_ell(ell):
    ell = np.asarray(ell, dtype=float)
    with np.errstate(divide="ignore"):
        w = np.where(ell <= math.pi / 2, 1.0 / (2.0 * np.sin(np.minimum(ell, math.pi / 2))), 0.5)
    return float(w) if w.ndim == 0 else w


def thurston_factor(strip: Strip, z):
    """Thurston density ``w`` with metric ``w^2 |dz|^2``."""
    return thurston_factor_from_ell(edge_distance(strip, z))


def hyperbolic_factor_bicorn_disk(u):
    """Hyperbolic (curvature -4) density on ``{0 < Im u < pi}``."""
    im = np.imag(u)
    if not np.all((im > 0) & (im < math.pi)):
        raise OutsideDomainError("point outside the bicorn disk 0 < Im u < pi")
    w = 1.0 / (2.0 * np.sin(im))
    return float(w) if np.ndim(w) == 0 else w


def half_plane_factor(w):
    """Hyperbolic (curvature -4) density ``1/(2 Im w)`` on the upper half-plane."""
    return 1.0 / (2.0 * np.imag(w))


@dataclass(frozen=True)
class HypothesisReport:
    m: float
    worst_ratio: float
    worst_point: complex
    passed: bool
    samples: int
    pole_hit: bool = False

    def to_json(self) -> dict:
        ratio = self.worst_ratio if math.isfinite(self.worst_ratio) else None
        return {
            "m": self.m,
            "worst_ratio": ratio,
            "worst_point": [self.worst_point.real, self.worst_point.imag],
            "pass": self.passed,
            "samples": self.samples,
        }


def hypothesis_ratio(p_abs, ell, M: float):
    """``|p/2| / (M w^2)``: below one iff the smallness bound holds."""
    w = thurston_factor_from_ell(ell)
    return (np.asarray(p_abs) / 2.0) / (M * np.asarray(w) ** 2)


def bound_analytic(p, w, M: float):
    """Smallness bound in operator form: ``|p/2| < M w^2``."""
    return np.abs(p) / 2 < M * w**2


def bound_geometric(eps, lam, M: float):
    """Same bound for the quadratic differential ``eps = -p dz^2``: ``|eps| < 2 M lam^2``."""
    return np.abs(eps) < 2 * M * lam**2


def check_hypothesis(strip: Strip, p: PotentialExpr, M: float, grid: GridSpec) -> HypothesisReport:
    """Grid check of ``|p/2| < M w_T^2``.

    Ties for the worst point are broken by the smallest ``(Re z, Im z)``.
    A pole-proximity condition at any grid point fails the check outright.
    """
    if not 0 < M <= 1:
        raise ValueError("M must lie in (0, 1]")
    zs = grid.points(strip)
    strip.require(zs)
    values, near_pole = evaluate_many(p, zs)
    n = zs.size
    if near_pole.any():
        cand = zs[near_pole]
        k = np.lexsort((cand.imag, cand.real))[0]
        return HypothesisReport(float(M), math.inf, complex(cand[k]), False, n, pole_hit=True)
    ratio = hypothesis_ratio(np.abs(values), edge_distance(strip, zs), M)
    worst = ratio.max()
    tied = np.flatnonzero(ratio == worst)
    k = tied[np.lexsort((zs[tied].imag, zs[tied].real))[0]]
    return HypothesisReport(float(M), float(worst), complex(zs[k]), bool(worst < 1.0), n)
