"""Mobius maps, cross ratios, quasiconformal constants and the tract metric.

The tract metric is ``|dz| / (2 (|Re z| + 3 pi/2))``.  On each closed
half-plane ``Re z >= 0`` / ``Re z <= 0`` it is a curvature -4 half-plane
metric in the variable ``X = |Re z| + 3 pi/2``; the two halves are glued
along the imaginary axis.  Distances are estimated by polyline search.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize

TRACT_A = 1.5 * math.pi
INF = complex(math.inf, 0.0)
EPS = np.finfo(float).eps


def is_inf(z) -> bool:
    return cmath.isinf(complex(z))


# -------------------------------------------------------------------- Mobius


@dataclass(frozen=True)
class Mobius:
    """``z -> (a z + b)/(c z + d)`` normalised to ``ad - bc = 1``."""

    a: complex
    b: complex
    c: complex
    d: complex

    def __post_init__(self):
        a, b, c, d = (complex(v) for v in (self.a, self.b, self.c, self.d))
        det = a * d - b * c
        if det == 0 or not cmath.isfinite(det):
            raise ValueError("degenerate Mobius coefficients")
        s = cmath.sqrt(det)
        for name, v in zip("abcd", (a, b, c, d)):
            object.__setattr__(self, name, v / s)

    @classmethod
    def identity(cls) -> "Mobius":
        return cls(1, 0, 0, 1)

    @property
    def det(self) -> complex:
        return self.a * self.d - self.b * self.c

    def __call__(self, z):
        z = complex(z)
        if is_inf(z):
            return self.a / self.c if self.c != 0 else INF
        den = self.c * z + self.d
        if den == 0:
            return INF
        return (self.a * z + self.b) / den

    def compose(self, other: "Mobius") -> "Mobius":
        """``self o other``."""
        return Mobius(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )

    def inverse(self) -> "Mobius":
        return Mobius(self.d, -self.b, -self.c, self.a)

    def derivative(self, z):
        return 1.0 / (self.c * z + self.d) ** 2


def cross_ratio(z0, z1, z2, z3) -> complex:
    """``((z2 - z0)/(z1 - z0)) ((z1 - z3)/(z2 - z3))`` on the Riemann sphere.

    With this convention ``cross_ratio(0, w1, w2, inf) = w2/w1``.  A point at
    infinity cancels between the two factors it appears in, so both are
    dropped.
    """
    pts = [complex(z) for z in (z0, z1, z2, z3)]
    for i in range(4):
        for j in range(i + 1, 4):
            same = (is_inf(pts[i]) and is_inf(pts[j])) or pts[i] == pts[j]
            if same:
                raise ValueError("cross ratio needs four distinct points")
    z0, z1, z2, z3 = pts
    if not any(is_inf(z) for z in pts):
        return ((z2 - z0) / (z1 - z0)) * ((z1 - z3) / (z2 - z3))
    out = complex(1.0)
    for u, v in ((z2, z0), (z1, z3)):
        if not (is_inf(u) or is_inf(v)):
            out *= u - v
    for u, v in ((z1, z0), (z2, z3)):
        if not (is_inf(u) or is_inf(v)):
            out /= u - v
    return out


def exp_displacement(r):
    return np.exp(r) if isinstance(r, np.ndarray) else cmath.exp(r)


# ----------------------------------------------------- quasiconformal constants


def beltrami_path(mu: complex, a: float) -> complex:
    """``mu_a = (mu/|mu|) tanh(a artanh|mu|)``, with ``mu_a = 0`` where ``mu = 0``."""
    mu = complex(mu)
    m = abs(mu)
    if not m < 1:
        raise ValueError("|mu| must be < 1")
    if not 0 <= a <= 1:
        raise ValueError("a must lie in [0, 1]")
    if m == 0:
        return 0j
    if a == 1:
        return mu
    return (mu / m) * math.tanh(a * math.atanh(m))


@dataclass(frozen=True)
class QcConstants:
    M: float
    K: float
    cr_distortion: float

    def step_dilatation(self, a: float, b: float) -> float:
        """``K^{|b-a|}`` for the homotopy between times a and b."""
        return self.K ** abs(b - a)

    def step_beltrami_bound(self, a: float, b: float) -> float:
        return math.tanh(abs(b - a) * math.atanh(self.M))


def qc_constants(M: float) -> QcConstants:
    if not 0 < M < 1:
        raise ValueError("M must lie in (0, 1)")
    q = 2 * M / (1 - M)  # K - 1, written so that M = 1/3 gives K = 2 exactly
    return QcConstants(float(M), 1.0 + q, 0.5 * math.log1p(q))


def euclid_ball_bound(K: float, r: complex) -> float:
    """Euclidean radius ``(K - 1)(|Re r| + 3 pi/2)`` containing the tract ball of radius ``log(K)/2``."""
    if not K > 1:
        raise ValueError("K must exceed 1")
    return (K - 1) * (abs(complex(r).real) + TRACT_A)


# ---------------------------------------------------------------- tract metric


def tract_factor(z):
    return 1.0 / (2.0 * (np.abs(np.real(z)) + TRACT_A))


def _half_length(x0: float, x1: float) -> float:
    """``int_0^1 dt / X(t)`` for ``X`` linear from ``x0`` to ``x1`` (both > 0)."""
    d = (x1 - x0) / x0
    if abs(d) < 1e-8:
        return (1 - d / 2 + d * d / 3) / x0
    return math.log1p(d) / (x1 - x0)


def tract_segment_length(z0: complex, z1: complex) -> float:
    """Closed-form tract length of the straight segment ``z0 -> z1``."""
    z0, z1 = complex(z0), complex(z1)
    ell = abs(z1 - z0)
    if ell == 0:
        return 0.0
    x0, x1 = z0.real, z1.real
    if x0 * x1 < 0:
        t = -x0 / (x1 - x0)
        return (t * _half_length(abs(x0) + TRACT_A, TRACT_A)
                + (1 - t) * _half_length(TRACT_A, abs(x1) + TRACT_A)) * ell / 2
    return _half_length(abs(x0) + TRACT_A, abs(x1) + TRACT_A) * ell / 2


def tract_polyline_length(vertices) -> float:
    total = 0.0
    for k in range(len(vertices) - 1):
        total += tract_segment_length(vertices[k], vertices[k + 1])
    return total


class QuadratureError(RuntimeError):
    pass


def polyline_length(factor: Callable, vertices, epsrel: float = 1e-8) -> float:
    """``int factor |dz|`` along a polyline by adaptive quadrature per segment."""
    vs = [complex(v) for v in getattr(vertices, "vertices", vertices)]
    total = 0.0
    for a, b in zip(vs, vs[1:]):
        dz = b - a
        ell = abs(dz)
        if ell == 0:
            continue
        pts = None
        if a.real * b.real < 0:  # density kinks on the imaginary axis
            pts = [-a.real / dz.real]
        val, err, info = quad(lambda t: float(factor(a + t * dz)), 0.0, 1.0, epsabs=0.0,
                              epsrel=epsrel, limit=200, points=pts, full_output=True)[:3]
        if not math.isfinite(val) or err > max(10 * epsrel * abs(val), 1e-300):
            raise QuadratureError(f"quadrature did not converge on segment {a!r} -> {b!r}")
        total += val * ell
    return total


def tract_distance_exact_same_side(a: complex, b: complex) -> float:
    """Exact tract distance for points in the same closed half-plane.

    Reflection in the imaginary axis is an isometry, so a geodesic between
    points on one side never gains by crossing; on that side the metric is
    the curvature -4 half-plane metric in ``(|x| + 3 pi/2, y)``.
    """
    if a.real * b.real < 0:
        raise ValueError("points lie on opposite sides of the imaginary axis")
    X1, X2 = abs(a.real) + TRACT_A, abs(b.real) + TRACT_A
    d2 = (X1 - X2) ** 2 + (a.imag - b.imag) ** 2
    return 0.5 * math.acosh(1 + d2 / (2 * X1 * X2))


@dataclass(frozen=True)
class SearchConfig:
    levels: tuple[int, ...] = (1, 3, 7)
    xatol: float = 1e-7  # relative to |b - a|
    fatol: float = 1e-11
    maxiter_per_dim: int = 400


@dataclass(frozen=True)
class TractDistance:
    value: float
    converged: bool
    level_values: tuple[float, ...]
    straight: float
    label: str = "upper bound estimate"


def _control_points(a: complex, b: complex, stations, offsets) -> list[complex]:
    dz = b - a
    normal = 1j * dz / abs(dz)
    return [a] + [a + s * dz + o * normal for s, o in zip(list(stations), list(offsets))] + [b]


def _objective(a: complex, b: complex, stations: np.ndarray):
    dz = b - a
    normal = 1j * dz / abs(dz)
    base = [a + float(s) * dz for s in stations]

    def f(o):
        pts = [a] + [c + ok * normal for c, ok in zip(base, o.tolist())] + [b]
        return tract_polyline_length(pts)

    return f


def tract_distance(a: complex, b: complex, search: SearchConfig | None = None) -> TractDistance:
    """Shortest tract length over polylines ``a -> b`` with n interior points.

    Interior points sit at stations ``k/(n+1)`` and move perpendicular to the
    chord.  Levels are nested (each refines the previous optimum exactly), so
    the per-level values never increase.
    """
    search = search or SearchConfig()
    a, b = complex(a), complex(b)
    if a == b:
        return TractDistance(0.0, True, tuple(0.0 for _ in search.levels), 0.0)
    straight = tract_segment_length(a, b)
    best, stations, offsets = straight, np.array([]), np.array([])
    values, converged = [], True
    for n in search.levels:
        new_st = np.arange(1, n + 1) / (n + 1)
        # Previous polyline sampled at the new stations.
        guess = np.interp(new_st, np.concatenate([[0.0], stations, [1.0]]),
                          np.concatenate([[0.0], offsets, [0.0]]))
        f = _objective(a, b, new_st)
        res = minimize(f, guess, method="Nelder-Mead",
                       options={"xatol": search.xatol * abs(b - a), "fatol": search.fatol,
                                "maxiter": search.maxiter_per_dim * n, "maxfev": 2 * search.maxiter_per_dim * n,
                                "initial_simplex": _simplex(guess, abs(b - a))})
        converged &= bool(res.success)
        if res.fun <= best:
            best, offsets = float(res.fun), np.asarray(res.x)
        else:
            offsets = guess
        stations = new_st
        values.append(best)
    return TractDistance(best, converged, tuple(values), straight)


def _simplex(x0: np.ndarray, scale: float) -> np.ndarray:
    n = x0.size
    step = 0.05 * scale
    return np.vstack([x0] + [x0 + step * np.eye(n)[k] for k in range(n)])


# ------------------------------------------------------- finite differences


def fd_derivatives(v: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """5-point central differences; ``v`` has the stencil on axis 0 (k = -2..2)."""
    m2, m1, c, p1, p2 = v
    d1 = (m2 - 8 * m1 + 8 * p1 - p2) / (12 * h)
    d2 = (-m2 + 16 * m1 - 30 * c + 16 * p1 - p2) / (12 * h * h)
    d3 = (-m2 + 2 * m1 - 2 * p1 + p2) / (2 * h**3)
    return d1, d2, d3


class SchwarzianFDError(ValueError):
    pass


def schwarzian_fd(f: Callable, z, h: float = 1e-3):
    """``f'''/f' - 3/2 (f''/f')^2`` from a 5-point stencil along the real direction."""
    if not h > 0:
        raise SchwarzianFDError("h must be positive")
    z = np.asarray(z, dtype=complex)
    k = np.arange(-2, 3).reshape((5,) + (1,) * z.ndim)
    v = np.asarray(f(z + k * h), dtype=complex)
    if not np.all(np.isfinite(v)):
        raise SchwarzianFDError("f is not finite on the stencil")
    d1, d2, d3 = fd_derivatives(v, h)
    if np.any(np.abs(d1) < 1e3 * EPS / h):
        raise SchwarzianFDError("f' too small for this step (cancellation)")
    s = d3 / d1 - 1.5 * (d2 / d1) ** 2
    return complex(s) if s.ndim == 0 else s
