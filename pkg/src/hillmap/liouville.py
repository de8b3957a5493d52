"""The normalised Liouville coordinate ``y`` and the checks built on it.

Construction
------------
``y = log(psit/psi)`` for a Wronskian-one pair where ``psit`` is the solution
that decays towards the left tip and ``psi`` the one decaying towards the
right tip.  Both are carried in log-derivative form:

* the *left sweep* integrates ``(ut, log psit)`` along the midline from the
  left anchor ``z- = -L + i m`` rightwards;
* the *right sweep* integrates ``(u, log psi)`` from ``z+ = +L + i m``
  leftwards.

Each sweep runs in the direction in which its Riccati equation is
contracting, so integration errors are damped instead of amplified.  The
anchor data use the potential frozen at the anchor, ``ut(z-) = kappa(z-)``
and ``u(z+) = -kappa(z+)`` with ``kappa = sqrt(1/4 + p/2)``; this is the free
pair when ``p`` has decayed and is exact for constant ``p``.

The gauge is fixed by ``y(z-) = z-``.  A query point is reached from the
nearest stored sweep node on the stable side by a short horizontal hop
followed by a vertical leg (midline first, so paths stay away from the edges
for as long as possible).

Beyond the anchors (``|Re z| > L``) one sweep has no node on its stable side
and is continued against its contraction, so the anchor-data error grows like
``exp(2 kappa (|Re z| - L))``.  Keep query grids inside ``[-L, L]``.
"""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.spatial import cKDTree

from .expr import PotentialExpr, evaluate_many as eval_p
from .geometry import GridSpec, Strip
from .hyperbolic import fd_derivatives
from .ode import (
    HillState,
    IntegratorConfig,
    PathPolyline,
    integrate,
    integrate_segments,
    jet_system,
    riccati_system,
)

DECAY_TAU = 1e-8
TAIL_SPAN = 20.0
FD_SUBSTEPS = 2
EPS = np.finfo(float).eps


class DecayError(ValueError):
    """The potential has not decayed at the anchors."""


class StencilError(ValueError):
    pass


class CancellationError(StencilError):
    pass


@dataclass
class _Sweep:
    xs: np.ndarray  # node abscissae, increasing
    w: np.ndarray  # log-derivative at the nodes
    W: np.ndarray  # log of the solution, zero at the sweep's own anchor
    rightward: bool  # stable direction


def _sweep(p, z_from: complex, z_to: complex, w0: complex, cfg) -> _Sweep:
    res = integrate_segments(riccati_system(p), np.array([[w0], [0.0]]), z_from, z_to, cfg, record=True)
    zs, ys = res.trace[0]
    xs = zs.real.copy()
    w, W = ys[0].copy(), ys[1].copy()
    rightward = z_to.real > z_from.real
    if not rightward:
        xs, w, W = xs[::-1].copy(), w[::-1].copy(), W[::-1].copy()
    return _Sweep(xs, w, W, rightward)


def _kappa(p: PotentialExpr, z: complex) -> complex:
    v, bad = eval_p(p, np.array([z]))
    if bad.any():
        raise ValueError(f"potential not evaluable at anchor {z!r}")
    return complex(np.sqrt(0.25 + 0.5 * v[0]))


@dataclass
class LiouvilleMap:
    strip: Strip
    p: PotentialExpr
    anchor_re: float
    midline_im: float
    cfg: IntegratorConfig
    normalization_error_estimate: float
    decays: bool
    _left: _Sweep = field(repr=False)
    _right: _Sweep = field(repr=False)
    cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def z_minus(self) -> complex:
        return complex(-self.anchor_re, self.midline_im)

    @property
    def z_plus(self) -> complex:
        return complex(self.anchor_re, self.midline_im)

    # -- raw solutions ---------------------------------------------------

    def _continue(self, sweep: _Sweep, zs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(w, W) at ``zs`` continued from the nearest node on the stable side."""
        x = zs.real
        n = sweep.xs.size
        if sweep.rightward:
            k = np.clip(np.searchsorted(sweep.xs, x, side="right") - 1, 0, n - 1)
        else:
            k = np.clip(np.searchsorted(sweep.xs, x, side="left"), 0, n - 1)
        start = sweep.xs[k] + 1j * self.midline_im
        state = np.vstack([sweep.w[k], sweep.W[k]])
        rhs = riccati_system(self.p)
        mid = x + 1j * self.midline_im
        state = integrate_segments(rhs, state, start, mid, self.cfg).y
        state = integrate_segments(rhs, state, mid, zs, self.cfg).y
        return state[0], state[1]

    def _compute(self, zs: np.ndarray) -> np.ndarray:
        ut, Yt = self._continue(self._left, zs)
        u, Y = self._continue(self._right, zs)
        r = self._right
        Y_minus = r.W[0]  # log psi at the left anchor, relative to z+
        u_minus = r.w[0]
        y = self.z_minus + Yt - (Y - Y_minus)
        sq_minus = np.sqrt(self._left.w[0] - u_minus)
        sq = sq_minus * np.exp(-0.5 * (Yt + (Y - Y_minus)))
        return np.vstack([ut, u, y, sq])

    def local_data(self, zs) -> dict[str, np.ndarray]:
        """``ut, u, y, sqrt_yp`` at ``zs`` (log-derivatives, coordinate, tracked ``y_z^{1/2}``)."""
        zs = np.atleast_1d(np.asarray(zs, dtype=complex))
        self.strip.require(zs)
        missing = [z for z in dict.fromkeys(zs.tolist()) if z not in self.cache]
        if missing:
            vals = self._compute(np.array(missing))
            with self._lock:
                for i, z in enumerate(missing):
                    self.cache[z] = vals[:, i]
        out = np.array([self.cache[z] for z in zs.tolist()]).T
        return {"ut": out[0], "u": out[1], "y": out[2], "sqrt_yp": out[3]}

    # -- public evaluation -------------------------------------------------

    def evaluate_many(self, zs) -> np.ndarray:
        return self.local_data(zs)["y"]

    def derivative_many(self, zs) -> np.ndarray:
        d = self.local_data(zs)
        return d["ut"] - d["u"]

    def hill_state(self, z: complex) -> HillState:
        """Wronskian-one pair at ``z``: ``psi = e^{-y/2}/sqrt(y')``, ``psit = e^{y/2}/sqrt(y')``."""
        d = {k: v[0] for k, v in self.local_data([z]).items()}
        # sqrt(ut - u) on the tracked branch makes the Wronskian one to roundoff.
        sq = np.sqrt(d["ut"] - d["u"])
        if abs(sq - d["sqrt_yp"]) > abs(sq + d["sqrt_yp"]):
            sq = -sq
        psi = np.exp(-d["y"] / 2) / sq
        psit = np.exp(d["y"] / 2) / sq
        return HillState(complex(z), psi, d["u"] * psi, psit, d["ut"] * psit, d["y"])


def _tail_check(p: PotentialExpr, L: float, m: float, tau: float) -> tuple[bool, float]:
    """Sample |p| on the midline beyond both anchors; return (decays, tail integral)."""
    s = np.linspace(0.0, TAIL_SPAN, 81)
    worst, total, monotone = 0.0, 0.0, True
    for xs in (-L - s, L + s):
        v, bad = eval_p(p, xs + 1j * m)
        if bad.any():
            return False, math.inf
        a = np.abs(v)
        worst = max(worst, float(a.max()))
        monotone &= bool(np.all(np.diff(a) <= 1e-300 + 1e-12 * a[:-1]))
        total += float(trapezoid(a, s))
    decays = worst < tau
    return decays, (total if monotone else math.nan)


def construct_map(
    strip: Strip,
    p: PotentialExpr,
    L: float = 25.0,
    cfg: IntegratorConfig | None = None,
    *,
    midline_im: float | None = None,
    allow_no_decay: bool = False,
    tau: float = DECAY_TAU,
) -> LiouvilleMap:
    cfg = cfg or IntegratorConfig()
    if not L > 0:
        raise ValueError("anchor distance L must be positive")
    m = strip.midline if midline_im is None else float(midline_im)
    z_minus, z_plus = complex(-L, m), complex(L, m)
    strip.require(np.array([z_minus, z_plus]))
    decays, tail = _tail_check(p, L, m, tau)
    if not decays and not allow_no_decay:
        raise DecayError(f"|p| on the midline beyond +-{L} is not below {tau:g}; pass allow_no_decay to proceed")
    estimate = tail if decays and math.isfinite(tail) else tau * L
    left = _sweep(p, z_minus, z_plus, _kappa(p, z_minus), cfg)
    right = _sweep(p, z_plus, z_minus, -_kappa(p, z_plus), cfg)
    return LiouvilleMap(strip, p, float(L), m, cfg, float(estimate), decays, left, right)


def evaluate_y(lmap: LiouvilleMap, z: complex) -> complex:
    return complex(lmap.evaluate_many([z])[0])


def y_along_path(lmap: LiouvilleMap, path: PathPolyline) -> complex:
    """``y`` at the end of ``path`` by transporting the Hill jet from its start."""
    start = lmap.hill_state(path.vertices[0])
    return integrate(lmap.p, start, path, lmap.cfg).final.y


# ------------------------------------------------------------------ stencils


def _stencil(lmap: LiouvilleMap, zs: np.ndarray, h: float) -> dict[str, np.ndarray]:
    """Jet values at ``z + k h`` for k = -2..2, each shaped (5, n)."""
    if not h > 0:
        raise StencilError("fd_step must be positive")
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    if not lmap.strip.infinite:
        ok = (zs.imag - 4 * h > 0) & (zs.imag + 4 * h < lmap.strip.height)
    else:
        ok = zs.imag - 4 * h > 0
    if not ok.all():
        raise StencilError(f"stencil of radius {4 * h:g} leaves the strip at {complex(zs[~ok][0])!r}")
    d = lmap.local_data(zs)
    n = zs.size
    offs = np.array([-2, -1, 1, 2]) * h
    zc = np.repeat(zs, 4)
    y0 = np.vstack([np.repeat(d["u"], 4), np.repeat(d["ut"], 4), np.zeros(4 * n), np.zeros(4 * n)])
    dz = np.tile(offs, n)
    res = integrate_segments(jet_system(lmap.p), y0, zc, None, lmap.cfg, fixed_steps=FD_SUBSTEPS, dz=dz)
    jet = res.y.reshape(4, n, 4)  # component, point, offset
    out = {}
    for name, comp, centre in (("u", 0, d["u"]), ("ut", 1, d["ut"]), ("dy", 2, 0 * d["y"]), ("lam", 3, 0 * d["y"])):
        vals = jet[comp]
        out[name] = np.vstack([vals[:, 0], vals[:, 1], centre, vals[:, 2], vals[:, 3]])
    out["centre"] = d
    return out


@dataclass(frozen=True)
class SchwarzianProbe:
    residual: np.ndarray
    yprime_error: np.ndarray  # |y'_FD - 1/(psi psit)|
    schwarzian: np.ndarray


def schwarzian_probe(lmap: LiouvilleMap, zs, fd_step: float = 1e-3) -> SchwarzianProbe:
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    st = _stencil(lmap, zs, fd_step)
    d1, d2, d3 = fd_derivatives(st["dy"], fd_step)
    small = np.abs(d1) < 1e3 * EPS / fd_step
    if small.any():
        raise CancellationError(f"y' too small for fd_step {fd_step:g} at {complex(zs[small][0])!r}")
    S = d3 / d1 - 1.5 * (d2 / d1) ** 2
    pz, _ = eval_p(lmap.p, zs)
    residual = np.abs(S - (0.5 * d1**2 - 0.5 - pz))
    c = st["centre"]
    closed = c["sqrt_yp"] ** 2  # = 1/(psi psit)
    return SchwarzianProbe(residual, np.abs(d1 - closed), S)


def schwarzian_residual(lmap: LiouvilleMap, z: complex, fd_step: float = 1e-3) -> float:
    return float(schwarzian_probe(lmap, [z], fd_step).residual[0])


def operator_identity_residuals(lmap: LiouvilleMap, zs, a: complex, fd_step: float = 1e-3) -> np.ndarray:
    """``|H phi - y'^{3/2} (d_y^2 - 1/4)(y'^{1/2} phi)| / |phi(z)|`` for ``phi = exp(a z)``.

    The residual is linear in ``phi``, so dividing by ``|phi(z)|`` is the same
    as probing with ``exp(a (w - z))``; this keeps the check scale-free when
    ``|Re(a z)|`` is large.
    """
    if abs(a) > 1:
        raise ValueError("|a| must be <= 1")
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    st = _stencil(lmap, zs, fd_step)
    k = np.arange(-2, 3)[:, None] * fd_step
    phi = np.exp(a * k) * np.ones_like(st["dy"])
    sq = st["centre"]["sqrt_yp"] * np.exp(st["lam"])
    g = sq * phi
    yp = st["ut"] - st["u"]
    _, phi2, _ = fd_derivatives(phi, fd_step)
    g1, g2, _ = fd_derivatives(g, fd_step)
    yp1, _, _ = fd_derivatives(yp, fd_step)
    pz, _ = eval_p(lmap.p, zs)
    y1 = yp[2]
    lhs = phi2 - (0.25 + 0.5 * pz) * phi[2]
    rhs = sq[2] ** 3 * (g2 / y1**2 - g1 * yp1 / y1**3 - 0.25 * g[2])
    return np.abs(lhs - rhs)


def operator_identity_residual(lmap: LiouvilleMap, z: complex, a: complex, fd_step: float = 1e-3) -> float:
    return float(operator_identity_residuals(lmap, [z], a, fd_step)[0])


# -------------------------------------------------------------- displacement


@dataclass(frozen=True)
class DisplacementCheck:
    m_start: complex
    m_end: complex
    r: complex
    r_prime: complex
    j: int
    bound: float
    deviation: float
    passed: bool

    def to_json(self) -> dict:
        c = lambda v: [v.real, v.imag]  # noqa: E731
        return {"m_start": c(self.m_start), "m_end": c(self.m_end), "r": c(self.r),
                "r_prime": c(self.r_prime), "j": self.j, "bound": self.bound,
                "deviation": self.deviation, "pass": self.passed}


def displacement_j(r) -> np.ndarray:
    """Least ``j >= 1`` with ``|Im r| <= j pi``."""
    return np.maximum(1, np.ceil(np.abs(np.imag(r)) / math.pi)).astype(np.int64)


def displacement_bound(M: float, r) -> np.ndarray:
    return (2 * M / (1 - M)) * (np.abs(np.real(r)) + 1.5 * displacement_j(r) * math.pi)


@dataclass(frozen=True)
class DisplacementSweep:
    r: np.ndarray
    r_prime: np.ndarray
    j: np.ndarray
    bound: np.ndarray
    deviation: np.ndarray

    @property
    def passed(self) -> np.ndarray:
        return self.deviation <= self.bound

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.deviation / self.bound)) if self.r.size else 0.0


def displacement_sweep(lmap: LiouvilleMap, M: float, starts, ends) -> DisplacementSweep:
    if not 0 < M < 1:
        raise ValueError("M must lie in (0, 1)")
    starts = np.asarray(starts, dtype=complex)
    ends = np.asarray(ends, dtype=complex)
    y = lmap.evaluate_many(np.concatenate([starts, ends]))
    r = ends - starts
    rp = y[starts.size:] - y[: starts.size]
    return DisplacementSweep(r, rp, displacement_j(r), displacement_bound(M, r), np.abs(rp - r))


def displacement_check(lmap: LiouvilleMap, M: float, m_start: complex, m_end: complex) -> DisplacementCheck:
    s = displacement_sweep(lmap, M, [m_start], [m_end])
    return DisplacementCheck(complex(m_start), complex(m_end), complex(s.r[0]), complex(s.r_prime[0]),
                             int(s.j[0]), float(s.bound[0]), float(s.deviation[0]), bool(s.passed[0]))


# ------------------------------------------------------------------- rigidity


def translation_gauge(map_a: LiouvilleMap, map_b: LiouvilleMap, sample_points) -> tuple[complex, float]:
    zs = np.atleast_1d(np.asarray(sample_points, dtype=complex))
    diff = map_a.evaluate_many(zs) - map_b.evaluate_many(zs)
    c = complex(np.mean(diff))
    return c, float(np.max(np.abs(diff - c)))


@dataclass(frozen=True)
class EmbeddingReport:
    injective: bool
    witness: tuple[complex, complex] | None
    midline_increasing: bool
    tip_trend: bool
    c_gauge: complex
    max_offset: float
    samples: int

    @property
    def passed(self) -> bool:
        return self.injective and self.midline_increasing and self.tip_trend and math.isfinite(self.max_offset)

    def to_json(self) -> dict:
        w = None if self.witness is None else [[z.real, z.imag] for z in self.witness]
        return {"injective": self.injective, "witness": w, "midline_increasing": self.midline_increasing,
                "tip_trend": self.tip_trend, "c_gauge": [self.c_gauge.real, self.c_gauge.imag],
                "max_offset": self.max_offset if math.isfinite(self.max_offset) else None,
                "samples": self.samples, "pass": self.passed}


def embedding_probe(lmap, grid: GridSpec, sep: float = 0.1, img_tol: float = 1e-3) -> EmbeddingReport:
    """Sampled injectivity, tip behaviour and boundedness of ``y - z``.

    ``lmap`` only needs ``strip``, ``midline_im`` and ``evaluate_many``.
    Tip trend: the mean slope of ``Re y`` along the midline over each outer
    quarter of the grid is at least 1/2 (the free map has slope 1).
    """
    zs = grid.points(lmap.strip)
    y = np.asarray(lmap.evaluate_many(zs))
    if not np.all(np.isfinite(y)):
        bad = zs[~np.isfinite(y)][0]
        return EmbeddingReport(False, (complex(bad), complex(bad)), False, False, 0j, math.inf, zs.size)

    tree = cKDTree(np.column_stack([y.real, y.imag]))
    witness = None
    for i, j in sorted(tree.query_pairs(img_tol)):
        if abs(zs[i] - zs[j]) >= sep:
            witness = (complex(zs[i]), complex(zs[j]))
            break

    xs = np.linspace(grid.x_min, grid.x_max, max(grid.nx, 8))
    ym = np.asarray(lmap.evaluate_many(xs + 1j * lmap.midline_im)).real
    increasing = bool(np.all(np.diff(ym) > 0))
    q = max(1, xs.size // 4)
    span = xs[q] - xs[0]
    trend = bool(span > 0 and (ym[q] - ym[0]) / span >= 0.5 and (ym[-1] - ym[-1 - q]) / span >= 0.5)

    off = y - zs
    c = complex(np.mean(off))
    return EmbeddingReport(witness is None, witness, increasing, trend, c, float(np.max(np.abs(off - c))), zs.size)


# ----------------------------------------------------------------------- dump

MAP_CSV_COLUMNS = ("re_z", "im_z", "re_y", "im_y", "re_yp", "im_yp")


def write_map_csv(lmap: LiouvilleMap, grid: GridSpec, fh) -> int:
    zs = grid.points(lmap.strip)
    d = lmap.local_data(zs)
    yp = d["ut"] - d["u"]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(MAP_CSV_COLUMNS)
    for z, y, q in zip(zs, d["y"], yp):
        w.writerow([repr(float(v)) for v in (z.real, z.imag, y.real, y.imag, q.real, q.imag)])
    return zs.size
