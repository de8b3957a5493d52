"""Integration of the Hill system along straight segments and polylines.

The Hill equation is ``psi'' = (1/4 + p/2) psi``.  Two formulations are used:

* the linear 5-component jet ``(psi, psi', psit, psit', y)`` with
  ``y' = 1/(psi psit)``, integrated by :func:`integrate` along a
  :class:`PathPolyline`;
* the log-derivative (Riccati) form ``w' = Q - w^2``, ``W' = w`` with
  ``w = psi'/psi`` and ``W = log psi``, which stays O(1) where the linear
  solutions grow or decay exponentially.  The Liouville map is built on it.

Both run on :func:`integrate_segments`, an embedded Dormand-Prince pair
(8(5,3) by default, 5(4) on request) with PI step control that advances many
independent lanes at once.  Each lane keeps
its own step size, so a lane's result does not depend on which other lanes
share the batch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .expr import PoleProximityError, PotentialExpr, evaluate_many
from .geometry import Strip

ZERO_PRODUCT = 1e-30
RICCATI_BLOWUP = 1e8


class IntegrationError(RuntimeError):
    def __init__(self, message: str, z: complex | None = None):
        self.z = None if z is None else complex(z)
        if z is not None:
            message = f"{message} near z = {self.z!r}"
        super().__init__(message)


class StepLimitError(IntegrationError):
    pass


class StepUnderflowError(IntegrationError):
    pass


class ZeroCrossingError(IntegrationError):
    """A Hill solution vanished, so the logarithmic coordinate breaks down."""


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-10
    atol: float = 1e-12
    h_init: float = 1e-2
    h_max: float = 0.5
    max_steps: int = 1_000_000
    method: str = "dop853"

    def __post_init__(self):
        if self.method not in ("dop853", "dopri5"):
            raise ValueError(f"unknown method {self.method!r}")
        if not 0 < self.rtol <= 1e-3:
            raise ValueError("rtol must lie in (0, 1e-3]")
        if not self.atol > 0:
            raise ValueError("atol must be positive")
        if not (self.h_init > 0 and self.h_max > 0):
            raise ValueError("step bounds must be positive")
        if not 0 < self.max_steps <= 10**7:
            raise ValueError("max_steps must lie in (0, 1e7]")


@dataclass(frozen=True)
class Tableau:
    """Explicit embedded Runge-Kutta pair with a first-same-as-last stage.

    ``a`` has one row per stage after the first; ``b`` are the solution
    weights; ``e`` (and optionally ``e3``) give the error estimate from all
    stages including the one evaluated at the new point.
    """

    name: str
    c: np.ndarray
    a: np.ndarray
    b: np.ndarray
    e: np.ndarray
    e3: np.ndarray | None
    order: int  # exponent base for step control (error ~ h^order)
    beta: float  # PI memory term

    @property
    def stages(self) -> int:
        return len(self.b)


def _dopri5() -> Tableau:
    a = np.zeros((7, 7))
    a[1, :1] = [1 / 5]
    a[2, :2] = [3 / 40, 9 / 40]
    a[3, :3] = [44 / 45, -56 / 15, 32 / 9]
    a[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
    a[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
    b = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
    e = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
    c = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
    return Tableau("dopri5", c, a[:6, :6], b, e, None, 5, 0.04)


def _dop853() -> Tableau:
    # Coefficients of the Dormand-Prince 8(5,3) pair as shipped with scipy.
    from scipy.integrate._ivp import dop853_coefficients as dc

    s = dc.N_STAGES
    return Tableau("dop853", dc.C[:s].copy(), dc.A[:s, :s].copy(), dc.B.copy(),
                   dc.E5.copy(), dc.E3.copy(), 8, 0.0)


TABLEAUS = {"dop853": _dop853(), "dopri5": _dopri5()}
_SAFETY = 0.9

Rhs = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class SegmentResult:
    y: np.ndarray  # (m, n)
    steps: np.ndarray  # accepted steps per lane
    rejected: np.ndarray
    trace: list[tuple[np.ndarray, np.ndarray]] | None = None  # per lane: (z_k, y_k)


def _combine(coeffs, K, upto: int):
    """``sum_j coeffs[j] K[j]`` in a fixed order, so each lane's value is
    independent of the batch shape (BLAS reductions are not)."""
    acc = None
    for j in range(upto):
        c = coeffs[j]
        if c:
            acc = c * K[j] if acc is None else acc + c * K[j]
    return acc


def _rk_step(tab: Tableau, rhs, z0, dz, t, h, y, k1):
    """One step of ``tab``; returns (y_new, err5, err3 or None, k_last)."""
    K = [k1]
    for s in range(1, tab.stages):
        acc = y + h * _combine(tab.a[s], K, s)
        K.append(rhs(z0 + (t + tab.c[s] * h) * dz, acc) * dz)
    y_new = y + h * _combine(tab.b, K, tab.stages)
    K.append(rhs(z0 + (t + h) * dz, y_new) * dz)
    err5 = h * _combine(tab.e, K, len(K))
    err3 = None if tab.e3 is None else h * _combine(tab.e3, K, len(K))
    return y_new, err5, err3, K[-1]


def _error_norm(err5, err3, scale):
    n = err5.shape[0]
    e5 = np.sum(np.abs(err5 / scale) ** 2, axis=0)
    if err3 is None:
        return np.sqrt(e5 / n)
    e3 = np.sum(np.abs(err3 / scale) ** 2, axis=0)
    denom = e5 + 0.01 * e3
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, e5 / np.sqrt(denom * n), 0.0)


def integrate_segments(
    rhs: Rhs,
    y0: np.ndarray,
    z0,
    z1,
    cfg: IntegratorConfig,
    *,
    fixed_steps: int | None = None,
    record: bool = False,
    dz=None,
) -> SegmentResult:
    """Integrate ``dy/dz = rhs(z, y)`` along straight segments ``z0 -> z1``.

    ``y0`` has shape ``(m, n)``: ``m`` components for ``n`` independent lanes,
    one segment per lane.  With ``fixed_steps`` every lane takes that many equal
    steps and no error control is applied.  ``dz`` overrides ``z1 - z0`` when
    the increment is known more accurately than the difference of endpoints.
    """
    tab = TABLEAUS[cfg.method]
    alpha = 1.0 / tab.order - 0.75 * tab.beta
    y = np.array(y0, dtype=complex, copy=True)
    if y.ndim == 1:
        y = y[:, None]
    n = y.shape[1]
    z0 = np.broadcast_to(np.asarray(z0, dtype=complex), (n,)).copy()
    if dz is None:
        dz = np.broadcast_to(np.asarray(z1, dtype=complex), (n,)) - z0
    else:
        dz = np.broadcast_to(np.asarray(dz, dtype=complex), (n,)).copy()
    length = np.abs(dz)
    steps = np.zeros(n, dtype=np.int64)
    rejected = np.zeros(n, dtype=np.int64)
    trace = [([complex(z0[i])], [y[:, i].copy()]) for i in range(n)] if record else None

    live = length > 0
    if not live.any():
        return SegmentResult(y, steps, rejected, _pack(trace))

    if fixed_steps is not None:
        idx = np.flatnonzero(live)
        zz0, d = z0[idx], dz[idx]
        yy = y[:, idx]
        h = 1.0 / fixed_steps
        k1 = rhs(zz0, yy) * d
        for s in range(fixed_steps):
            yy, _, _, k1 = _rk_step(tab, rhs, zz0, d, s * h, h, yy, k1)
            if record:
                for jj, i in enumerate(idx):
                    trace[i][0].append(complex(zz0[jj] + (s + 1) * h * d[jj]))
                    trace[i][1].append(yy[:, jj].copy())
        y[:, idx] = yy
        steps[idx] = fixed_steps
        return SegmentResult(y, steps, rejected, _pack(trace))

    with np.errstate(divide="ignore"):
        h = np.where(live, np.minimum(cfg.h_init / length, 1.0), 1.0)
        h_max = np.where(live, cfg.h_max / length, 1.0)
    t = np.zeros(n)
    err_prev = np.full(n, 1e-4)
    was_rejected = np.zeros(n, dtype=bool)
    k1 = np.zeros_like(y)
    k1[:, live] = rhs(z0[live], y[:, live]) * dz[live]
    active = live.copy()

    while active.any():
        idx = np.flatnonzero(active)
        tt, hh = t[idx], h[idx]
        last = hh >= 1.0 - tt
        hh = np.where(last, 1.0 - tt, hh)
        yy = y[:, idx]
        y_new, err5, err3, k7 = _rk_step(tab, rhs, z0[idx], dz[idx], tt, hh, yy, k1[:, idx])
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(yy), np.abs(y_new))
        err = _error_norm(err5, err3, scale)
        finite = np.isfinite(err) & np.all(np.isfinite(y_new), axis=0)
        ok = finite & (err <= 1.0)

        acc = idx[ok]
        if acc.size:
            t[acc] = np.where(last[ok], 1.0, tt[ok] + hh[ok])
            y[:, acc] = y_new[:, ok]
            k1[:, acc] = k7[:, ok]
            steps[acc] += 1
            e = np.maximum(err[ok], 1e-10)
            fac = _SAFETY * e ** (-alpha) * err_prev[acc] ** tab.beta
            fac = np.clip(fac, 0.2, 10.0)
            fac = np.where(was_rejected[acc], np.minimum(fac, 1.0), fac)
            h[acc] = np.minimum(hh[ok] * fac, h_max[acc])
            err_prev[acc] = e
            was_rejected[acc] = False
            active[acc[last[ok]]] = False
            if record:
                for jj, i in zip(np.flatnonzero(ok), acc):
                    trace[i][0].append(complex(z0[i] + t[i] * dz[i]))
                    trace[i][1].append(y[:, i].copy())

        rej = idx[~ok]
        if rej.size:
            e = np.where(finite[~ok], err[~ok], np.inf)
            with np.errstate(divide="ignore", over="ignore"):
                fac = np.maximum(0.2, _SAFETY * e ** (-1.0 / tab.order))
            h[rej] = hh[~ok] * fac
            rejected[rej] += 1
            was_rejected[rej] = True
            small = h[rej] * length[rej] < 1e-14 * (1.0 + np.abs(z0[rej] + t[rej] * dz[rej]))
            if small.any():
                i = rej[small][0]
                raise StepUnderflowError("step size underflow", z0[i] + t[i] * dz[i])

        total = steps[idx] + rejected[idx]
        if (total > cfg.max_steps).any():
            i = idx[total > cfg.max_steps][0]
            raise StepLimitError("max_steps exceeded", z0[i] + t[i] * dz[i])

    return SegmentResult(y, steps, rejected, _pack(trace))


def _pack(trace):
    if trace is None:
        return None
    return [(np.array(zs), np.array(ys).T) for zs, ys in trace]


# ------------------------------------------------------------- potential terms


def q_of(p: PotentialExpr) -> Callable[[np.ndarray], np.ndarray | float]:
    """``z -> 1/4 + p(z)/2``; raises :class:`PoleProximityError` near poles."""
    if p.is_zero:
        return lambda z: 0.25

    def q(z):
        v, bad = evaluate_many(p, z)
        if bad.any():
            raise PoleProximityError(np.asarray(z)[bad].flat[0])
        return 0.25 + 0.5 * v

    return q


def hill_system(p: PotentialExpr) -> Rhs:
    """Batched RHS of the 5-component jet (psi, psi', psit, psit', y)."""
    q = q_of(p)

    def rhs(z, s):
        psi, dpsi, psit, dpsit, _ = s
        prod = psi * psit
        tiny = np.abs(prod) < ZERO_PRODUCT
        if tiny.any():
            raise ZeroCrossingError("psi * psit vanished", np.asarray(z)[tiny][0])
        qz = q(z)
        return np.array([dpsi, qz * psi, dpsit, qz * psit, 1.0 / prod])

    return rhs


def riccati_system(p: PotentialExpr) -> Rhs:
    """Batched RHS of ``(w, W)``: ``w' = Q - w^2``, ``W' = w``."""
    q = q_of(p)

    def rhs(z, s):
        w = s[0]
        big = ~(np.abs(w) < RICCATI_BLOWUP)
        if big.any():
            raise ZeroCrossingError("Hill solution vanished (log-derivative blow-up)", np.asarray(z)[big][0])
        return np.array([q(z) - w * w, w])

    return rhs


def jet_system(p: PotentialExpr) -> Rhs:
    """Local system ``(u, ut, dy, lam)`` used for finite-difference stencils.

    ``u`` and ``ut`` are the log-derivatives of the two solutions, ``dy`` the
    increment of the logarithmic coordinate (``dy' = ut - u``) and ``lam`` the
    increment of ``log sqrt(y')`` (``lam' = -(u + ut)/2``).
    """
    q = q_of(p)

    def rhs(z, s):
        u, ut = s[0], s[1]
        qz = q(z)
        return np.array([qz - u * u, qz - ut * ut, ut - u, -0.5 * (u + ut)])

    return rhs


# ----------------------------------------------------------- HillState & paths


@dataclass(frozen=True)
class HillState:
    z: complex
    psi: complex
    dpsi: complex
    psit: complex
    dpsit: complex
    y: complex

    @property
    def wronskian(self) -> complex:
        return self.psi * self.dpsit - self.dpsi * self.psit

    @property
    def log_consistency(self) -> float:
        """Relative mismatch ``|exp(y) - psit/psi| / |psit/psi|``."""
        ratio = self.psit / self.psi
        return abs(np.exp(self.y) - ratio) / abs(ratio)

    def as_array(self) -> np.ndarray:
        return np.array([self.psi, self.dpsi, self.psit, self.dpsit, self.y], dtype=complex)

    @classmethod
    def from_array(cls, z: complex, a) -> "HillState":
        return cls(complex(z), *(complex(v) for v in a))

    @classmethod
    def free(cls, z: complex) -> "HillState":
        """The free pair ``exp(-z/2), exp(z/2)`` with Wronskian one and ``y = z``."""
        z = complex(z)
        psi = np.exp(-z / 2)
        psit = np.exp(z / 2)
        return cls(z, psi, -psi / 2, psit, psit / 2, z)


@dataclass(frozen=True)
class PathPolyline:
    vertices: tuple[complex, ...]
    strip: Strip | None = None

    def __post_init__(self):
        vs = tuple(complex(v) for v in self.vertices)
        object.__setattr__(self, "vertices", vs)
        if len(vs) < 2:
            raise ValueError("a path needs at least two vertices")
        for a, b in zip(vs, vs[1:]):
            if a == b:
                raise ValueError(f"consecutive vertices coincide at {a!r}")
        if self.strip is not None:
            # The strip is convex, so checking vertices suffices.
            self.strip.require(np.array(vs))

    @property
    def segments(self) -> list[tuple[complex, complex]]:
        return list(zip(self.vertices, self.vertices[1:]))

    @property
    def length(self) -> float:
        return float(sum(abs(b - a) for a, b in self.segments))


@dataclass
class IntegrationResult:
    final: HillState
    dense: list[HillState] = field(default_factory=list)
    wronskian_drift: float = 0.0
    steps: int = 0


def hill_rhs(p: PotentialExpr, state: HillState) -> np.ndarray:
    """Derivative of ``(psi, psi', psit, psit', y)`` at ``state.z``."""
    out = hill_system(p)(np.array([state.z]), state.as_array()[:, None])
    return out[:, 0]


def integrate(
    p: PotentialExpr,
    start: HillState,
    path: PathPolyline | Sequence[complex],
    cfg: IntegratorConfig | None = None,
    *,
    check_start: bool = True,
) -> IntegrationResult:
    """Integrate the 5-component jet along ``path``; dense output at accepted steps."""
    cfg = cfg or IntegratorConfig()
    if not isinstance(path, PathPolyline):
        path = PathPolyline(tuple(path))
    if abs(start.z - path.vertices[0]) > 1e-12 * (1 + abs(start.z)):
        raise ValueError("start state is not at the first path vertex")
    if check_start:
        if abs(start.wronskian - 1) > 1e-12:
            raise ValueError(f"start Wronskian {start.wronskian!r} is not 1")
        if start.log_consistency > 1e-12:
            raise ValueError("start y is inconsistent with log(psit/psi)")
    rhs = hill_system(p)
    state = start.as_array()
    dense = [start]
    steps = 0
    for a, b in path.segments:
        res = integrate_segments(rhs, state[:, None], a, b, cfg, record=True)
        zs, ys = res.trace[0]
        dense.extend(HillState.from_array(zk, ys[:, k]) for k, zk in enumerate(zs) if k)
        state = res.y[:, 0]
        steps += int(res.steps[0])
    final = HillState.from_array(path.vertices[-1], state)
    return IntegrationResult(final, dense, abs(final.wronskian - start.wronskian), steps)


CSV_COLUMNS = (
    "re_z", "im_z", "re_psi", "im_psi", "re_dpsi", "im_dpsi",
    "re_psit", "im_psit", "re_dpsit", "im_dpsit", "re_y", "im_y",
)


def write_dense_csv(states: Sequence[HillState], fh) -> None:
    """Stream states as CSV rows (z, psi, psi', psit, psit', y as re/im pairs)."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in states:
        row = []
        for v in (s.z, s.psi, s.dpsi, s.psit, s.dpsit, s.y):
            row += [repr(v.real), repr(v.imag)]
        w.writerow(row)
