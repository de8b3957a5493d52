import io
import math

import numpy as np
import pytest

from hillmap.corpus import BY_NAME, CONSTANTS, DECAYING
from hillmap.expr import parse
from hillmap.geometry import GridSpec, Strip
from hillmap.hyperbolic import Mobius, cross_ratio, exp_displacement, schwarzian_fd
from hillmap.liouville import (
    MAP_CSV_COLUMNS,
    CancellationError,
    DecayError,
    StencilError,
    construct_map,
    displacement_bound,
    displacement_check,
    displacement_j,
    displacement_sweep,
    embedding_probe,
    evaluate_y,
    operator_identity_residual,
    operator_identity_residuals,
    schwarzian_probe,
    schwarzian_residual,
    translation_gauge,
    write_map_csv,
    y_along_path,
)
from hillmap.ode import PathPolyline

from conftest import corpus_map

PI = math.pi
SMALL_GRID = GridSpec(41, 9, -20, 20, 1e-2)


def kappa(c):
    return np.sqrt(0.25 + c / 2)


def grid_points(entry, grid=SMALL_GRID):
    return grid.points(entry.strip)


# ---------------------------------------------------------------- construct


def test_free_map_is_identity():
    lmap = corpus_map(BY_NAME["zero"])
    zs = grid_points(BY_NAME["zero"])
    assert np.max(np.abs(lmap.evaluate_many(zs) - zs)) < 1e-9
    assert evaluate_y(lmap, 3 + 1j) == pytest.approx(3 + 1j, abs=1e-10)


@pytest.mark.parametrize("name", sorted(CONSTANTS))
def test_constant_closed_form(name):
    e = BY_NAME[name]
    k = kappa(CONSTANTS[name])
    lmap = corpus_map(e)
    zs = grid_points(e)
    off = lmap.evaluate_many(zs) - 2 * k * zs
    assert np.max(np.abs(off - off[0])) < 1e-8
    z = 0.3 + 1.2j
    assert evaluate_y(lmap, z + 1) - evaluate_y(lmap, z) == pytest.approx(2 * k, abs=1e-8)


def test_sech2_offset_bounded():
    e = BY_NAME["sech2_0.05"]
    lmap = corpus_map(e)
    zs = grid_points(e, GridSpec(81, 21, -20, 20, 1e-2))
    off = lmap.evaluate_many(zs) - zs
    # regression number: the pipeline gives about 0.16 for this potential
    assert np.max(np.abs(off - off.mean())) < 0.2


def test_decay_error():
    with pytest.raises(DecayError):
        construct_map(Strip(PI), parse("0.05"), 25)
    lmap = construct_map(Strip(PI), parse("0.05"), 25, allow_no_decay=True)
    assert not lmap.decays
    assert lmap.normalization_error_estimate == pytest.approx(1e-8 * 25)


def test_normalization_estimate_is_tail_integral():
    lmap = corpus_map(BY_NAME["sech2_0.05"])
    # 2 * int_25^45 0.2 e^{-2x} dx, both tails
    exact = 2 * 0.1 * (math.exp(-50) - math.exp(-90))
    assert lmap.decays
    assert lmap.normalization_error_estimate == pytest.approx(exact, rel=1e-2)


def test_anchor_outside_strip():
    with pytest.raises(ValueError):
        construct_map(Strip(PI), parse("0"), 25, midline_im=4.0)
    with pytest.raises(ValueError):
        construct_map(Strip(PI), parse("0"), -1)


def test_evaluation_outside_strip():
    lmap = corpus_map(BY_NAME["zero"])
    with pytest.raises(ValueError):
        evaluate_y(lmap, 1 + 4j)


def test_deterministic_and_cached():
    e = BY_NAME["sech2_0.05"]
    a = construct_map(e.strip, e.p, 25)
    b = construct_map(e.strip, e.p, 25)
    zs = np.array([0.3 + 0.4j, -7 + 2.9j, 11 + 1j])
    ya = a.evaluate_many(zs)
    assert np.array_equal(ya, b.evaluate_many(zs[::-1])[::-1])
    assert np.array_equal(ya, a.evaluate_many(zs))
    assert len(a.cache) == 3


def test_concurrent_evaluation():
    from concurrent.futures import ThreadPoolExecutor

    e = BY_NAME["two_bumps"]
    lmap = construct_map(e.strip, e.p, 25)
    zs = [complex(x, 1.0) for x in np.linspace(-5, 5, 16)]
    with ThreadPoolExecutor(4) as ex:
        got = list(ex.map(lambda z: evaluate_y(lmap, z), zs))
    ref = corpus_map(e).evaluate_many(zs)
    assert np.array_equal(np.array(got), ref)


@pytest.mark.parametrize("name", ["sech2_0.05", "sech2_0.05i", "two_bumps", "const_0.1"])
def test_path_independence(name):
    # near the centre the linear jet transport is well conditioned
    e = BY_NAME[name]
    lmap = corpus_map(e)
    start = -2 + 1.2j
    paths = [
        [start, 2 + 1.2j, 2 + 0.4j, -1 + 0.4j, -1 + 2.8j, 1.5 + 2j],
        [start, start + 0.5j, 1.5 + 2j],
    ]
    target = evaluate_y(lmap, 1.5 + 2j)
    for v in paths:
        assert abs(y_along_path(lmap, PathPolyline(v, e.strip)) - target) < 10 * lmap.cfg.rtol


def test_hill_state_wronskian(entry):
    lmap = corpus_map(entry)
    for z in (-12 + 1j, 0.2 + 2.5j, 8 + 0.5j):
        s = lmap.hill_state(z)
        assert abs(s.psi * s.dpsit - s.dpsi * s.psit - 1) < 1e-12
        assert s.y == pytest.approx(evaluate_y(lmap, z), abs=0)


# --------------------------------------------------------------- Schwarzian


def probe_points(entry, n=40, seed=7):
    rng = np.random.default_rng(seed)
    h = entry.height
    return rng.uniform(-15, 15, n) + 1j * rng.uniform(0.1, h - 0.1, n)


def test_schwarzian_free():
    lmap = corpus_map(BY_NAME["zero"])
    res = schwarzian_probe(lmap, probe_points(BY_NAME["zero"]))
    assert res.residual.max() < 1e-6


@pytest.mark.parametrize("name", sorted(CONSTANTS))
def test_schwarzian_constant(name):
    e = BY_NAME[name]
    res = schwarzian_probe(corpus_map(e), probe_points(e))
    assert res.residual.max() < 1e-5
    assert np.abs(res.schwarzian).max() < 1e-5


@pytest.mark.parametrize("name", [e.name for e in DECAYING])
def test_schwarzian_corpus_and_order(name):
    e = BY_NAME[name]
    lmap = corpus_map(e)
    zs = probe_points(e)
    coarse = schwarzian_probe(lmap, zs, 2e-3)
    fine = schwarzian_probe(lmap, zs, 1e-3)
    assert fine.residual.max() < 1e-5
    assert fine.yprime_error.max() < 1e-6
    if coarse.residual.max() > 1e-9:
        assert coarse.residual.max() / fine.residual.max() > 3.0


def test_schwarzian_mobius_invariance():
    e = BY_NAME["sech2_0.05"]
    lmap = corpus_map(e)
    g = Mobius(2, 1, 1, 3)
    for z in (0.3 + 1.1j, -1 + 2j):
        # keep y + 3 away from zero by shifting with the gauge constant
        shift = -evaluate_y(lmap, z) + 1

        def f(w):
            return lmap.evaluate_many(np.atleast_1d(w)) + shift

        a = schwarzian_fd(f, z, 1e-3)
        b = schwarzian_fd(lambda w: (g.a * f(w) + g.b) / (g.c * f(w) + g.d), z, 1e-3)
        assert abs(a - b) < 1e-5


def test_stencil_errors():
    lmap = corpus_map(BY_NAME["zero"])
    with pytest.raises(StencilError):
        schwarzian_residual(lmap, 0.002j, 1e-3)
    with pytest.raises(StencilError):
        schwarzian_residual(lmap, 1j, -1.0)
    with pytest.raises(CancellationError):
        schwarzian_residual(lmap, 1j, 1e-14)


# ---------------------------------------------------------- operator identity


def test_operator_free():
    lmap = corpus_map(BY_NAME["zero"])
    for a in (0.5, -1, 0.3 + 0.7j):
        assert operator_identity_residual(lmap, 0.4 + 1.3j, a) < 1e-6


def test_operator_constant():
    lmap = corpus_map(BY_NAME["const_0.1"])
    zs = probe_points(BY_NAME["const_0.1"], 10)
    assert operator_identity_residuals(lmap, zs, 0.5).max() < 1e-4


def test_operator_equivalence_on_corpus():
    for e in DECAYING:
        lmap = corpus_map(e)
        zs = probe_points(e, 20, seed=3)
        ok = schwarzian_probe(lmap, zs).residual < 1e-5
        for a in (0.5, -0.8j, 1.0):
            assert operator_identity_residuals(lmap, zs[ok], a).max() < 1e-4


def test_operator_rejects_large_a():
    with pytest.raises(ValueError):
        operator_identity_residual(corpus_map(BY_NAME["zero"]), 1j, 1.5)


# --------------------------------------------------------------- displacement


def test_displacement_arithmetic():
    assert displacement_bound(0.2, 1.0) == pytest.approx(0.5 * (1 + 1.5 * PI))
    assert displacement_bound(0.2, 1.0) == pytest.approx(2.8561944901923448)
    assert displacement_j(3.5j * PI) == 4
    assert displacement_j(1j * PI) == 1
    assert displacement_j(0) == 1
    assert displacement_j(1.0001j * PI) == 2


def test_displacement_free():
    lmap = corpus_map(BY_NAME["zero"])
    c = displacement_check(lmap, 0.3, -3 + 0.5j, 4 + 2.5j)
    assert c.passed and c.deviation < 1e-9
    assert c.r == (4 + 2.5j) - (-3 + 0.5j)
    assert c.to_json()["pass"] is True


def test_displacement_sech2(rng):
    e = BY_NAME["sech2_0.05"]
    lmap = corpus_map(e)
    n = 2000
    s = rng.uniform(-20, 20, n) + 1j * rng.uniform(0.01, PI - 0.01, n)
    t = rng.uniform(-20, 20, n) + 1j * rng.uniform(0.01, PI - 0.01, n)
    sweep = displacement_sweep(lmap, 0.3, s, t)
    assert sweep.passed.all()
    assert 0 < sweep.max_ratio < 1


def test_exp_displacement_matches_cross_ratio(rng):
    e = BY_NAME["sech2_0.05"]
    lmap = corpus_map(e)
    for _ in range(50):
        m, n = rng.uniform(-10, 10, 2) + 1j * rng.uniform(0.1, PI - 0.1, 2)
        ym, yn = lmap.evaluate_many([m, n])
        rho = cross_ratio(0, np.exp(ym), np.exp(yn), math.inf)
        assert abs(exp_displacement(yn - ym) - rho) / abs(rho) < 1e-8


# -------------------------------------------------------------- gauge / rigidity


def test_gauge_same_anchor():
    lmap = corpus_map(BY_NAME["sech2_0.05"])
    c, dev = translation_gauge(lmap, lmap, probe_points(BY_NAME["sech2_0.05"]))
    assert c == 0 and dev == 0


def test_gauge_free():
    e = BY_NAME["zero"]
    c, dev = translation_gauge(corpus_map(e, 10.0), corpus_map(e, 20.0), probe_points(e))
    assert abs(c) < 1e-9 and dev < 1e-9


@pytest.mark.parametrize("name", ["sech2_0.02", "sech2_0.05", "sech2_0.05i"])
def test_gauge_rigidity_and_covariance(name):
    e = BY_NAME[name]
    a, b = corpus_map(e, 15.0), corpus_map(e, 25.0)
    zs = probe_points(e)
    c, dev = translation_gauge(a, b, zs)
    assert dev < 1e-7
    ya, yb = a.evaluate_many(zs), b.evaluate_many(zs)
    ra = ya[1:] - ya[:-1]
    rb = yb[1:] - yb[:-1]
    assert np.max(np.abs(ra - rb)) <= 2 * dev


def test_gauge_midline_change():
    e = BY_NAME["sech2_0.05"]
    a = corpus_map(e)
    b = construct_map(e.strip, e.p, 25, midline_im=1.0)
    _, dev = translation_gauge(a, b, probe_points(e))
    assert dev < 1e-7


# ------------------------------------------------------------------ embedding


def test_embedding_free():
    rep = embedding_probe(corpus_map(BY_NAME["zero"]), GridSpec(60, 15, -20, 20, 1e-2))
    assert rep.passed and rep.max_offset < 1e-9
    assert rep.to_json()["witness"] is None


def test_embedding_sech2():
    rep = embedding_probe(corpus_map(BY_NAME["sech2_0.05"]), GridSpec(100, 25, -20, 20, 1e-2))
    assert rep.passed
    assert rep.max_offset < 0.2


class _FakeMap:
    """Non-injective stand-in: exp(3z) wraps the strip around 0 one and a half times."""

    strip = Strip(PI)
    midline_im = PI / 2

    def evaluate_many(self, zs):
        return np.exp(3 * np.asarray(zs, dtype=complex))


def test_embedding_negative_control():
    rep = embedding_probe(_FakeMap(), GridSpec(40, 60, -2, 2, 1e-2), sep=0.1, img_tol=0.05)
    assert not rep.injective
    a, b = rep.witness
    assert abs(a - b) >= 0.1
    assert abs(np.exp(3 * a) - np.exp(3 * b)) < 0.05
    assert not rep.passed
    assert rep.to_json()["pass"] is False


# ----------------------------------------------------------------------- dump


def test_map_csv():
    buf = io.StringIO()
    g = GridSpec(5, 3, -2, 2, 0.1)
    n = write_map_csv(corpus_map(BY_NAME["zero"]), g, buf)
    rows = buf.getvalue().strip().split("\n")
    assert n == 15 and len(rows) == 16
    assert tuple(rows[0].split(",")) == MAP_CSV_COLUMNS
    vals = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    assert np.allclose(vals[:, 2], vals[:, 0], atol=1e-9)
    assert np.allclose(vals[:, 3], vals[:, 1], atol=1e-9)
    assert np.allclose(vals[:, 4], 1, atol=1e-9)
