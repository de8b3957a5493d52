"""``hillmap`` command line: ``check``, ``map`` and ``metrics``.

Exit codes: 0 all suites pass, 1 usage error, 2 hypothesis fails,
3 a verification suite fails.  Errors are also written to stderr as one
JSON object per line.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .expr import ExprError, PoleProximityError, parse
from .geometry import GridSpec, Strip, check_hypothesis, edge_distance, thurston_factor_from_ell
from .hyperbolic import tract_factor
from .liouville import (
    DecayError,
    construct_map,
    displacement_sweep,
    embedding_probe,
    operator_identity_residuals,
    schwarzian_probe,
    translation_gauge,
    write_map_csv,
    MAP_CSV_COLUMNS,
)
from .ode import IntegrationError, IntegratorConfig

EXIT_OK, EXIT_USAGE, EXIT_HYPOTHESIS, EXIT_VERIFY = 0, 1, 2, 3
SCHEMA = 1

FD_STEP = 1e-3
SCHWARZIAN_TOL = 1e-5
OPERATOR_TOL = 1e-4
YPRIME_TOL = 1e-6
PASS_FRACTION = 0.99
GAUGE_TOL = 1e-7
GAUGE_SHIFT = 10.0
OPERATOR_AS = (0.5, -0.5, 0.5j, -0.5j)
CAVEATS = (
    "hypothesis bound checked on a finite grid with the stated edge margin, not certified between grid points",
    "embedding is probed on grid samples, not proven",
)


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    potential: str = "0"
    height: float = math.pi
    m: float = 0.3
    grid: tuple = (200, 50, -20.0, 20.0, 1e-3)
    anchor: float = 25.0
    rtol: float = 1e-10
    atol: float = 1e-12
    pairs: int = 1000
    seed: int = 0
    out: str | None = None
    format: str = "json"
    allow_no_decay: bool = False
    sep: float = 0.1
    img_tol: float = 1e-3

    def grid_spec(self) -> GridSpec:
        nx, ny, x0, x1, margin = self.grid
        return GridSpec(int(nx), int(ny), float(x0), float(x1), float(margin))

    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(rtol=self.rtol, atol=self.atol)

    def to_json(self) -> dict:
        d = asdict(self)
        d["height"] = None if math.isinf(self.height) else self.height
        d["grid"] = list(self.grid)
        d.pop("out")
        return d


# ------------------------------------------------------------------ parsing


def _height(text: str) -> float:
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    return float(text)


def _grid(text: str) -> tuple:
    parts = [s.strip() for s in text.split(",")]
    if len(parts) != 5:
        raise ValueError("grid must be nx,ny,xmin,xmax,margin")
    return (int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3]), float(parts[4]))


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


CONVERTERS = {
    "potential": str, "height": _height, "m": float, "grid": _grid, "anchor": float,
    "rtol": float, "atol": float, "pairs": int, "seed": int, "out": str,
    "format": str, "allow_no_decay": _bool, "sep": float, "img_tol": float,
}


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONVERTERS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def _convert(key: str, value):
    try:
        return CONVERTERS[key](value)
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {exc}") from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hillmap", description="Liouville transformations of perturbed free Hill operators on strips.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, help_ in (("check", "verify hypothesis and theorem-level identities; JSON report"),
                        ("map", "dump y and y' on the grid"),
                        ("metrics", "dump Thurston and tract densities on the grid")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key=value file; flags override it")
        p.add_argument("--potential")
        p.add_argument("--height", help="strip height >= pi, or inf")
        p.add_argument("--m")
        p.add_argument("--grid", help="nx,ny,xmin,xmax,margin")
        p.add_argument("--anchor")
        p.add_argument("--rtol")
        p.add_argument("--atol")
        p.add_argument("--pairs")
        p.add_argument("--seed")
        p.add_argument("--out")
        p.add_argument("--format", choices=("json", "csv"))
        p.add_argument("--allow-no-decay", dest="allow_no_decay", action="store_const", const="true")
        p.add_argument("--sep")
        p.add_argument("--img-tol", dest="img_tol")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for f in fields(RunConfig):
        raw = getattr(args, f.name, None)
        if raw is not None:
            values[f.name] = _convert(f.name, raw)
    cfg = replace(RunConfig(), **values)
    if cfg.format not in ("json", "csv"):
        raise UsageError("format must be json or csv")
    if not 0 < cfg.m <= 1:
        raise UsageError("m must lie in (0, 1]")
    if cfg.pairs < 0:
        raise UsageError("pairs must be non-negative")
    if not 0 <= cfg.seed < 2**64:
        raise UsageError("seed must be a 64-bit unsigned integer")
    try:
        Strip(cfg.height)
        cfg.grid_spec().y_range(Strip(cfg.height))
        cfg.integrator()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


# ------------------------------------------------------------------ helpers


def _c(z) -> list[float]:
    z = complex(z)
    return [z.real, z.imag]


def _f(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def _percentiles(v: np.ndarray) -> dict:
    q = np.percentile(v, [50, 90, 99]) if v.size else [math.nan] * 3
    return {"p50": _f(q[0]), "p90": _f(q[1]), "p99": _f(q[2]), "max": _f(v.max()) if v.size else None}


def probe_points(strip: Strip, grid: GridSpec, fd_step: float) -> np.ndarray:
    """Grid points whose doubled-step stencil (radius 8 h) stays well inside the strip."""
    zs = grid.points(strip)
    return zs[edge_distance(strip, zs) >= 10 * fd_step]


def residual_suite(lmap, zs: np.ndarray, fd_step: float = FD_STEP) -> dict:
    fine = schwarzian_probe(lmap, zs, fd_step)
    coarse = schwarzian_probe(lmap, zs, 2 * fd_step)
    frac = float(np.mean(fine.residual < SCHWARZIAN_TOL)) if zs.size else 1.0
    # The h^2 check is meaningful only where truncation dominates roundoff.
    top_c, top_f = float(coarse.residual.max(initial=0)), float(fine.residual.max(initial=0))
    ratio = top_c / top_f if top_c > 1e-9 and top_f > 0 else None
    ratio_ok = ratio is None or 3.0 <= ratio <= 5.0
    ops = {}
    ops_ok = True
    for a in OPERATOR_AS:
        r = operator_identity_residuals(lmap, zs, a, fd_step)
        f = float(np.mean(r < OPERATOR_TOL)) if zs.size else 1.0
        ops_ok &= f >= PASS_FRACTION
        ops[repr(complex(a))] = {"fraction_below_tol": f, **_percentiles(r)}
    yp_max = float(fine.yprime_error.max(initial=0))
    return {
        "probes": int(zs.size),
        "fd_step": fd_step,
        "schwarzian": {"fraction_below_tol": frac, "tol": SCHWARZIAN_TOL, **_percentiles(fine.residual)},
        "schwarzian_coarse": _percentiles(coarse.residual),
        "h2_ratio": ratio,
        "operator_identity": ops,
        "yprime_closed_form_max": yp_max,
        "pass": bool(frac >= PASS_FRACTION and ratio_ok and ops_ok and yp_max < YPRIME_TOL),
    }


def sample_pairs(rng: np.random.Generator, strip: Strip, grid: GridSpec, n: int) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = grid.y_range(strip)
    u = rng.random((4, n))
    xs = grid.x_min + (grid.x_max - grid.x_min) * u[:2]
    ys = lo + (hi - lo) * u[2:]
    pts = xs + 1j * ys
    return pts[0], pts[1]


# ----------------------------------------------------------------- commands


def cmd_check(cfg: RunConfig) -> tuple[int, dict]:
    strip = Strip(cfg.height)
    grid = cfg.grid_spec()
    p = parse(cfg.potential)
    report: dict = {"schema": SCHEMA, "command": "check", "config": cfg.to_json(), "caveats": list(CAVEATS)}

    hyp = check_hypothesis(strip, p, cfg.m, grid)
    report["hypothesis"] = hyp.to_json()
    if not hyp.passed:
        report.update(status="hypothesis_failed", exit_code=EXIT_HYPOTHESIS)
        return EXIT_HYPOTHESIS, report

    icfg = cfg.integrator()
    lmap = construct_map(strip, p, cfg.anchor, icfg, allow_no_decay=cfg.allow_no_decay)
    report["map"] = {"anchor": cfg.anchor, "midline_im": lmap.midline_im, "decays": lmap.decays,
                     "normalization_error_estimate": _f(lmap.normalization_error_estimate),
                     "grid_within_anchors": bool(max(abs(grid.x_min), abs(grid.x_max)) <= cfg.anchor)}

    emb = embedding_probe(lmap, grid, cfg.sep, cfg.img_tol)
    report["embedding"] = emb.to_json()

    zs = probe_points(strip, grid, FD_STEP)
    res = residual_suite(lmap, zs)
    report["residuals"] = res

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    starts, ends = sample_pairs(rng, strip, grid, cfg.pairs)
    m_disp = min(cfg.m, 1 - 1e-12)
    sweep = displacement_sweep(lmap, m_disp, starts, ends)
    ok = sweep.passed
    gating = cfg.m < 1 / 3
    disp = {"pairs": int(ok.size), "passed": int(ok.sum()), "max_ratio": _f(sweep.max_ratio),
            "max_deviation": _f(sweep.deviation.max(initial=0)), "gating": gating,
            "pass": bool(ok.all())}
    if ok.size:
        k = int(np.argmax(sweep.deviation / sweep.bound))
        disp["worst_pair"] = [_c(starts[k]), _c(ends[k])]
    report["displacement"] = disp

    other = construct_map(strip, p, cfg.anchor + GAUGE_SHIFT, icfg, allow_no_decay=cfg.allow_no_decay)
    c, dev = translation_gauge(lmap, other, grid.points(strip))
    report["gauge"] = {"anchors": [cfg.anchor, cfg.anchor + GAUGE_SHIFT], "c": _c(c), "max_dev": dev,
                       "tol": GAUGE_TOL, "pass": bool(dev < GAUGE_TOL)}

    passed = emb.passed and res["pass"] and (disp["pass"] or not gating) and report["gauge"]["pass"]
    code = EXIT_OK if passed else EXIT_VERIFY
    report.update(status="pass" if passed else "verification_failed", exit_code=code)
    return code, report


def _grid_table(cfg: RunConfig, columns, rows) -> str:
    if cfg.format == "csv":
        buf = io.StringIO()
        buf.write(",".join(columns) + "\n")
        for row in rows:
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()
    doc = {"schema": SCHEMA, "config": cfg.to_json(), "columns": list(columns),
           "rows": [[float(v) for v in row] for row in rows]}
    return json.dumps(doc, sort_keys=True) + "\n"


def cmd_map(cfg: RunConfig) -> tuple[int, str]:
    strip = Strip(cfg.height)
    grid = cfg.grid_spec()
    lmap = construct_map(strip, parse(cfg.potential), cfg.anchor, cfg.integrator(), allow_no_decay=cfg.allow_no_decay)
    if cfg.format == "csv":
        buf = io.StringIO()
        write_map_csv(lmap, grid, buf)
        return EXIT_OK, buf.getvalue()
    zs = grid.points(strip)
    d = lmap.local_data(zs)
    yp = d["ut"] - d["u"]
    rows = [(z.real, z.imag, y.real, y.imag, q.real, q.imag) for z, y, q in zip(zs, d["y"], yp)]
    return EXIT_OK, _grid_table(cfg, MAP_CSV_COLUMNS, rows)


METRIC_COLUMNS = ("re_z", "im_z", "ell", "thurston", "tract")


def cmd_metrics(cfg: RunConfig) -> tuple[int, str]:
    strip = Strip(cfg.height)
    zs = cfg.grid_spec().points(strip)
    ell = np.atleast_1d(edge_distance(strip, zs))
    w = np.atleast_1d(thurston_factor_from_ell(ell))
    t = tract_factor(zs)
    ell_out = np.where(np.isinf(ell), -1.0, ell)  # -1 marks an infinite strip
    rows = zip(zs.real, zs.imag, ell_out, w, t)
    return EXIT_OK, _grid_table(cfg, METRIC_COLUMNS, rows)


# --------------------------------------------------------------------- main


def _emit_error(code: int, kind: str, message: str, **extra) -> None:
    rec = {"level": "error", "exit_code": code, "kind": kind, "message": message, **extra}
    sys.stderr.write(json.dumps(rec, sort_keys=True) + "\n")


def _write(cfg: RunConfig, text: str) -> None:
    if cfg.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("a command is required: check, map or metrics")
        cfg = resolve_config(args)
        if args.command == "check" and cfg.format != "json":
            raise UsageError("check writes a JSON report; --format csv applies to map and metrics")
        parse(cfg.potential)
    except ExprError as exc:
        _emit_error(EXIT_USAGE, "potential", str(exc), offset=exc.offset)
        return EXIT_USAGE
    except UsageError as exc:
        _emit_error(EXIT_USAGE, "usage", str(exc))
        return EXIT_USAGE

    try:
        if args.command == "check":
            code, report = cmd_check(cfg)
            _write(cfg, json.dumps(report, sort_keys=True, indent=1) + "\n")
            if code == EXIT_HYPOTHESIS:
                h = report["hypothesis"]
                _emit_error(code, "hypothesis", "smallness hypothesis fails on the grid",
                            worst_point=h["worst_point"], worst_ratio=h["worst_ratio"])
            elif code == EXIT_VERIFY:
                _emit_error(code, "verification", "one or more verification suites failed")
            return code
        runner = cmd_map if args.command == "map" else cmd_metrics
        code, text = runner(cfg)
        _write(cfg, text)
        return code
    except DecayError as exc:
        _emit_error(EXIT_USAGE, "decay", str(exc))
        return EXIT_USAGE
    except (IntegrationError, PoleProximityError) as exc:
        _emit_error(EXIT_VERIFY, type(exc).__name__, str(exc), z=None if getattr(exc, "z", None) is None else _c(exc.z))
        return EXIT_VERIFY
    except OSError as exc:
        _emit_error(EXIT_USAGE, "io", str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
