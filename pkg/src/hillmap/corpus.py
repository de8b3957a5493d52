"""Reference potentials used by the test suite, the acceptance gate and scripts."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .expr import PotentialExpr, parse
from .geometry import Strip


@dataclass(frozen=True)
class CorpusEntry:
    name: str
    source: str
    height: float = math.pi
    kind: str = "decaying"  # "zero" | "constant" | "decaying"

    @property
    def strip(self) -> Strip:
        return Strip(self.height)

    @property
    def p(self) -> PotentialExpr:
        return parse(self.source)

    @property
    def allow_no_decay(self) -> bool:
        return self.kind == "constant"


def sech2(amplitude: str) -> str:
    """``A sech(z - i pi/2)^2``: double poles on both edges of the height-pi strip."""
    return f"{amplitude}/cosh(z - i*pi/2)^2"


CORPUS = (
    CorpusEntry("zero", "0", kind="zero"),
    CorpusEntry("const_0.05", "0.05", kind="constant"),
    CorpusEntry("const_0.1", "0.1", kind="constant"),
    CorpusEntry("const_0.05i", "0.05*i", kind="constant"),
    CorpusEntry("sech2_0.02", sech2("0.02")),
    CorpusEntry("sech2_0.05", sech2("0.05")),
    CorpusEntry("sech2_0.05i", sech2("0.05*i")),
    CorpusEntry("sech2_0.1", "0.1*sech(z - i*pi/2)^2"),
    CorpusEntry("two_bumps", "0.02*sech(z - i*pi/2)^2 + 0.01*sech(z - 1 - i*pi/2)^2"),
    CorpusEntry("wide_sech2", "0.02*sech(z/2 - i*pi/2)^2", height=2 * math.pi),
)

BY_NAME = {e.name: e for e in CORPUS}
DECAYING = tuple(e for e in CORPUS if e.kind == "decaying")
CONSTANTS = {"const_0.05": 0.05, "const_0.1": 0.1, "const_0.05i": 0.05j}
SECH2_FAMILY = {"0.02": sech2("0.02"), "0.05": sech2("0.05"), "0.05i": sech2("0.05*i")}


def zigzag_path(strip: Strip, total: float = 100.0, half_width: float = 12.0, inset: float = 0.3) -> list[complex]:
    """Deterministic back-and-forth polyline of about ``total`` length inside the strip."""
    lo = inset
    hi = (strip.height if not strip.infinite else 2 * math.pi) - inset
    levels = [lo + (hi - lo) * k / 4 for k in (2, 4, 1, 3, 0)]
    pts = [complex(-half_width, levels[0])]
    length, side, k = 0.0, 1, 0
    while True:
        nxt = complex(side * half_width, pts[-1].imag)
        step = abs(nxt - pts[-1])
        if length + step > total:
            pts.append(pts[-1] + side * (total - length))
            return pts
        pts.append(nxt)
        length += step
        k = (k + 1) % len(levels)
        up = complex(nxt.real, levels[k])
        step = abs(up - nxt)
        if length + step > total:
            pts.append(nxt + (total - length) * (1j if up.imag > nxt.imag else -1j))
            return pts
        pts.append(up)
        length += step
        side = -side
