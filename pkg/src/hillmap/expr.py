"""Holomorphic potential expressions.

A closed, branch-cut-free expression language for the perturbation ``p(z)``.
Every primitive is entire or meromorphic, so anything that parses is
single-valued and holomorphic away from its poles.  The grammar is documented
in the README (EBNF appendix).

Evaluation is vectorised over numpy arrays.  Alongside each node value we carry
two auxiliary quantities used for pole detection:

* ``scale``: magnitude of the node's ingredients before cancellation;
* ``rho``: relative distance to an accidental zero (``|value| / scale`` for
  sums and trig/hyperbolic primitives, propagated through products and
  positive powers).

A quotient or negative power whose divisor has ``rho`` below
``POLE_RTOL`` is reported as near-pole, as is any intermediate value above
``OVERFLOW_SENTINEL``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

MAX_SOURCE_BYTES = 64 * 1024
MAX_EXPONENT = 16
OVERFLOW_SENTINEL = 1e100
POLE_RTOL = 1e-11

FUNCTIONS = ("exp", "sin", "cos", "sinh", "cosh", "tanh", "sech")
CONSTANTS = {"i": 1j, "pi": math.pi, "e": math.e}
BRANCH_CUT_NAMES = frozenset(
    {
        "log", "ln", "log10", "log2", "sqrt", "cbrt", "pow",
        "asin", "acos", "atan", "arcsin", "arccos", "arctan",
        "asinh", "acosh", "atanh", "arcsinh", "arccosh", "arctanh",
    }
)


class ExprError(ValueError):
    """Base class for expression parse errors."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class ExprSyntaxError(ExprError):
    pass


class UnknownIdentifierError(ExprError):
    pass


class ExponentError(ExprError):
    pass


class BranchCutError(ExprError):
    """A multivalued primitive (log, sqrt, non-integer power) was used."""


class PoleProximityError(ArithmeticError):
    """Evaluation landed on, or numerically indistinguishable from, a pole."""

    def __init__(self, z: complex, message: str = "potential evaluated at a pole"):
        self.z = complex(z)
        super().__init__(f"{message}: z = {self.z!r}")


# --------------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Num:
    value: complex


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int


@dataclass(frozen=True)
class Call:
    name: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Pow, Call]


def _fmt_num(value: complex) -> str:
    value = complex(value)
    re, im = value.real, value.imag
    if im == 0.0:
        return repr(re) if re >= 0 else f"({re!r})"
    if re == 0.0:
        return f"({im!r}i)"
    sign = "+" if im >= 0 or math.isnan(im) else "-"
    return f"({re!r}{sign}{abs(im)!r}i)"


def pretty(node: Node) -> str:
    """Fully parenthesised source text that re-parses to an equivalent tree."""
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return "z"
    if isinstance(node, Neg):
        return f"(-{pretty(node.arg)})"
    if isinstance(node, BinOp):
        return f"({pretty(node.left)} {node.op} {pretty(node.right)})"
    if isinstance(node, Pow):
        return f"({pretty(node.base)}^({node.exponent}))"
    if isinstance(node, Call):
        return f"{node.name}({pretty(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


# ------------------------------------------------------------------ tokenizer


@dataclass(frozen=True)
class _Tok:
    kind: str  # num, imag, ident, op, lparen, rparen, end
    text: str
    offset: int  # byte offset into the UTF-8 source


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    byte = 0
    n = len(text)

    def advance(k: int) -> None:
        nonlocal pos, byte
        byte += len(text[pos:pos + k].encode("utf-8"))
        pos += k

    while pos < n:
        ch = text[pos]
        if ch.isspace():
            advance(1)
            continue
        start_byte = byte
        if ch.isdigit() or (ch == "." and pos + 1 < n and text[pos + 1].isdigit()):
            end = pos
            while end < n and text[end].isdigit():
                end += 1
            if end < n and text[end] == ".":
                end += 1
                while end < n and text[end].isdigit():
                    end += 1
            if end < n and text[end] in "eE":
                k = end + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    while k < n and text[k].isdigit():
                        k += 1
                    end = k
            lit = text[pos:end]
            kind = "num"
            if end < n and text[end] in "ij" and not (end + 1 < n and (text[end + 1].isalnum() or text[end + 1] == "_")):
                kind = "imag"
                end += 1
            advance(end - pos)
            toks.append(_Tok(kind, lit, start_byte))
            continue
        if ch.isalpha() or ch == "_":
            end = pos
            while end < n and (text[end].isalnum() or text[end] == "_"):
                end += 1
            word = text[pos:end]
            advance(end - pos)
            toks.append(_Tok("ident", word, start_byte))
            continue
        if text.startswith("**", pos):
            advance(2)
            toks.append(_Tok("op", "^", start_byte))
            continue
        if ch in "+-*/^":
            advance(1)
            toks.append(_Tok("op", ch, start_byte))
            continue
        if ch == "(":
            advance(1)
            toks.append(_Tok("lparen", ch, start_byte))
            continue
        if ch == ")":
            advance(1)
            toks.append(_Tok("rparen", ch, start_byte))
            continue
        raise ExprSyntaxError(f"unexpected character {ch!r}", start_byte)
    toks.append(_Tok("end", "", byte))
    return toks


# --------------------------------------------------------------------- parser


class _Parser:
    # sum     := product (("+" | "-") product)*
    # product := unary (("*" | "/") unary)*
    # unary   := ("-" | "+") unary | power
    # power   := primary ("^" exponent)?
    # primary := number | imag | ident | ident "(" sum ")" | "(" sum ")"

    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind: str, what: str) -> _Tok:
        if self.tok.kind != kind:
            found = self.tok.text or "end of input"
            raise ExprSyntaxError(f"expected {what}, found {found!r}", self.tok.offset)
        return self.take()

    def parse(self) -> Node:
        node = self.sum()
        if self.tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {self.tok.text!r}", self.tok.offset)
        return node

    def sum(self) -> Node:
        node = self.product()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.take().text
            node = BinOp(op, node, self.product())
        return node

    def product(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.take().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text in "+-":
            op = self.take().text
            arg = self.unary()
            return Neg(arg) if op == "-" else arg
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.take()
            exponent = self.exponent()
            if self.tok.kind == "op" and self.tok.text == "^":
                raise ExprSyntaxError("chained powers must be parenthesised", self.tok.offset)
            return Pow(base, exponent)
        return base

    def exponent(self) -> int:
        start = self.tok
        parens = 0
        while self.tok.kind == "lparen":
            self.take()
            parens += 1
        sign = 1
        while self.tok.kind == "op" and self.tok.text in "+-":
            if self.take().text == "-":
                sign = -sign
        t = self.tok
        if t.kind != "num":
            raise BranchCutError("exponent must be an integer literal", start.offset)
        self.take()
        value = float(t.text)
        if not value.is_integer():
            raise BranchCutError(f"non-integer exponent {t.text!r}", t.offset)
        for _ in range(parens):
            self.expect("rparen", "')'")
        k = sign * int(value)
        if abs(k) > MAX_EXPONENT:
            raise ExponentError(f"exponent {k} outside [-{MAX_EXPONENT}, {MAX_EXPONENT}]", t.offset)
        return k

    def primary(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self.take()
            return Num(complex(float(t.text)))
        if t.kind == "imag":
            self.take()
            return Num(complex(0.0, float(t.text)))
        if t.kind == "lparen":
            self.take()
            node = self.sum()
            self.expect("rparen", "')'")
            return node
        if t.kind == "ident":
            self.take()
            name = t.text
            if name in BRANCH_CUT_NAMES:
                raise BranchCutError(f"{name!r} has a branch cut and is not admitted", t.offset)
            if name in FUNCTIONS:
                self.expect("lparen", f"'(' after {name}")
                arg = self.sum()
                self.expect("rparen", "')'")
                return Call(name, arg)
            if self.tok.kind == "lparen":
                raise UnknownIdentifierError(f"unknown function {name!r}", t.offset)
            if name == "z":
                return Var()
            if name in CONSTANTS:
                return Num(complex(CONSTANTS[name]))
            raise UnknownIdentifierError(f"unknown identifier {name!r}", t.offset)
        found = t.text or "end of input"
        raise ExprSyntaxError(f"expected an operand, found {found!r}", t.offset)


# ----------------------------------------------------------------- evaluation


def _eval(node: Node, z: np.ndarray, bad: np.ndarray):
    """Return (value, scale, rho); accumulates near-pole lanes into ``bad``."""
    if isinstance(node, Num):
        v = np.full(z.shape, node.value, dtype=complex)
        mag = abs(node.value)
        return v, np.full(z.shape, mag), np.full(z.shape, 1.0 if mag else 0.0)
    if isinstance(node, Var):
        mag = np.abs(z)
        return z.astype(complex, copy=True), np.maximum(mag, 1.0), np.minimum(mag, 1.0)
    if isinstance(node, Neg):
        v, s, r = _eval(node.arg, z, bad)
        return -v, s, r
    if isinstance(node, BinOp):
        a, sa, ra = _eval(node.left, z, bad)
        b, sb, rb = _eval(node.right, z, bad)
        if node.op in "+-":
            v = a + b if node.op == "+" else a - b
            s = np.maximum(sa, sb)
            with np.errstate(invalid="ignore", divide="ignore"):
                r = np.where(s > 0, np.abs(v) / s, 0.0)
            return _check(v, bad), s, r
        if node.op == "*":
            return _check(a * b, bad), sa * sb, np.minimum(ra, rb)
        near = rb < POLE_RTOL
        bad |= near
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            safe_b = np.where(near, 1.0, b)
            v = a / safe_b
            s = sa / np.abs(safe_b)
        return _check(v, bad), s, ra
    if isinstance(node, Pow):
        a, sa, ra = _eval(node.base, z, bad)
        k = node.exponent
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            if k >= 0:
                return _check(a**k, bad), sa**k, ra if k else np.ones_like(ra)
            near = ra < POLE_RTOL
            bad |= near
            v = np.where(near, 1.0, a) ** k
            return _check(v, bad), np.abs(v), np.ones_like(ra)
    if isinstance(node, Call):
        a, _, _ = _eval(node.arg, z, bad)
        return _call(node.name, a, bad)
    raise TypeError(f"not an expression node: {node!r}")


def _check(v: np.ndarray, bad: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", over="ignore"):
        bad |= ~np.isfinite(v) | (np.abs(v) > OVERFLOW_SENTINEL)
    return v


def _call(name: str, a: np.ndarray, bad: np.ndarray):
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        if name == "exp":
            v = np.exp(a)
            return _check(v, bad), np.abs(v), np.ones(a.shape)
        if name in ("sin", "cos"):
            v = np.sin(a) if name == "sin" else np.cos(a)
            s = np.cosh(a.imag)
            return _check(v, bad), s, np.abs(v) / s
        if name in ("sinh", "cosh"):
            v = np.sinh(a) if name == "sinh" else np.cosh(a)
            s = np.cosh(a.real)
            return _check(v, bad), s, np.abs(v) / s
        # tanh and sech divide by cosh
        ch = np.cosh(a)
        s_ch = np.cosh(a.real)
        rho_ch = np.abs(ch) / s_ch
        near = ~(rho_ch >= POLE_RTOL)
        bad |= near
        ch_safe = np.where(near, 1.0, ch)
        if name == "sech":
            v = 1.0 / ch_safe
            return _check(v, bad), np.abs(v), np.ones(a.shape)
        if name == "tanh":
            sh = np.sinh(a)
            v = sh / ch_safe
            rho = np.abs(sh) / s_ch
            return _check(v, bad), s_ch / np.abs(ch_safe), rho
    raise UnknownIdentifierError(f"unknown function {name!r}")


# ------------------------------------------------------------------ public API


@dataclass(frozen=True)
class PotentialExpr:
    """A parsed potential ``p(z)``.  Immutable; safe to share across threads."""

    root: Node
    source_text: str

    def __call__(self, z: complex) -> complex:
        return evaluate(self, z)

    def evaluate_many(self, z) -> tuple[np.ndarray, np.ndarray]:
        return evaluate_many(self, z)

    def pretty(self) -> str:
        return pretty(self.root)

    @property
    def is_zero(self) -> bool:
        return isinstance(self.root, Num) and self.root.value == 0

    @classmethod
    def from_coefficients(cls, coeffs: Sequence[complex], center: complex = 0.0) -> "PotentialExpr":
        """Polynomial ``sum c_k (z - center)^k`` from tabulated coefficients."""
        if not len(coeffs):
            raise ValueError("need at least one coefficient")
        if len(coeffs) - 1 > MAX_EXPONENT:
            raise ExponentError(f"degree {len(coeffs) - 1} exceeds {MAX_EXPONENT}")
        w: Node = Var() if center == 0 else BinOp("-", Var(), Num(complex(center)))
        node: Node = Num(complex(coeffs[-1]))
        for c in reversed(coeffs[:-1]):
            node = BinOp("+", BinOp("*", node, w), Num(complex(c)))
        return cls(node, pretty(node))


def parse(text: str) -> PotentialExpr:
    """Parse ``text`` into a :class:`PotentialExpr`.

    Operators follow the usual precedence (power > unary minus > product and
    quotient > sum and difference) and are left-associative.  Exponents must be
    integer literals in [-16, 16].
    """
    if not isinstance(text, str):
        raise TypeError("expression source must be a str")
    if len(text.encode("utf-8")) > MAX_SOURCE_BYTES:
        raise ExprError(f"expression longer than {MAX_SOURCE_BYTES} bytes")
    root = _Parser(_tokenize(text)).parse()
    return PotentialExpr(root, text)


def evaluate_many(expr: PotentialExpr, z) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised evaluation.  Returns ``(values, near_pole)``.

    Lanes flagged in ``near_pole`` hold ``nan``.
    """
    zz = np.asarray(z, dtype=complex)
    bad = np.zeros(zz.shape, dtype=bool)
    v, _, _ = _eval(expr.root, zz, bad)
    v = np.where(bad, np.nan + 0j, v)
    return v, bad


def evaluate(expr: PotentialExpr, z: complex) -> complex:
    """Evaluate at a single point; raises :class:`PoleProximityError` near poles."""
    v, bad = evaluate_many(expr, np.array([z], dtype=complex))
    if bad[0]:
        raise PoleProximityError(z)
    return complex(v[0])
