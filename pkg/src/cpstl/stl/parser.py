"""Recursive-descent parser for the STL text DSL.

Grammar (lowest to highest precedence)::

    formula  := and_f ("||" and_f)*
    and_f    := until_f ("&&" until_f)*
    until_f  := unary ("U" "[" int "," int "]" unary)?
    unary    := "!" unary | ("G" | "F") "[" int "," int "]" unary | primary
    primary  := "(" formula ")" | "true" | atom
    atom     := "in_box" "(" signal "," region ")"
              | "near" "(" signal "," signal "," number ")"
              | linexpr (">=" | "<=") linexpr
    linexpr  := ["-"] term (("+" | "-") term)*
    term     := number ["*" ref] | ref
    ref      := NAME ["[" int "]"]

``in_box`` and ``near`` are macros: they expand to conjunctions of affine
predicates (box faces, and per-coordinate bounds on the difference of two
signals, i.e. an inf-norm proximity constraint).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .formula import (
    Always, And, Eventually, Formula, Not, Or, Pred, StlFormula, TrueF, Until,
    layout_slices,
)

KEYWORDS = {"G", "F", "U", "true", "in_box", "near"}


class ParseError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>&&|\|\||>=|<=|[!\[\](),*+\-])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[Token]:
    tokens, pos, line, line_start = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            tokens.append(Token(kind, chunk, line, col))
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    col = pos - line_start + 1
    tokens.append(Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text, layout, regions):
        self.toks = tokenize(text)
        self.i = 0
        self.layout = dict(layout)
        self.slices = layout_slices(self.layout)
        self.dim = sum(self.layout.values())
        self.regions = regions or {}

    # token helpers
    @property
    def cur(self) -> Token:
        return self.toks[self.i]

    def peek(self, k=1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, msg, tok=None):
        tok = tok or self.cur
        raise ParseError(msg, tok.line, tok.col)

    def accept(self, text) -> Token | None:
        if self.cur.text == text and self.cur.kind != "eof":
            tok = self.cur
            self.i += 1
            return tok
        return None

    def expect(self, text) -> Token:
        tok = self.accept(text)
        if tok is None:
            found = self.cur.text or "end of input"
            self.error(f"expected {text!r}, found {found!r}")
        return tok

    def expect_int(self) -> int:
        tok = self.cur
        if tok.kind == "num" and re.fullmatch(r"\d+", tok.text):
            self.i += 1
            return int(tok.text)
        if tok.text == "-" and self.peek().kind == "num":
            self.error("negative interval bound")
        self.error(f"expected integer, found {tok.text or 'end of input'!r}")

    def expect_number(self) -> float:
        sign = -1.0 if self.accept("-") else 1.0
        tok = self.cur
        if tok.kind != "num":
            self.error(f"expected number, found {tok.text or 'end of input'!r}")
        self.i += 1
        return sign * float(tok.text)

    # grammar
    def parse(self) -> Formula:
        node = self.formula()
        if self.cur.kind != "eof":
            self.error(f"unexpected token {self.cur.text!r}")
        return node

    def formula(self) -> Formula:
        args = [self.and_f()]
        while self.accept("||"):
            args.append(self.and_f())
        return args[0] if len(args) == 1 else Or(tuple(args))

    def and_f(self) -> Formula:
        args = [self.until_f()]
        while self.accept("&&"):
            args.append(self.until_f())
        return args[0] if len(args) == 1 else And(tuple(args))

    def interval(self) -> tuple[int, int]:
        start = self.expect("[")
        a = self.expect_int()
        self.expect(",")
        b = self.expect_int()
        if self.cur.text != "]":
            self.error(f"unclosed interval, expected ']' found {self.cur.text or 'end of input'!r}")
        self.i += 1
        if a > b:
            self.error(f"inverted interval [{a},{b}]", start)
        return a, b

    def until_f(self) -> Formula:
        left = self.unary()
        if self.cur.kind == "name" and self.cur.text == "U":
            self.i += 1
            a, b = self.interval()
            right = self.unary()
            return Until(a, b, left, right)
        return left

    def unary(self) -> Formula:
        if self.accept("!"):
            return Not(self.unary())
        tok = self.cur
        if tok.kind == "name" and tok.text in ("G", "F") and self.peek().text == "[":
            self.i += 1
            a, b = self.interval()
            child = self.unary()
            return Always(a, b, child) if tok.text == "G" else Eventually(a, b, child)
        return self.primary()

    def primary(self) -> Formula:
        if self.accept("("):
            node = self.formula()
            self.expect(")")
            return node
        tok = self.cur
        if tok.kind == "name" and tok.text == "true":
            self.i += 1
            return TrueF()
        if tok.kind == "name" and tok.text == "in_box":
            return self.in_box()
        if tok.kind == "name" and tok.text == "near":
            return self.near()
        if tok.kind in ("name", "num") or tok.text == "-":
            return self.comparison()
        self.error(f"unexpected token {tok.text or 'end of input'!r}")

    def signal(self) -> str:
        tok = self.cur
        if tok.kind != "name" or tok.text in KEYWORDS:
            self.error(f"expected signal name, found {tok.text or 'end of input'!r}")
        if tok.text not in self.layout:
            self.error(f"unknown signal {tok.text!r}")
        self.i += 1
        return tok.text

    def in_box(self) -> Formula:
        self.i += 1
        self.expect("(")
        sig = self.signal()
        self.expect(",")
        rtok = self.cur
        if rtok.kind != "name":
            self.error("expected region name")
        self.i += 1
        self.expect(")")
        if rtok.text not in self.regions:
            self.error(f"unknown region {rtok.text!r}", rtok)
        lo, hi = (np.asarray(v, dtype=float).reshape(-1) for v in self.regions[rtok.text])
        d = self.layout[sig]
        if lo.size != d or hi.size != d:
            self.error(f"region {rtok.text!r} has dimension {lo.size}, signal {sig!r} has {d}", rtok)
        sl = self.slices[sig]
        preds = []
        for k in range(d):
            a = np.zeros(self.dim)
            a[sl.start + k] = 1.0
            preds.append(Pred(a, -lo[k], (sig,), f"{sig}[{k}] >= {lo[k]:g}"))
            preds.append(Pred(-a, hi[k], (sig,), f"{sig}[{k}] <= {hi[k]:g}"))
        return And(tuple(preds))

    def near(self) -> Formula:
        self.i += 1
        self.expect("(")
        s1 = self.signal()
        self.expect(",")
        s2 = self.signal()
        self.expect(",")
        dist = self.expect_number()
        self.expect(")")
        if s1 == s2:
            self.error("near() needs two distinct signals")
        d = self.layout[s1]
        if self.layout[s2] != d:
            self.error(f"near() signals differ in dimension ({d} vs {self.layout[s2]})")
        sl1, sl2 = self.slices[s1], self.slices[s2]
        preds = []
        for k in range(d):
            a = np.zeros(self.dim)
            a[sl1.start + k] = 1.0
            a[sl2.start + k] = -1.0
            lab = f"|{s1}[{k}] - {s2}[{k}]| <= {dist:g}"
            preds.append(Pred(-a, dist, (s1, s2), lab))
            preds.append(Pred(a, dist, (s1, s2), lab))
        return And(tuple(preds))

    def linexpr(self) -> tuple[np.ndarray, float, set]:
        coeffs, const, used = np.zeros(self.dim), 0.0, set()
        sign = -1.0 if self.accept("-") else 1.0
        while True:
            c, k, names = self.term()
            coeffs += sign * c
            const += sign * k
            used |= names
            if self.accept("+"):
                sign = 1.0
            elif self.accept("-"):
                sign = -1.0
            else:
                return coeffs, const, used

    def term(self):
        c = np.zeros(self.dim)
        tok = self.cur
        if tok.kind == "num":
            value = float(tok.text)
            self.i += 1
            if not self.accept("*"):
                return c, value, set()
            name, idx = self.ref()
            c[idx] = value
            return c, 0.0, {name}
        name, idx = self.ref()
        c[idx] = 1.0
        return c, 0.0, {name}

    def ref(self) -> tuple[str, int]:
        tok = self.cur
        name = self.signal()
        d = self.layout[name]
        if self.accept("["):
            k = self.expect_int()
            self.expect("]")
            if k >= d:
                self.error(f"index {k} out of range for {name!r} of dimension {d}", tok)
        elif d == 1:
            k = 0
        else:
            self.error(f"signal {name!r} has dimension {d}; index it as {name}[k]", tok)
        return name, self.slices[name].start + k

    def comparison(self) -> Formula:
        start = self.cur
        lc, lk, lnames = self.linexpr()
        if self.accept(">="):
            flip = 1.0
        elif self.accept("<="):
            flip = -1.0
        else:
            self.error(f"expected '>=' or '<=', found {self.cur.text or 'end of input'!r}")
        rc, rk, rnames = self.linexpr()
        a, b = flip * (lc - rc), flip * (lk - rk)
        if not np.any(a != 0.0):
            self.error("predicate does not depend on any signal", start)
        names = tuple(n for n in self.layout if n in (lnames | rnames))
        return Pred(a, b, names)


def parse_formula(
    text: str,
    signal_dims: Mapping[str, int] | Sequence[tuple[str, int]],
    regions: Mapping[str, tuple] | None = None,
) -> StlFormula:
    """Parse ``text`` into an :class:`StlFormula` over ``signal_dims``.

    ``regions`` maps a region name to ``(lo, hi)`` box corners.
    """
    layout = dict(signal_dims)
    for name, d in layout.items():
        if name in KEYWORDS:
            raise ValueError(f"signal name {name!r} is reserved")
        if int(d) != d or d < 1:
            raise ValueError(f"signal {name!r} has invalid dimension {d}")
    root = _Parser(text, layout, regions).parse()
    return StlFormula(root, layout, text)
