"""STL abstract syntax tree.

Formulas are bound to a *signal layout*: an ordered mapping from signal name
(``x1``, ``x2``, ...) to its dimension.  Predicates store a dense coefficient
vector over the concatenation of all signals in the layout, so a formula can
be evaluated directly on a stacked trace of shape ``(T, D)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np


class Formula:
    """Base class of all STL nodes."""

    children: tuple["Formula", ...] = ()

    @property
    def horizon(self) -> int:
        raise NotImplementedError

    def walk(self) -> Iterator["Formula"]:
        yield self
        for c in self.children:
            yield from c.walk()

    def predicates(self) -> list["Pred"]:
        return [n for n in self.walk() if isinstance(n, Pred)]

    # Operator sugar, handy when building formulas programmatically.
    def __and__(self, other: "Formula") -> "And":
        return And((self, other))

    def __or__(self, other: "Formula") -> "Or":
        return Or((self, other))

    def __invert__(self) -> "Not":
        return Not(self)


@dataclass(frozen=True, eq=False)
class TrueF(Formula):
    @property
    def horizon(self) -> int:
        return 0

    def __repr__(self) -> str:
        return "TrueF()"


@dataclass(frozen=True, eq=False)
class Pred(Formula):
    """Affine predicate ``coeffs @ y + offset >= 0``."""

    coeffs: np.ndarray
    offset: float = 0.0
    signals: tuple[str, ...] = ()
    label: str = ""

    def __post_init__(self):
        a = np.asarray(self.coeffs, dtype=float).reshape(-1) + 0.0
        if not np.any(a != 0.0):
            raise ValueError("predicate needs at least one nonzero coefficient")
        object.__setattr__(self, "coeffs", a)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def horizon(self) -> int:
        return 0

    def __repr__(self) -> str:
        return f"Pred(a={self.coeffs.tolist()}, b={self.offset})"


@dataclass(frozen=True, eq=False)
class Not(Formula):
    child: Formula

    @property
    def children(self):
        return (self.child,)

    @property
    def horizon(self) -> int:
        return self.child.horizon


@dataclass(frozen=True, eq=False)
class And(Formula):
    args: tuple[Formula, ...]

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if len(self.args) == 0:
            raise ValueError("And needs at least one operand")

    @property
    def children(self):
        return self.args

    @property
    def horizon(self) -> int:
        return max(a.horizon for a in self.args)


@dataclass(frozen=True, eq=False)
class Or(Formula):
    args: tuple[Formula, ...]

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if len(self.args) == 0:
            raise ValueError("Or needs at least one operand")

    @property
    def children(self):
        return self.args

    @property
    def horizon(self) -> int:
        return max(a.horizon for a in self.args)


def _check_interval(a: int, b: int) -> None:
    if int(a) != a or int(b) != b:
        raise ValueError(f"interval bounds must be integers, got [{a},{b}]")
    if a < 0 or b < 0:
        raise ValueError(f"negative interval bound [{a},{b}]")
    if a > b:
        raise ValueError(f"inverted interval [{a},{b}]")


@dataclass(frozen=True, eq=False)
class Until(Formula):
    a: int
    b: int
    left: Formula
    right: Formula

    def __post_init__(self):
        _check_interval(self.a, self.b)

    @property
    def children(self):
        return (self.left, self.right)

    @property
    def horizon(self) -> int:
        return self.b + max(self.left.horizon, self.right.horizon)


@dataclass(frozen=True, eq=False)
class Eventually(Formula):
    a: int
    b: int
    child: Formula

    def __post_init__(self):
        _check_interval(self.a, self.b)

    @property
    def children(self):
        return (self.child,)

    @property
    def horizon(self) -> int:
        return self.b + self.child.horizon


@dataclass(frozen=True, eq=False)
class Always(Formula):
    a: int
    b: int
    child: Formula

    def __post_init__(self):
        _check_interval(self.a, self.b)

    @property
    def children(self):
        return (self.child,)

    @property
    def horizon(self) -> int:
        return self.b + self.child.horizon


@dataclass(eq=False)
class StlFormula:
    """A parsed formula together with the signal layout it reads."""

    root: Formula
    layout: dict[str, int]
    text: str = ""
    horizon: int = field(init=False)

    def __post_init__(self):
        self.layout = dict(self.layout)
        self.horizon = self.root.horizon
        dim = self.dim
        for p in self.root.predicates():
            if p.coeffs.size != dim:
                raise ValueError(
                    f"predicate has {p.coeffs.size} coefficients, layout has {dim}"
                )
            unknown = set(p.signals) - set(self.layout)
            if unknown:
                raise ValueError(f"predicate reads signals outside layout: {sorted(unknown)}")

    @property
    def dim(self) -> int:
        return sum(self.layout.values())

    @property
    def signals(self) -> tuple[str, ...]:
        return tuple(self.layout)

    def slices(self) -> dict[str, slice]:
        return layout_slices(self.layout)

    def __repr__(self) -> str:
        return f"StlFormula({self.text or self.root!r}, horizon={self.horizon})"


def layout_slices(layout: Mapping[str, int]) -> dict[str, slice]:
    out, start = {}, 0
    for name, d in layout.items():
        out[name] = slice(start, start + d)
        start += d
    return out


def max_read_index(node: Formula) -> int:
    """Farthest time offset read when ``node`` is evaluated at time 0.

    Independent of ``horizon``: it scans the tree instead of applying the
    horizon recursion, so the two can be checked against each other.
    """
    if isinstance(node, (Pred, TrueF)):
        return 0
    if isinstance(node, (Eventually, Always)):
        return max(k + max_read_index(node.child) for k in range(node.a, node.b + 1))
    if isinstance(node, Until):
        # left is read on [0, tau], right at tau, tau in [a, b]
        return max(
            max(tau + max_read_index(node.right), tau + max_read_index(node.left))
            for tau in range(node.a, node.b + 1)
        )
    return max(max_read_index(c) for c in node.children)


def read_window(node: Formula) -> tuple[int, int]:
    """Earliest and latest time offsets at which predicates are read."""
    if isinstance(node, Pred):
        return 0, 0
    if isinstance(node, TrueF):
        return 10**9, -1
    if isinstance(node, (Eventually, Always)):
        lo, hi = read_window(node.child)
        return lo + node.a, hi + node.b
    if isinstance(node, Until):
        llo, lhi = read_window(node.left)
        rlo, rhi = read_window(node.right)
        return min(llo, rlo + node.a), max(lhi + node.b, rhi + node.b)
    spans = [read_window(c) for c in node.children]
    return min(s[0] for s in spans), max(s[1] for s in spans)


def lipschitz_constant(phi: StlFormula | Formula, norm: str | float = "inf") -> float:
    """Lipschitz constant of the robustness w.r.t. the trace.

    The trace metric is ``max_t ||y(t)||`` in the chosen vector norm, so the
    constant is the largest dual norm of a predicate coefficient vector:
    ``||a||_1`` for the inf-norm and ``||a||_2`` for the 2-norm.
    """
    root = phi.root if isinstance(phi, StlFormula) else phi
    dual = {"inf": 1, np.inf: 1, "2": 2, 2: 2}.get(norm)
    if dual is None:
        raise ValueError(f"unsupported norm {norm!r}")
    preds = root.predicates()
    if not preds:
        return 0.0
    return max(float(np.linalg.norm(p.coeffs, ord=dual)) for p in preds)


def to_text(node: Formula) -> str:
    """Readable rendering, mostly for debugging and reports."""
    if isinstance(node, TrueF):
        return "true"
    if isinstance(node, Pred):
        return node.label or f"({node.coeffs.tolist()}.y + {node.offset:g} >= 0)"
    if isinstance(node, Not):
        return f"!({to_text(node.child)})"
    if isinstance(node, And):
        return "(" + " && ".join(to_text(a) for a in node.args) + ")"
    if isinstance(node, Or):
        return "(" + " || ".join(to_text(a) for a in node.args) + ")"
    if isinstance(node, Eventually):
        return f"F[{node.a},{node.b}]({to_text(node.child)})"
    if isinstance(node, Always):
        return f"G[{node.a},{node.b}]({to_text(node.child)})"
    if isinstance(node, Until):
        return f"({to_text(node.left)}) U[{node.a},{node.b}] ({to_text(node.right)})"
    raise TypeError(type(node))
