"""Shared helpers: an independent robustness oracle and random formula builders."""

from __future__ import annotations

import numpy as np
import pytest

from cpstl.stl import Always, And, Eventually, Not, Or, Pred, StlFormula, TrueF, Until


def oracle_rho(node, y, t):
    """Textbook recursion over explicit time indices (no vectorization)."""
    if isinstance(node, TrueF):
        return np.inf
    if isinstance(node, Pred):
        return float(np.dot(node.coeffs, y[t]) + node.offset)
    if isinstance(node, Not):
        return -oracle_rho(node.child, y, t)
    if isinstance(node, And):
        return min(oracle_rho(c, y, t) for c in node.args)
    if isinstance(node, Or):
        return max(oracle_rho(c, y, t) for c in node.args)
    if isinstance(node, Eventually):
        return max(oracle_rho(node.child, y, s) for s in range(t + node.a, t + node.b + 1))
    if isinstance(node, Always):
        return min(oracle_rho(node.child, y, s) for s in range(t + node.a, t + node.b + 1))
    if isinstance(node, Until):
        best = -np.inf
        for tau in range(t + node.a, t + node.b + 1):
            v = oracle_rho(node.right, y, tau)
            for s in range(t, tau + 1):
                v = min(v, oracle_rho(node.left, y, s))
            best = max(best, v)
        return best
    raise TypeError(type(node))


def random_node(rng: np.random.Generator, D: int, depth: int):
    if depth == 0 or rng.random() < 0.25:
        a = rng.normal(size=D)
        if not np.any(a):
            a[0] = 1.0
        return Pred(a, float(rng.normal()), ("y",))
    k = rng.integers(6)
    if k == 0:
        return Not(random_node(rng, D, depth - 1))
    if k in (1, 2):
        args = tuple(random_node(rng, D, depth - 1) for _ in range(rng.integers(2, 4)))
        return And(args) if k == 1 else Or(args)
    a = int(rng.integers(0, 3))
    b = a + int(rng.integers(0, 3))
    if k == 3:
        return Eventually(a, b, random_node(rng, D, depth - 1))
    if k == 4:
        return Always(a, b, random_node(rng, D, depth - 1))
    return Until(a, b, random_node(rng, D, depth - 1), random_node(rng, D, depth - 1))


def random_formula(rng: np.random.Generator, D: int = 2, depth: int = 4) -> StlFormula:
    return StlFormula(random_node(rng, D, depth), {"y": D})


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""
    def record(k: int, ok: bool, detail: str) -> None:
        line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
