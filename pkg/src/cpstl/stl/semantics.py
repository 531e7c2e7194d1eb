"""Boolean, quantitative and smoothed STL semantics.

Quantitative evaluation is vectorised: every node produces its robustness
signal for all admissible start times at once, and (when requested) a
backward closure accumulating the gradient w.r.t. the trace.

Smoothing modes:

``"exact"``
    hard min/max (subgradient picks the first extremal argument)
``"smooth"``
    min -> soft-min, max -> soft-max (log-sum-exp both ways)
``"lower"``
    certified lower bound of the exact robustness: soft-min, and soft-max
    shifted down by ``log(m)/beta``
``"upper"``
    certified upper bound (mirror image); negation swaps lower and upper
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np

from .formula import (
    Always, And, Eventually, Formula, Not, Or, Pred, StlFormula, TrueF, Until,
    layout_slices,
)

_FLIP = {"exact": "exact", "smooth": "smooth", "lower": "upper", "upper": "lower"}


class TraceTooShort(ValueError):
    pass


@dataclass
class Trace:
    """Stacked samples ``x(0..T-1)`` with a name -> dimension layout."""

    samples: np.ndarray
    layout: dict[str, int]

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2:
            raise ValueError("trace samples must be a (T, D) array")
        self.samples = s
        self.layout = dict(self.layout)
        if sum(self.layout.values()) != s.shape[1]:
            raise ValueError(
                f"layout dimension {sum(self.layout.values())} != sample dimension {s.shape[1]}"
            )

    def __len__(self) -> int:
        return self.samples.shape[0]

    def signal(self, name: str) -> np.ndarray:
        return self.samples[:, layout_slices(self.layout)[name]]


def _as_array(phi: StlFormula, tr) -> np.ndarray:
    if isinstance(tr, Trace):
        if list(tr.layout.items()) != list(phi.layout.items()):
            raise ValueError(f"trace layout {tr.layout} does not match formula layout {phi.layout}")
        y = tr.samples
    else:
        y = np.asarray(tr, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
    if y.shape[1] != phi.dim:
        raise ValueError(f"trace has dimension {y.shape[1]}, formula expects {phi.dim}")
    return y


def _check_length(phi: StlFormula, y: np.ndarray, t: int) -> None:
    if t < 0:
        raise ValueError("time index must be nonnegative")
    if t + phi.horizon > y.shape[0] - 1:
        raise TraceTooShort(
            f"trace of length {y.shape[0]} too short for horizon {phi.horizon} at t={t}"
        )


# ---------------------------------------------------------------- Boolean

def _sat(node: Formula, y: np.ndarray, t: int) -> bool:
    if isinstance(node, TrueF):
        return True
    if isinstance(node, Pred):
        return bool(node.coeffs @ y[t] + node.offset >= 0.0)
    if isinstance(node, Not):
        return not _sat(node.child, y, t)
    if isinstance(node, And):
        return all(_sat(c, y, t) for c in node.args)
    if isinstance(node, Or):
        return any(_sat(c, y, t) for c in node.args)
    if isinstance(node, Eventually):
        return any(_sat(node.child, y, tau) for tau in range(t + node.a, t + node.b + 1))
    if isinstance(node, Always):
        return all(_sat(node.child, y, tau) for tau in range(t + node.a, t + node.b + 1))
    if isinstance(node, Until):
        return any(
            _sat(node.right, y, tau)
            and all(_sat(node.left, y, s) for s in range(t, tau + 1))
            for tau in range(t + node.a, t + node.b + 1)
        )
    raise TypeError(type(node))


def eval_boolean(phi: StlFormula, tr, t: int = 0) -> bool:
    y = _as_array(phi, tr)
    _check_length(phi, y, t)
    return _sat(phi.root, y, t)


# ---------------------------------------------------------- quantitative

def _reduce(V: np.ndarray, kind: str, mode: str, beta: float | None):
    """Row-wise min/max of ``V`` (last axis) and its Jacobian weights.

    ``+inf`` entries are neutral for min, ``-inf`` for max, which also
    serves as padding for ragged groups.
    """
    sgn = 1.0 if kind == "max" else -1.0
    U = sgn * V  # reduce as a max
    top = U.max(axis=-1)
    if mode == "exact":
        arg = U.argmax(axis=-1)
        W = np.zeros_like(V)
        np.put_along_axis(W, arg[..., None], 1.0, axis=-1)
        return sgn * top, W
    finite_top = np.isfinite(top)
    if finite_top.all():
        # common case: no row is all-neutral, so no masking is needed
        E = np.exp(beta * (U - top[..., None]))
        S = E.sum(axis=-1)
        out = top + np.log(S) / beta
        W = E / S[..., None]
        if (mode == "lower" and kind == "max") or (mode == "upper" and kind == "min"):
            m = np.maximum(np.sum(U > -np.inf, axis=-1), 1)
            out = out - np.log(m) / beta
        return sgn * out, W
    safe_top = np.where(finite_top, top, 0.0)
    with np.errstate(invalid="ignore"):
        E = np.exp(beta * (U - safe_top[..., None]))
    E = np.where(np.isnan(E), 0.0, E)
    S = E.sum(axis=-1)
    with np.errstate(divide="ignore"):
        out = safe_top + np.log(np.where(finite_top, S, 1.0)) / beta
    out = np.where(finite_top, out, top)
    W = np.where(finite_top[..., None], E / np.where(S > 0, S, 1.0)[..., None], 0.0)
    if (mode == "lower" and kind == "max") or (mode == "upper" and kind == "min"):
        m = np.maximum(np.sum(U > -np.inf, axis=-1), 1)
        out = out - np.log(m) / beta
    return sgn * out, W


@lru_cache(maxsize=4096)
def _window_index(length: int, a: int, b: int) -> np.ndarray:
    return np.arange(length)[:, None] + np.arange(a, b + 1)[None, :]


@lru_cache(maxsize=4096)
def _until_index(length: int, a: int, b: int):
    # rows t, candidate tau = t + j (j in [a, b]), columns: right at tau, then left at t..t+b
    nj = b - a + 1
    js = np.arange(a, b + 1)
    t = np.arange(length)[:, None, None]
    right_idx = (t + js[None, :, None])[..., 0]                     # (L, nj)
    cols = np.arange(b + 1)
    left_idx = np.broadcast_to(t + cols[None, None, :], (length, nj, b + 1))
    left_mask = cols[None, None, :] <= js[None, :, None]            # (1, nj, b+1)
    return right_idx, np.ascontiguousarray(left_idx), np.broadcast_to(left_mask, (length, nj, b + 1))


@lru_cache(maxsize=4096)
def _pred_block(node: Formula):
    """Stacked ``(A, b)`` when every argument of a conjunction/disjunction is a predicate."""
    if not all(isinstance(c, Pred) for c in node.args):
        return None
    return (np.array([c.coeffs for c in node.args], dtype=float),
            np.array([c.offset for c in node.args], dtype=float))


class _Eval:
    def __init__(self, y: np.ndarray, mode: str, beta: float | None, want_grad: bool):
        self.y = y
        self.T = y.shape[0]
        self.mode = mode
        self.beta = beta
        self.want_grad = want_grad
        self.grad = np.zeros_like(y) if want_grad else None

    def run(self, node: Formula, mode: str) -> tuple[np.ndarray, Callable | None]:
        if isinstance(node, TrueF):
            return np.full(self.T, np.inf), None
        if isinstance(node, Pred):
            vals = self.y @ node.coeffs + node.offset
            if not self.want_grad:
                return vals, None

            def back(g, a=node.coeffs):
                self.grad[: g.size] += g[:, None] * a[None, :]
            return vals, back
        if isinstance(node, Not):
            vals, cb = self.run(node.child, _FLIP[mode])
            if cb is None:
                return -vals, None
            return -vals, (lambda g: cb(-g))
        if isinstance(node, (And, Or)) and _pred_block(node) is not None:
            A, b = _pred_block(node)
            V = self.y @ A.T + b
            out, W = _reduce(V, "min" if isinstance(node, And) else "max", mode, self.beta)
            if not self.want_grad:
                return out, None

            def back(g):
                k = g.size
                self.grad[:k] += (g[:, None] * W[:k]) @ A
            return out, back
        if isinstance(node, (And, Or)):
            parts = [self.run(c, mode) for c in node.args]
            L = min(v.size for v, _ in parts)
            V = np.stack([v[:L] for v, _ in parts], axis=1)
            out, W = _reduce(V, "min" if isinstance(node, And) else "max", mode, self.beta)
            if not self.want_grad:
                return out, None

            def back(g):
                # parents may pass a truncated gradient; only its rows count
                k = g.size
                for j, (_, cb) in enumerate(parts):
                    if cb is not None:
                        cb(g * W[:k, j])
            return out, back
        if isinstance(node, (Eventually, Always)):
            c, cb = self.run(node.child, mode)
            L = c.size - node.b
            if L <= 0:
                raise TraceTooShort("trace too short for temporal operator")
            idx = _window_index(L, node.a, node.b)
            out, W = _reduce(c[idx], "max" if isinstance(node, Eventually) else "min",
                             mode, self.beta)
            if not self.want_grad or cb is None:
                return out, None

            def back(g, n=c.size):
                k = g.size
                gc = np.zeros(n)
                np.add.at(gc, idx[:k], g[:, None] * W[:k])
                cb(gc)
            return out, back
        if isinstance(node, Until):
            c1, cb1 = self.run(node.left, mode)
            c2, cb2 = self.run(node.right, mode)
            L = min(c1.size, c2.size) - node.b
            if L <= 0:
                raise TraceTooShort("trace too short for until")
            ridx, lidx, lmask = _until_index(L, node.a, node.b)
            inner = np.concatenate(
                [c2[ridx][..., None], np.where(lmask, c1[lidx], np.inf)], axis=-1
            )
            mid, Wi = _reduce(inner, "min", mode, self.beta)        # (L, nj)
            out, Wo = _reduce(mid, "max", mode, self.beta)           # (L,)
            if not self.want_grad:
                return out, None

            def back(g):
                k = g.size
                gi = (g[:, None] * Wo[:k])[..., None] * Wi[:k]         # (k, nj, b+2)
                if cb2 is not None:
                    g2 = np.zeros(c2.size)
                    np.add.at(g2, ridx[:k], gi[..., 0])
                    cb2(g2)
                if cb1 is not None:
                    g1 = np.zeros(c1.size)
                    np.add.at(g1, lidx[:k], np.where(lmask[:k], gi[..., 1:], 0.0))
                    cb1(g1)
            return out, back
        raise TypeError(type(node))


def robustness_signal(phi: StlFormula, tr) -> np.ndarray:
    """Exact robustness at every admissible start time ``0..T-1-horizon``."""
    y = _as_array(phi, tr)
    _check_length(phi, y, 0)
    vals, _ = _Eval(y, "exact", None, False).run(phi.root, "exact")
    return vals


def eval_robustness(phi: StlFormula, tr, t: int = 0) -> float:
    y = _as_array(phi, tr)
    _check_length(phi, y, t)
    vals, _ = _Eval(y[t:], "exact", None, False).run(phi.root, "exact")
    return float(vals[0])


def smooth_robustness(phi: StlFormula, tr, t: int = 0, beta: float = 10.0,
                      mode: str = "smooth", grad: bool = True):
    """Smoothed robustness at time ``t`` and its gradient w.r.t. the trace.

    Returns ``(value, gradient)`` where the gradient has the trace's
    ``(T, D)`` shape (rows before ``t`` are zero).  With ``mode="exact"`` the
    gradient is a subgradient.
    """
    if mode not in _FLIP:
        raise ValueError(f"unknown mode {mode!r}")
    if mode != "exact" and not beta > 0:
        raise ValueError("smoothing temperature beta must be positive")
    y = _as_array(phi, tr)
    _check_length(phi, y, t)
    ev = _Eval(y[t:], mode, beta, grad)
    vals, back = ev.run(phi.root, mode)
    value = float(vals[0])
    if not grad:
        return value, None
    if back is not None:
        g = np.zeros(vals.size)
        g[0] = 1.0
        back(g)
    full = np.zeros_like(y)
    full[t:] = ev.grad
    return value, full


def fan_in_log_sum(node: Formula) -> float:
    """Largest root-to-leaf sum of ``log(fan-in)`` over min/max nodes."""
    if isinstance(node, (Pred, TrueF)):
        return 0.0
    if isinstance(node, Not):
        return fan_in_log_sum(node.child)
    if isinstance(node, (And, Or)):
        return np.log(len(node.args)) + max(fan_in_log_sum(c) for c in node.args)
    if isinstance(node, (Eventually, Always)):
        return np.log(node.b - node.a + 1) + fan_in_log_sum(node.child)
    if isinstance(node, Until):
        return (np.log(node.b - node.a + 1) + np.log(node.b + 2)
                + max(fan_in_log_sum(node.left), fan_in_log_sum(node.right)))
    raise TypeError(type(node))


def smoothing_gap(phi: StlFormula | Formula, beta: float) -> float:
    """Bound on ``|smooth - exact|`` (and on the certified-bound slack)."""
    root = phi.root if isinstance(phi, StlFormula) else phi
    return float(fan_in_log_sum(root) / beta)


def satisfied(phi: StlFormula, tr, t: int = 0) -> bool:
    """Satisfaction through robustness; exact zero counts as satisfied."""
    return eval_robustness(phi, tr, t) >= 0.0


def trace_from_signals(signals: Mapping[str, np.ndarray]) -> Trace:
    arrays = {k: np.atleast_2d(np.asarray(v, dtype=float).T).T for k, v in signals.items()}
    layout = {k: v.shape[1] for k, v in arrays.items()}
    return Trace(np.concatenate(list(arrays.values()), axis=1), layout)
