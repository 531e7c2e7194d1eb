"""Signal temporal logic: syntax, parsing and semantics."""

from .formula import (
    Always, And, Eventually, Formula, Not, Or, Pred, StlFormula, TrueF, Until,
    lipschitz_constant, max_read_index, read_window, to_text,
)
from .parser import ParseError, parse_formula
from .semantics import (
    Trace, TraceTooShort, eval_boolean, eval_robustness, robustness_signal,
    satisfied, smooth_robustness, smoothing_gap, trace_from_signals,
)

__all__ = [
    "Always", "And", "Eventually", "Formula", "Not", "Or", "Pred", "StlFormula",
    "TrueF", "Until", "lipschitz_constant", "max_read_index", "read_window",
    "to_text", "ParseError", "parse_formula", "Trace", "TraceTooShort",
    "eval_boolean", "eval_robustness", "robustness_signal", "satisfied",
    "smooth_robustness", "smoothing_gap", "trace_from_signals",
]
