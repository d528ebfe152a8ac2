"""Evaluation of terms and quantifier-free formulas over transition pairs.

Two independent paths exist on purpose: :func:`eval_term`/:func:`eval_formula`
are direct recursive interpreters, while :func:`compile_term`/
:func:`compile_formula` build nested closures for the hot simulation and
monitoring loops.  Tests cross-check one against the other.

Equality comparisons use an absolute tolerance (``|l-r| <= tol``) because
numerically integrated traces never satisfy exact equalities; all other
comparisons are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict

from .syntax import (
    And, Cmp, Const, Divide, Equiv, FalseF, Formula, Func, Implies, Max, Min,
    Minus, Neg, Not, Or, Plus, Power, Term, Times, TrueF, Var, base_name,
    is_post,
)

DEFAULT_TOL = 1e-9

State = Dict[str, float]

_BUILTINS: dict[str, Callable[..., float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "sqrt": math.sqrt,
    "exp": math.exp,
    "abs": abs,
}


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class TransitionPair:
    """Pre/post state pair; plain ``x`` reads pre, ``x_post`` reads post."""

    pre: State
    post: State = field(default_factory=dict)


def state_pair(state: State) -> TransitionPair:
    """Single-state view: post-state variables are undeclared."""
    return TransitionPair(state, {})


def _lookup(pair: TransitionPair, name: str) -> float:
    try:
        if is_post(name):
            return pair.post[base_name(name)]
        return pair.pre[name]
    except KeyError:
        raise EvalError(f"undeclared variable {name!r}") from None


def eval_term(t: Term, pair: TransitionPair) -> float:
    if isinstance(t, Var):
        return _lookup(pair, t.name)
    if isinstance(t, Const):
        return t.value
    if isinstance(t, Plus):
        return eval_term(t.left, pair) + eval_term(t.right, pair)
    if isinstance(t, Minus):
        return eval_term(t.left, pair) - eval_term(t.right, pair)
    if isinstance(t, Times):
        return eval_term(t.left, pair) * eval_term(t.right, pair)
    if isinstance(t, Divide):
        denom = eval_term(t.right, pair)
        if denom == 0.0:
            raise EvalError(f"division by zero in {t}")
        return eval_term(t.left, pair) / denom
    if isinstance(t, Power):
        return eval_term(t.base, pair) ** t.exponent
    if isinstance(t, Neg):
        return -eval_term(t.arg, pair)
    if isinstance(t, Min):
        return min(eval_term(t.left, pair), eval_term(t.right, pair))
    if isinstance(t, Max):
        return max(eval_term(t.left, pair), eval_term(t.right, pair))
    if isinstance(t, Func):
        fn = _BUILTINS.get(t.name)
        if fn is None:
            raise EvalError(f"opaque function symbol {t.name!r} cannot be evaluated")
        return fn(*(eval_term(a, pair) for a in t.args))
    raise TypeError(f"not a term: {t!r}")


def compare(op: str, left: float, right: float, tol: float) -> bool:
    if op == "=":
        return abs(left - right) <= tol
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    if op == ">=":
        return left >= right
    raise EvalError(f"unknown comparison operator {op!r}")


def eval_formula(f: Formula, pair: TransitionPair, tol: float = DEFAULT_TOL) -> bool:
    """Truth value of a quantifier-free, modality-free formula.

    ``tol`` must be nonnegative and applies to ``=`` comparisons only.
    """
    if tol < 0:
        raise EvalError("tolerance must be nonnegative")
    return _eval(f, pair, tol)


def _eval(f: Formula, pair: TransitionPair, tol: float) -> bool:
    if isinstance(f, TrueF):
        return True
    if isinstance(f, FalseF):
        return False
    if isinstance(f, Cmp):
        return compare(f.op, eval_term(f.left, pair), eval_term(f.right, pair), tol)
    if isinstance(f, Not):
        return not _eval(f.arg, pair, tol)
    if isinstance(f, And):
        return _eval(f.left, pair, tol) and _eval(f.right, pair, tol)
    if isinstance(f, Or):
        return _eval(f.left, pair, tol) or _eval(f.right, pair, tol)
    if isinstance(f, Implies):
        return (not _eval(f.left, pair, tol)) or _eval(f.right, pair, tol)
    if isinstance(f, Equiv):
        return _eval(f.left, pair, tol) == _eval(f.right, pair, tol)
    raise EvalError(f"cannot evaluate quantifier or modality in {type(f).__name__}")


# ---------------------------------------------------------------------------
# Closure compilation (hot path)
# ---------------------------------------------------------------------------

TermFn = Callable[[State, State], float]
FormulaFn = Callable[[State, State, float], bool]


def compile_term(t: Term) -> TermFn:
    """Compile a term to a closure ``fn(pre, post) -> float``.

    Undeclared variables surface as ``KeyError``; callers on the hot path
    wrap whole steps rather than individual lookups.
    """
    if isinstance(t, Var):
        if is_post(t.name):
            key = base_name(t.name)
            return lambda pre, post: post[key]
        key = t.name
        return lambda pre, post: pre[key]
    if isinstance(t, Const):
        v = t.value
        return lambda pre, post: v
    if isinstance(t, Plus):
        l, r = compile_term(t.left), compile_term(t.right)
        return lambda pre, post: l(pre, post) + r(pre, post)
    if isinstance(t, Minus):
        l, r = compile_term(t.left), compile_term(t.right)
        return lambda pre, post: l(pre, post) - r(pre, post)
    if isinstance(t, Times):
        l, r = compile_term(t.left), compile_term(t.right)
        return lambda pre, post: l(pre, post) * r(pre, post)
    if isinstance(t, Divide):
        l, r = compile_term(t.left), compile_term(t.right)

        def div(pre, post):
            denom = r(pre, post)
            if denom == 0.0:
                raise EvalError("division by zero")
            return l(pre, post) / denom

        return div
    if isinstance(t, Power):
        b, k = compile_term(t.base), t.exponent
        return lambda pre, post: b(pre, post) ** k
    if isinstance(t, Neg):
        a = compile_term(t.arg)
        return lambda pre, post: -a(pre, post)
    if isinstance(t, Min):
        l, r = compile_term(t.left), compile_term(t.right)
        return lambda pre, post: min(l(pre, post), r(pre, post))
    if isinstance(t, Max):
        l, r = compile_term(t.left), compile_term(t.right)
        return lambda pre, post: max(l(pre, post), r(pre, post))
    if isinstance(t, Func):
        fn = _BUILTINS.get(t.name)
        if fn is None:
            raise EvalError(f"opaque function symbol {t.name!r} cannot be compiled")
        args = tuple(compile_term(a) for a in t.args)
        return lambda pre, post: fn(*(a(pre, post) for a in args))
    raise TypeError(f"not a term: {t!r}")


def compile_formula(f: Formula) -> FormulaFn:
    """Compile a quantifier-free formula to ``fn(pre, post, tol) -> bool``."""
    if isinstance(f, TrueF):
        return lambda pre, post, tol: True
    if isinstance(f, FalseF):
        return lambda pre, post, tol: False
    if isinstance(f, Cmp):
        l, r = compile_term(f.left), compile_term(f.right)
        op = f.op
        if op == "=":
            return lambda pre, post, tol: abs(l(pre, post) - r(pre, post)) <= tol
        if op == "<":
            return lambda pre, post, tol: l(pre, post) < r(pre, post)
        if op == "<=":
            return lambda pre, post, tol: l(pre, post) <= r(pre, post)
        if op == ">":
            return lambda pre, post, tol: l(pre, post) > r(pre, post)
        return lambda pre, post, tol: l(pre, post) >= r(pre, post)
    if isinstance(f, Not):
        a = compile_formula(f.arg)
        return lambda pre, post, tol: not a(pre, post, tol)
    if isinstance(f, And):
        a, b = compile_formula(f.left), compile_formula(f.right)
        return lambda pre, post, tol: a(pre, post, tol) and b(pre, post, tol)
    if isinstance(f, Or):
        a, b = compile_formula(f.left), compile_formula(f.right)
        return lambda pre, post, tol: a(pre, post, tol) or b(pre, post, tol)
    if isinstance(f, Implies):
        a, b = compile_formula(f.left), compile_formula(f.right)
        return lambda pre, post, tol: (not a(pre, post, tol)) or b(pre, post, tol)
    if isinstance(f, Equiv):
        a, b = compile_formula(f.left), compile_formula(f.right)
        return lambda pre, post, tol: a(pre, post, tol) == b(pre, post, tol)
    raise EvalError(f"cannot compile quantifier or modality in {type(f).__name__}")
