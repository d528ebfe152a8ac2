"""Turn monitor characterizations into executable arithmetic.

Pipeline: structural modality elimination, instantiation of post-state
existentials against their ``x_post = x`` equations, pushing existentials
through disjunctions and out of unrelated conjuncts, Fourier-Motzkin for
remaining linear existentials, and a bounded grid witness search as the
runtime fallback for everything else.  Every rewrite is a pure AST-to-AST
function; the applied rules are recorded for debugging, no proof terms are
produced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

from .evaluation import (
    DEFAULT_TOL, EvalError, TransitionPair, compile_formula, eval_formula,
)
from .simulate import cached_formula, cached_term
from .syntax import (
    And, Assign, AssignAny, Box, Choice, Cmp, Const, Diamond, Divide, Exists,
    FALSE, FalseF, Forall, Formula, HybridProgram, Implies, Loop, Minus, Neg,
    Not, ODE, Or, Plus, Power, Seq, TRUE, Term, Test, Times, TrueF, Var,
    base_name, conjoin, conjuncts, disjoin, free_vars, is_post, post_name,
    subst_formula, subst_term, term_vars, Equiv, Func, Max, Min,
)


class SynthesisError(ValueError):
    pass


class FMError(SynthesisError):
    """Raised when a constraint set is not Fourier-Motzkin eligible."""


@dataclass
class SynthesisReport:
    input: Formula
    output: Formula
    residual_quantifiers: int = 0
    methods: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Term/formula simplification (keeps synthesized monitors readable)
# ---------------------------------------------------------------------------

def const_value(t: Term) -> Optional[float]:
    """Fold a term to a number when it contains no variables."""
    if isinstance(t, Const):
        return t.value
    if isinstance(t, Var):
        return None
    if isinstance(t, Neg):
        v = const_value(t.arg)
        return None if v is None else -v
    if isinstance(t, (Plus, Minus, Times, Divide, Min, Max)):
        a, b = const_value(t.left), const_value(t.right)
        if a is None or b is None:
            return None
        if isinstance(t, Plus):
            return a + b
        if isinstance(t, Minus):
            return a - b
        if isinstance(t, Times):
            return a * b
        if isinstance(t, Divide):
            return a / b if b != 0 else None
        if isinstance(t, Min):
            return min(a, b)
        return max(a, b)
    if isinstance(t, Power):
        v = const_value(t.base)
        return None if v is None else v ** t.exponent
    return None


def simplify_term(t: Term) -> Term:
    v = const_value(t)
    if v is not None:
        return Const(v) if v >= 0 else Neg(Const(-v))
    if isinstance(t, (Plus, Minus, Times, Divide, Min, Max)):
        l, r = simplify_term(t.left), simplify_term(t.right)
        if isinstance(t, Plus):
            if l == Const(0.0):
                return r
            if r == Const(0.0):
                return l
        if isinstance(t, Minus) and r == Const(0.0):
            return l
        if isinstance(t, Times):
            if l == Const(1.0):
                return r
            if r == Const(1.0):
                return l
            if l == Const(0.0) or r == Const(0.0):
                return Const(0.0)
        if isinstance(t, Divide) and r == Const(1.0):
            return l
        return type(t)(l, r)
    if isinstance(t, Neg):
        return Neg(simplify_term(t.arg))
    if isinstance(t, Power):
        return Power(simplify_term(t.base), t.exponent)
    if isinstance(t, Func):
        return Func(t.name, tuple(simplify_term(a) for a in t.args))
    return t


def simplify(f: Formula) -> Formula:
    if isinstance(f, Cmp):
        l, r = simplify_term(f.left), simplify_term(f.right)
        lv, rv = const_value(l), const_value(r)
        if lv is not None and rv is not None:
            from .evaluation import compare
            return TRUE if compare(f.op, lv, rv, 0.0) else FALSE
        return Cmp(f.op, l, r)
    if isinstance(f, Not):
        a = simplify(f.arg)
        if isinstance(a, TrueF):
            return FALSE
        if isinstance(a, FalseF):
            return TRUE
        if isinstance(a, Not):
            return a.arg
        return Not(a)
    if isinstance(f, And):
        l, r = simplify(f.left), simplify(f.right)
        if isinstance(l, FalseF) or isinstance(r, FalseF):
            return FALSE
        if isinstance(l, TrueF):
            return r
        if isinstance(r, TrueF):
            return l
        return And(l, r)
    if isinstance(f, Or):
        l, r = simplify(f.left), simplify(f.right)
        if isinstance(l, TrueF) or isinstance(r, TrueF):
            return TRUE
        if isinstance(l, FalseF):
            return r
        if isinstance(r, FalseF):
            return l
        return Or(l, r)
    if isinstance(f, Implies):
        l, r = simplify(f.left), simplify(f.right)
        if isinstance(l, FalseF) or isinstance(r, TrueF):
            return TRUE
        if isinstance(l, TrueF):
            return r
        return Implies(l, r)
    if isinstance(f, Equiv):
        return Equiv(simplify(f.left), simplify(f.right))
    if isinstance(f, (Forall, Exists)):
        body = simplify(f.body)
        if f.var not in free_vars(body):
            return body
        return type(f)(f.var, body)
    if isinstance(f, (Box, Diamond)):
        return type(f)(f.program, simplify(f.body))
    return f


# ---------------------------------------------------------------------------
# Modality elimination
# ---------------------------------------------------------------------------

def eliminate_modalities(f: Formula, trace: Optional[list[str]] = None) -> Formula:
    """Rewrite diamond modalities over loop-free, ODE-free programs away.

    ODEs must have been replaced by their guarded nondeterministic
    overapproximation beforehand; box modalities are rejected (monitor
    conditions are reachability conditions).
    """
    trace = trace if trace is not None else []
    if isinstance(f, (TrueF, FalseF, Cmp)):
        return f
    if isinstance(f, Not):
        return Not(eliminate_modalities(f.arg, trace))
    if isinstance(f, (And, Or, Implies, Equiv)):
        return type(f)(
            eliminate_modalities(f.left, trace), eliminate_modalities(f.right, trace)
        )
    if isinstance(f, (Forall, Exists)):
        return type(f)(f.var, eliminate_modalities(f.body, trace))
    if isinstance(f, Box):
        raise SynthesisError("box modality in a monitor condition")
    if isinstance(f, Diamond):
        body = eliminate_modalities(f.body, trace)
        return _reduce(f.program, body, trace)
    raise TypeError(f"not a formula: {f!r}")


def _reduce(p: HybridProgram, goal: Formula, trace: list[str]) -> Formula:
    if isinstance(p, Seq):
        trace.append("diamond-seq")
        return _reduce(p.first, _reduce(p.second, goal, trace), trace)
    if isinstance(p, Choice):
        trace.append("diamond-choice")
        return Or(_reduce(p.left, goal, trace), _reduce(p.right, goal, trace))
    if isinstance(p, Assign):
        trace.append(f"diamond-assign {p.var}")
        return subst_formula(goal, {p.var: p.term})
    if isinstance(p, AssignAny):
        trace.append(f"diamond-assign-any {p.var}")
        return Exists(p.var, goal)
    if isinstance(p, Test):
        trace.append("diamond-test")
        return And(p.condition, goal)
    if isinstance(p, ODE):
        raise SynthesisError(
            "raw ODE in monitor synthesis; overapproximate the plant first"
        )
    if isinstance(p, Loop):
        raise SynthesisError("loops must be reduced to their body before synthesis")
    raise TypeError(f"not a hybrid program: {p!r}")


# ---------------------------------------------------------------------------
# Opt. 1 instantiation of post-state existentials
# ---------------------------------------------------------------------------

def _opt1_match(var: str, body: Formula) -> Optional[Formula]:
    """If body is a conjunction containing var_post = var, instantiate."""
    parts = conjuncts(body)
    partner = post_name(var)
    for i, c in enumerate(parts):
        if isinstance(c, Cmp) and c.op == "=":
            pair = {c.left, c.right}
            if pair == {Var(var), Var(partner)}:
                rest = parts[:i] + parts[i + 1:]
                replaced = [subst_formula(r, {var: Var(partner)}) for r in rest]
                return conjoin(replaced)
    return None


def opt1_instantiate(f: Formula, trace: Optional[list[str]] = None) -> Formula:
    """Instantiate ``\\exists x (... & x_post=x & ...)`` by ``x -> x_post``.

    No-op where the pattern is absent; other shapes are left untouched
    rather than generalized.
    """
    trace = trace if trace is not None else []
    if isinstance(f, (TrueF, FalseF, Cmp)):
        return f
    if isinstance(f, Not):
        return Not(opt1_instantiate(f.arg, trace))
    if isinstance(f, (And, Or, Implies, Equiv)):
        return type(f)(opt1_instantiate(f.left, trace), opt1_instantiate(f.right, trace))
    if isinstance(f, Exists):
        body = opt1_instantiate(f.body, trace)
        matched = _opt1_match(f.var, body)
        if matched is not None:
            trace.append(f"opt1 {f.var}")
            return opt1_instantiate(matched, trace)
        return Exists(f.var, body)
    if isinstance(f, Forall):
        return Forall(f.var, opt1_instantiate(f.body, trace))
    if isinstance(f, (Box, Diamond)):
        return type(f)(f.program, opt1_instantiate(f.body, trace))
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# Disjunctive normal form preprocessing
# ---------------------------------------------------------------------------

def _nnf(f: Formula, negate: bool = False) -> Formula:
    if isinstance(f, TrueF):
        return FALSE if negate else TRUE
    if isinstance(f, FalseF):
        return TRUE if negate else FALSE
    if isinstance(f, Cmp):
        return Not(f) if negate else f
    if isinstance(f, Not):
        return _nnf(f.arg, not negate)
    if isinstance(f, And):
        a, b = _nnf(f.left, negate), _nnf(f.right, negate)
        return Or(a, b) if negate else And(a, b)
    if isinstance(f, Or):
        a, b = _nnf(f.left, negate), _nnf(f.right, negate)
        return And(a, b) if negate else Or(a, b)
    if isinstance(f, Implies):
        return _nnf(Or(Not(f.left), f.right), negate)
    if isinstance(f, Equiv):
        expanded = Or(And(f.left, f.right), And(Not(f.left), Not(f.right)))
        return _nnf(expanded, negate)
    if isinstance(f, Exists):
        body = _nnf(f.body, negate)
        return Forall(f.var, body) if negate else Exists(f.var, body)
    if isinstance(f, Forall):
        body = _nnf(f.body, negate)
        return Exists(f.var, body) if negate else Forall(f.var, body)
    raise SynthesisError(f"cannot normalize {type(f).__name__} under negation")


def to_dnf(f: Formula, limit: int = 4096) -> list[list[Formula]]:
    """DNF of a quantifier-free formula as a list of conjunct lists."""
    g = _nnf(f)

    def walk(h: Formula) -> list[list[Formula]]:
        if isinstance(h, Or):
            return walk(h.left) + walk(h.right)
        if isinstance(h, And):
            left, right = walk(h.left), walk(h.right)
            if len(left) * len(right) > limit:
                raise SynthesisError("DNF size limit exceeded")
            return [a + b for a in left for b in right]
        if isinstance(h, TrueF):
            return [[]]
        if isinstance(h, FalseF):
            return []
        return [[h]]

    return walk(g)


def dnf_preprocess(f: Formula, trace: Optional[list[str]] = None) -> Formula:
    """Push existentials through disjunctions and out of unrelated conjuncts.

    Uses the two equivalences ``\\exists x (p | q)  <->  \\exists x p |
    \\exists x q`` and ``\\exists x (p & q(x))  <->  p & \\exists x q(x)``
    (for ``x`` not free in ``p``); vacuous quantifiers are dropped.  The
    result is logically equivalent to the input.
    """
    trace = trace if trace is not None else []
    if isinstance(f, (TrueF, FalseF, Cmp)):
        return f
    if isinstance(f, Not):
        return simplify(Not(dnf_preprocess(f.arg, trace)))
    if isinstance(f, (And, Or, Implies, Equiv)):
        return simplify(
            type(f)(dnf_preprocess(f.left, trace), dnf_preprocess(f.right, trace))
        )
    if isinstance(f, Forall):
        return Forall(f.var, dnf_preprocess(f.body, trace))
    if isinstance(f, (Box, Diamond)):
        raise SynthesisError("modalities must be eliminated before DNF preprocessing")
    if isinstance(f, Exists):
        body = dnf_preprocess(f.body, trace)
        if f.var not in free_vars(body):
            trace.append(f"exists-vacuous {f.var}")
            return body
        if not _is_quantifier_free(body):
            return Exists(f.var, body)
        disjunct_lists = to_dnf(body)
        if len(disjunct_lists) > 1:
            trace.append(f"lemma10 {f.var}")
        pieces: list[Formula] = []
        for parts in disjunct_lists:
            keep = [c for c in parts if f.var in free_vars(c)]
            out = [c for c in parts if f.var not in free_vars(c)]
            if out and keep:
                trace.append(f"lemma11 {f.var}")
            if keep:
                piece = And(conjoin(out), Exists(f.var, conjoin(keep))) if out else Exists(
                    f.var, conjoin(keep)
                )
            else:
                if parts:
                    trace.append(f"exists-vacuous {f.var}")
                piece = conjoin(out)
            pieces.append(simplify(piece))
        return simplify(disjoin(pieces))
    raise TypeError(f"not a formula: {f!r}")


def _is_quantifier_free(f: Formula) -> bool:
    if isinstance(f, (TrueF, FalseF, Cmp)):
        return True
    if isinstance(f, Not):
        return _is_quantifier_free(f.arg)
    if isinstance(f, (And, Or, Implies, Equiv)):
        return _is_quantifier_free(f.left) and _is_quantifier_free(f.right)
    return False


# ---------------------------------------------------------------------------
# Fourier-Motzkin elimination for linear bounded existentials
# ---------------------------------------------------------------------------

def _linear_in(t: Term, x: str) -> tuple[float, Term]:
    """Decompose ``t = a*x + rest`` with numeric ``a``; FMError otherwise."""
    if x not in term_vars(t):
        return 0.0, t
    if isinstance(t, Var):
        return 1.0, Const(0.0)
    if isinstance(t, Neg):
        a, rest = _linear_in(t.arg, x)
        return -a, Neg(rest)
    if isinstance(t, Plus):
        a1, r1 = _linear_in(t.left, x)
        a2, r2 = _linear_in(t.right, x)
        return a1 + a2, Plus(r1, r2)
    if isinstance(t, Minus):
        a1, r1 = _linear_in(t.left, x)
        a2, r2 = _linear_in(t.right, x)
        return a1 - a2, Minus(r1, r2)
    if isinstance(t, Times):
        in_left = x in term_vars(t.left)
        in_right = x in term_vars(t.right)
        if in_left and in_right:
            raise FMError(f"nonlinear occurrence of {x}")
        if in_left:
            c = const_value(t.right)
            if c is None:
                raise FMError(f"sign-ambiguous coefficient of {x}")
            a, rest = _linear_in(t.left, x)
            return a * c, Times(rest, t.right)
        c = const_value(t.left)
        if c is None:
            raise FMError(f"sign-ambiguous coefficient of {x}")
        a, rest = _linear_in(t.right, x)
        return c * a, Times(t.left, rest)
    if isinstance(t, Divide):
        if x in term_vars(t.right):
            raise FMError(f"{x} occurs in a denominator")
        c = const_value(t.right)
        if c is None or c == 0.0:
            raise FMError(f"sign-ambiguous divisor for {x}")
        a, rest = _linear_in(t.left, x)
        return a / c, Divide(rest, t.right)
    raise FMError(f"nonlinear occurrence of {x}")


def _normalize_literal(c: Formula) -> Formula:
    if isinstance(c, Not) and isinstance(c.arg, Cmp):
        flip = {"<": ">=", "<=": ">", ">": "<=", ">=": "<"}
        if c.arg.op in flip:
            return Cmp(flip[c.arg.op], c.arg.left, c.arg.right)
    return c


def fourier_motzkin(f: Formula) -> Formula:
    """Eliminate ``\\exists x`` over a conjunction linear in ``x``.

    Equalities are removed by substitution first; inequality bounds are
    combined pairwise.  Raises :class:`FMError` on nonlinear or
    sign-ambiguous occurrences (callers fall back to witness search).
    """
    if not isinstance(f, Exists):
        raise FMError("expected an existential quantifier")
    x, body = f.var, f.body
    if not _is_quantifier_free(body):
        raise FMError("body must be quantifier-free")
    literals = [_normalize_literal(c) for c in conjuncts(body)]
    passthrough: list[Formula] = []
    lowers: list[tuple[Term, bool]] = []  # (bound, strict)
    uppers: list[tuple[Term, bool]] = []
    equality: Optional[Term] = None
    others: list[Formula] = []
    for lit in literals:
        if x not in free_vars(lit):
            passthrough.append(lit)
            continue
        if not isinstance(lit, Cmp):
            raise FMError(f"non-comparison literal mentions {x}")
        a, rest = _linear_in(Minus(lit.left, lit.right), x)
        if a == 0.0:
            passthrough.append(lit)
            continue
        # a*x + rest  op  0
        bound = simplify_term(Divide(Neg(rest), Const(a)))
        if lit.op == "=":
            if equality is None:
                equality = bound
            else:
                others.append(Cmp("=", equality, bound))
            continue
        op = lit.op
        if a < 0:
            op = {"<": ">", "<=": ">=", ">": "<", ">=": "<="}[op]
        if op in ("<", "<="):
            uppers.append((bound, op == "<"))
        else:
            lowers.append((bound, op == ">"))
    if equality is not None:
        # Substitute the witness into the remaining bounds.
        substituted: list[Formula] = list(passthrough) + others
        for bound, strict in lowers:
            substituted.append(Cmp(">" if strict else ">=", equality, bound))
        for bound, strict in uppers:
            substituted.append(Cmp("<" if strict else "<=", equality, bound))
        return simplify(conjoin(substituted))
    combined: list[Formula] = list(passthrough)
    for lo, strict_lo in lowers:
        for hi, strict_hi in uppers:
            op = "<" if (strict_lo or strict_hi) else "<="
            combined.append(Cmp(op, lo, hi))
    return simplify(conjoin(combined))


# ---------------------------------------------------------------------------
# Grid witness search (runtime fallback)
# ---------------------------------------------------------------------------

DEFAULT_GRID = 101


def strip_existentials(f: Formula) -> tuple[list[str], Formula]:
    names: list[str] = []
    while isinstance(f, Exists):
        names.append(f.var)
        f = f.body
    return names, f


def _bind(pair: TransitionPair, var: str, value: float) -> TransitionPair:
    if is_post(var):
        post = dict(pair.post)
        post[base_name(var)] = value
        return TransitionPair(pair.pre, post)
    pre = dict(pair.pre)
    pre[var] = value
    return TransitionPair(pre, pair.post)


def extract_bounds(body: Formula, var: str, pair: TransitionPair) -> tuple[float, float]:
    """Numeric bounds on a quantified variable from its interval conjuncts."""
    lo = hi = None
    for c in conjuncts(body):
        if not isinstance(c, Cmp) or c.op not in ("<", "<="):
            continue
        if isinstance(c.right, Var) and c.right.name == var and var not in term_vars(c.left):
            value = eval_formula_term(c.left, pair)
            if value is not None:
                lo = value if lo is None else max(lo, value)
        elif isinstance(c.left, Var) and c.left.name == var and var not in term_vars(c.right):
            value = eval_formula_term(c.right, pair)
            if value is not None:
                hi = value if hi is None else min(hi, value)
    if lo is None or hi is None:
        raise SynthesisError(f"unbounded quantified variable {var!r}")
    return lo, hi


def eval_formula_term(t: Term, pair: TransitionPair) -> Optional[float]:
    from .evaluation import eval_term

    try:
        return eval_term(t, pair)
    except EvalError:
        return None


def find_witness(
    f: Formula,
    pair: TransitionPair,
    bounds: Optional[Dict[str, tuple[float, float]]] = None,
    grid: int = DEFAULT_GRID,
    tol: float = DEFAULT_TOL,
) -> Optional[Dict[str, float]]:
    """Search a witness for ``\\exists x1 ... \\exists xk G`` at a pair.

    Scans a uniform grid per variable (each interval taken from explicit
    ``bounds`` or the Delta-interval conjuncts of the body), then refines
    with secant root candidates of equality conjuncts.  Sound for acceptance
    up to tolerance, conservative for rejection.
    """
    if isinstance(f, Or):
        return find_witness(f.left, pair, bounds, grid, tol) or find_witness(
            f.right, pair, bounds, grid, tol
        )
    names, body = strip_existentials(f)
    if not names:
        try:
            return {} if cached_formula(body)(pair.pre, pair.post, tol) else None
        except (EvalError, KeyError):
            return None
    if isinstance(body, Or):
        rebuilt_l = body.left
        rebuilt_r = body.right
        for n in reversed(names):
            rebuilt_l = Exists(n, rebuilt_l)
            rebuilt_r = Exists(n, rebuilt_r)
        return find_witness(rebuilt_l, pair, bounds, grid, tol) or find_witness(
            rebuilt_r, pair, bounds, grid, tol
        )
    return _search(names, body, pair, bounds or {}, grid, tol, {})


def eval_bounded(
    f: Formula,
    pair: TransitionPair,
    tol: float = DEFAULT_TOL,
    grid: int = DEFAULT_GRID,
    bounds: Optional[Dict[str, tuple[float, float]]] = None,
) -> bool:
    """Evaluate a formula whose quantifiers all range over bounded intervals.

    Existentials are decided by witness search, universals by checking every
    grid point of their interval; quantifier-free subtrees evaluate directly.
    """
    if _is_quantifier_free(f):
        try:
            return cached_formula(f)(pair.pre, pair.post, tol)
        except (EvalError, KeyError):
            return False
    if isinstance(f, Exists):
        return find_witness(f, pair, bounds, grid, tol) is not None
    if isinstance(f, Forall):
        lo, hi = (bounds or {}).get(f.var) or extract_bounds(f.body, f.var, pair)
        if hi < lo:
            return True
        points = [lo + (hi - lo) * k / (grid - 1) for k in range(grid)] if grid > 1 else [lo]
        return all(eval_bounded(f.body, _bind(pair, f.var, v), tol, grid, bounds) for v in points)
    if isinstance(f, Not):
        return not eval_bounded(f.arg, pair, tol, grid, bounds)
    if isinstance(f, And):
        return eval_bounded(f.left, pair, tol, grid, bounds) and eval_bounded(
            f.right, pair, tol, grid, bounds
        )
    if isinstance(f, Or):
        return eval_bounded(f.left, pair, tol, grid, bounds) or eval_bounded(
            f.right, pair, tol, grid, bounds
        )
    if isinstance(f, Implies):
        return (not eval_bounded(f.left, pair, tol, grid, bounds)) or eval_bounded(
            f.right, pair, tol, grid, bounds
        )
    if isinstance(f, Equiv):
        return eval_bounded(f.left, pair, tol, grid, bounds) == eval_bounded(
            f.right, pair, tol, grid, bounds
        )
    raise SynthesisError(f"cannot evaluate {type(f).__name__} at runtime")


def _search(
    names: list[str],
    body: Formula,
    pair: TransitionPair,
    bounds: Dict[str, tuple[float, float]],
    grid: int,
    tol: float,
    found: Dict[str, float],
) -> Optional[Dict[str, float]]:
    if not names:
        return dict(found) if eval_bounded(body, pair, tol, grid, bounds) else None
    var, rest = names[0], names[1:]
    if var in bounds:
        lo, hi = bounds[var]
    else:
        lo, hi = extract_bounds(body, var, pair)
    if hi < lo:
        return None
    points = [lo + (hi - lo) * k / (grid - 1) for k in range(grid)] if grid > 1 else [lo]
    for v in points:
        result = _search(rest, body, _bind(pair, var, v), bounds, grid, tol, {**found, var: v})
        if result is not None:
            return result
    # Refinement: solve equality conjuncts for this variable along the grid.
    for candidate in _equality_roots(body, var, pair, lo, hi, points):
        result = _search(
            rest, body, _bind(pair, var, candidate), bounds, grid, tol, {**found, var: candidate}
        )
        if result is not None:
            return result
    return None


def _equality_roots(
    body: Formula, var: str, pair: TransitionPair, lo: float, hi: float, points: list[float]
) -> list[float]:
    roots: list[float] = []
    for c in conjuncts(body):
        if not (isinstance(c, Cmp) and c.op == "=" and var in free_vars(c)):
            continue
        residual_fn = cached_term(Minus(c.left, c.right))

        def residual(v: float) -> Optional[float]:
            bound = _bind(pair, var, v)
            try:
                return residual_fn(bound.pre, bound.post)
            except (EvalError, KeyError, ZeroDivisionError):
                return None

        values = [(v, residual(v)) for v in points]
        for (v0, r0), (v1, r1) in zip(values, values[1:]):
            if r0 is None or r1 is None:
                continue
            if r0 == 0.0:
                roots.append(v0)
            if r0 * r1 < 0:
                # Secant iterations (exact for affine residuals).
                a, b, ra, rb = v0, v1, r0, r1
                for _ in range(20):
                    if rb == ra:
                        break
                    m = b - rb * (b - a) / (rb - ra)
                    m = min(max(m, lo), hi)
                    rm = residual(m)
                    if rm is None:
                        break
                    a, ra = b, rb
                    b, rb = m, rm
                    if abs(rm) == 0.0:
                        break
                roots.append(b)
        if values and values[-1][1] == 0.0:
            roots.append(values[-1][0])
    return roots


def witness_search(
    f: Formula,
    pair: TransitionPair,
    bounds: Optional[Dict[str, tuple[float, float]]] = None,
    grid: int = DEFAULT_GRID,
    tol: float = DEFAULT_TOL,
) -> bool:
    return find_witness(f, pair, bounds, grid, tol) is not None


# ---------------------------------------------------------------------------
# End-to-end synthesis driver
# ---------------------------------------------------------------------------

def _existential_subformulas(f: Formula) -> list[Exists]:
    """All existential subformulas, innermost first."""
    out: list[Exists] = []

    def walk(g: Formula):
        if isinstance(g, Exists):
            walk(g.body)
            out.append(g)
        elif isinstance(g, Not):
            walk(g.arg)
        elif isinstance(g, (And, Or, Implies, Equiv)):
            walk(g.left)
            walk(g.right)
        elif isinstance(g, Forall):
            walk(g.body)

    walk(f)
    return out


def _replace_subformula(f: Formula, target: Formula, replacement: Formula) -> Formula:
    if f == target:
        return replacement
    if isinstance(f, Not):
        return Not(_replace_subformula(f.arg, target, replacement))
    if isinstance(f, (And, Or, Implies, Equiv)):
        return type(f)(
            _replace_subformula(f.left, target, replacement),
            _replace_subformula(f.right, target, replacement),
        )
    if isinstance(f, (Forall, Exists)):
        return type(f)(f.var, _replace_subformula(f.body, target, replacement))
    return f


def remaining_existentials(f: Formula) -> list[str]:
    out: list[str] = []

    def walk(g: Formula):
        if isinstance(g, Exists):
            out.append(g.var)
            walk(g.body)
        elif isinstance(g, Not):
            walk(g.arg)
        elif isinstance(g, (And, Or, Implies, Equiv)):
            walk(g.left)
            walk(g.right)
        elif isinstance(g, Forall):
            walk(g.body)

    walk(f)
    return out


def _has_interval_bounds(f: Formula) -> bool:
    """Every remaining existential must carry interval bounds for runtime search."""
    ok = True

    def walk(g: Formula):
        nonlocal ok
        if isinstance(g, Exists):
            names, body = strip_existentials(g)
            for n in names:
                lo = hi = False
                for c in conjuncts(body):
                    if not isinstance(c, Cmp) or c.op not in ("<", "<="):
                        continue
                    if isinstance(c.right, Var) and c.right.name == n:
                        lo = True
                    if isinstance(c.left, Var) and c.left.name == n:
                        hi = True
                if not (lo and hi):
                    ok = False
            walk(body)
        elif isinstance(g, Not):
            walk(g.arg)
        elif isinstance(g, (And, Or, Implies, Equiv)):
            walk(g.left)
            walk(g.right)

    walk(f)
    return ok


def synthesize(condition: Formula) -> SynthesisReport:
    """Full pipeline from a dL monitor characterization to executable form.

    Output is quantifier-free where Fourier-Motzkin applies; otherwise
    bounded existentials remain and are handled by witness search at
    runtime (recorded in ``methods``).
    """
    trace: list[str] = []
    g = eliminate_modalities(condition, trace)
    g = opt1_instantiate(g, trace)
    g = dnf_preprocess(g, trace)
    progress = True
    while progress:
        progress = False
        for target in _existential_subformulas(g):
            try:
                replacement = fourier_motzkin(target)
            except FMError:
                continue
            trace.append(f"fourier-motzkin {target.var}")
            g = simplify(_replace_subformula(g, target, replacement))
            g = dnf_preprocess(g, trace)
            progress = True
            break
    residual = 0
    for var in remaining_existentials(g):
        trace.append(f"witness-search {var}")
    if remaining_existentials(g) and not _has_interval_bounds(g):
        residual = len(remaining_existentials(g))
    return SynthesisReport(input=condition, output=g, residual_quantifiers=residual, methods=trace)
