"""AST for real-arithmetic terms, monitor formulas, and hybrid programs.

All nodes are immutable (frozen dataclasses) and freely shareable.
Post-state variables live in the same name space as plain variables:
the post-state of ``x`` is the variable named ``x_post``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping, Union

POST_SUFFIX = "_post"


def post_name(name: str) -> str:
    """Post-state counterpart of a plain variable name."""
    return name + POST_SUFFIX


def is_post(name: str) -> bool:
    return name.endswith(POST_SUFFIX)


def base_name(name: str) -> str:
    """Strip the post-state marker (no-op for plain names)."""
    return name[: -len(POST_SUFFIX)] if is_post(name) else name


# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Term:
    def __str__(self) -> str:
        return print_term(self)


@dataclass(frozen=True)
class Var(Term):
    name: str


@dataclass(frozen=True)
class Const(Term):
    value: float


@dataclass(frozen=True)
class Plus(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class Minus(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class Times(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class Divide(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class Power(Term):
    base: Term
    exponent: int


@dataclass(frozen=True)
class Neg(Term):
    arg: Term


@dataclass(frozen=True)
class Min(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class Max(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class Func(Term):
    """Opaque function symbol, e.g. trigonometric helpers in scenario audits."""

    name: str
    args: tuple[Term, ...]


# ---------------------------------------------------------------------------
# Formulas
# ---------------------------------------------------------------------------

COMPARE_OPS = ("<", "<=", "=", ">=", ">")


@dataclass(frozen=True)
class Formula:
    def __str__(self) -> str:
        return print_formula(self)


@dataclass(frozen=True)
class TrueF(Formula):
    pass


@dataclass(frozen=True)
class FalseF(Formula):
    pass


TRUE = TrueF()
FALSE = FalseF()


@dataclass(frozen=True)
class Cmp(Formula):
    op: str
    left: Term
    right: Term

    def __post_init__(self):
        if self.op not in COMPARE_OPS:
            raise ValueError(f"unknown comparison operator {self.op!r}")


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Implies(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Equiv(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Forall(Formula):
    var: str
    body: Formula


@dataclass(frozen=True)
class Exists(Formula):
    var: str
    body: Formula


@dataclass(frozen=True)
class Box(Formula):
    program: "HybridProgram"
    body: Formula


@dataclass(frozen=True)
class Diamond(Formula):
    program: "HybridProgram"
    body: Formula


# ---------------------------------------------------------------------------
# Hybrid programs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HybridProgram:
    def __str__(self) -> str:
        return print_program(self)


@dataclass(frozen=True)
class Assign(HybridProgram):
    var: str
    term: Term


@dataclass(frozen=True)
class AssignAny(HybridProgram):
    var: str


@dataclass(frozen=True)
class Test(HybridProgram):
    condition: Formula


@dataclass(frozen=True)
class ODE(HybridProgram):
    """Differential equation system; left-hand sides must be distinct."""

    equations: tuple[tuple[str, Term], ...]
    domain: Formula = TRUE

    def __post_init__(self):
        names = [x for x, _ in self.equations]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate ODE left-hand sides: {names}")


@dataclass(frozen=True)
class Seq(HybridProgram):
    first: HybridProgram
    second: HybridProgram


@dataclass(frozen=True)
class Choice(HybridProgram):
    left: HybridProgram
    right: HybridProgram


@dataclass(frozen=True)
class Loop(HybridProgram):
    body: HybridProgram


def seq(*programs: HybridProgram) -> HybridProgram:
    """Right-nested sequential composition of one or more programs."""
    if not programs:
        raise ValueError("seq() needs at least one program")
    result = programs[-1]
    for p in reversed(programs[:-1]):
        result = Seq(p, result)
    return result


def seq_items(p: HybridProgram) -> list[HybridProgram]:
    """Flatten nested Seq into statement order."""
    if isinstance(p, Seq):
        return seq_items(p.first) + seq_items(p.second)
    return [p]


def conjuncts(f: Formula) -> list[Formula]:
    """Flatten nested And into a list (TRUE vanishes)."""
    if isinstance(f, And):
        return conjuncts(f.left) + conjuncts(f.right)
    if isinstance(f, TrueF):
        return []
    return [f]


def conjoin(fs: list[Formula]) -> Formula:
    """Right-nested conjunction; empty list means TRUE."""
    if not fs:
        return TRUE
    result = fs[-1]
    for f in reversed(fs[:-1]):
        result = And(f, result)
    return result


def disjoin(fs: list[Formula]) -> Formula:
    if not fs:
        return FALSE
    result = fs[-1]
    for f in reversed(fs[:-1]):
        result = Or(f, result)
    return result


# ---------------------------------------------------------------------------
# Variable analyses
# ---------------------------------------------------------------------------

def term_vars(t: Term) -> set[str]:
    if isinstance(t, Var):
        return {t.name}
    if isinstance(t, Const):
        return set()
    if isinstance(t, (Plus, Minus, Times, Divide, Min, Max)):
        return term_vars(t.left) | term_vars(t.right)
    if isinstance(t, Power):
        return term_vars(t.base)
    if isinstance(t, Neg):
        return term_vars(t.arg)
    if isinstance(t, Func):
        out: set[str] = set()
        for a in t.args:
            out |= term_vars(a)
        return out
    raise TypeError(f"not a term: {t!r}")


def bound_vars(p: HybridProgram) -> set[str]:
    """Variables written by the program (ODE binds every left-hand side)."""
    if isinstance(p, Assign):
        return {p.var}
    if isinstance(p, AssignAny):
        return {p.var}
    if isinstance(p, Test):
        return set()
    if isinstance(p, ODE):
        return {x for x, _ in p.equations}
    if isinstance(p, Seq):
        return bound_vars(p.first) | bound_vars(p.second)
    if isinstance(p, Choice):
        return bound_vars(p.left) | bound_vars(p.right)
    if isinstance(p, Loop):
        return bound_vars(p.body)
    raise TypeError(f"not a hybrid program: {p!r}")


def must_bound_vars(p: HybridProgram) -> set[str]:
    """Variables written on every path through the program."""
    if isinstance(p, (Assign, AssignAny)):
        return {p.var}
    if isinstance(p, Test):
        return set()
    if isinstance(p, ODE):
        return {x for x, _ in p.equations}
    if isinstance(p, Seq):
        return must_bound_vars(p.first) | must_bound_vars(p.second)
    if isinstance(p, Choice):
        return must_bound_vars(p.left) & must_bound_vars(p.right)
    if isinstance(p, Loop):
        return set()
    raise TypeError(f"not a hybrid program: {p!r}")


def program_free_vars(p: HybridProgram) -> set[str]:
    if isinstance(p, Assign):
        return term_vars(p.term)
    if isinstance(p, AssignAny):
        return set()
    if isinstance(p, Test):
        return free_vars(p.condition)
    if isinstance(p, ODE):
        # ODE reads its own state variables plus the right-hand sides/domain.
        out = {x for x, _ in p.equations}
        for _, rhs in p.equations:
            out |= term_vars(rhs)
        return out | free_vars(p.domain)
    if isinstance(p, Seq):
        return program_free_vars(p.first) | (
            program_free_vars(p.second) - must_bound_vars(p.first)
        )
    if isinstance(p, Choice):
        return program_free_vars(p.left) | program_free_vars(p.right)
    if isinstance(p, Loop):
        return program_free_vars(p.body)
    raise TypeError(f"not a hybrid program: {p!r}")


def free_vars(f: Formula) -> set[str]:
    if isinstance(f, (TrueF, FalseF)):
        return set()
    if isinstance(f, Cmp):
        return term_vars(f.left) | term_vars(f.right)
    if isinstance(f, Not):
        return free_vars(f.arg)
    if isinstance(f, (And, Or, Implies, Equiv)):
        return free_vars(f.left) | free_vars(f.right)
    if isinstance(f, (Forall, Exists)):
        return free_vars(f.body) - {f.var}
    if isinstance(f, (Box, Diamond)):
        return program_free_vars(f.program) | (
            free_vars(f.body) - must_bound_vars(f.program)
        )
    raise TypeError(f"not a formula: {f!r}")


def quantifier_free(f: Formula) -> bool:
    if isinstance(f, (TrueF, FalseF, Cmp)):
        return True
    if isinstance(f, Not):
        return quantifier_free(f.arg)
    if isinstance(f, (And, Or, Implies, Equiv)):
        return quantifier_free(f.left) and quantifier_free(f.right)
    return False


def modality_free(f: Formula) -> bool:
    if isinstance(f, (TrueF, FalseF, Cmp)):
        return True
    if isinstance(f, Not):
        return modality_free(f.arg)
    if isinstance(f, (And, Or, Implies, Equiv)):
        return modality_free(f.left) and modality_free(f.right)
    if isinstance(f, (Forall, Exists)):
        return modality_free(f.body)
    return False


# ---------------------------------------------------------------------------
# Substitution
# ---------------------------------------------------------------------------

def subst_term(t: Term, sub: Mapping[str, Term]) -> Term:
    if isinstance(t, Var):
        return sub.get(t.name, t)
    if isinstance(t, Const):
        return t
    if isinstance(t, (Plus, Minus, Times, Divide, Min, Max)):
        return type(t)(subst_term(t.left, sub), subst_term(t.right, sub))
    if isinstance(t, Power):
        return Power(subst_term(t.base, sub), t.exponent)
    if isinstance(t, Neg):
        return Neg(subst_term(t.arg, sub))
    if isinstance(t, Func):
        return Func(t.name, tuple(subst_term(a, sub) for a in t.args))
    raise TypeError(f"not a term: {t!r}")


def _fresh(name: str, taken: set[str]) -> str:
    i = 1
    candidate = f"{name}_{i}"
    while candidate in taken:
        i += 1
        candidate = f"{name}_{i}"
    return candidate


def subst_formula(f: Formula, sub: Mapping[str, Term]) -> Formula:
    """Capture-avoiding substitution of variables by terms.

    Quantifier binders shadowing a substituted name stop the substitution;
    binders that would capture a free variable of a replacement term are
    renamed.  Substitution below modalities is rejected (the synthesis
    pipeline eliminates modalities before substituting into their scope).
    """
    if isinstance(f, (TrueF, FalseF)):
        return f
    if isinstance(f, Cmp):
        return Cmp(f.op, subst_term(f.left, sub), subst_term(f.right, sub))
    if isinstance(f, Not):
        return Not(subst_formula(f.arg, sub))
    if isinstance(f, (And, Or, Implies, Equiv)):
        return type(f)(subst_formula(f.left, sub), subst_formula(f.right, sub))
    if isinstance(f, (Forall, Exists)):
        live = {n: t for n, t in sub.items() if n != f.var}
        if not live:
            return f
        replaced_vars: set[str] = set()
        for t in live.values():
            replaced_vars |= term_vars(t)
        var, body = f.var, f.body
        if var in replaced_vars:
            fresh = _fresh(var, replaced_vars | free_vars(body) | set(live))
            body = subst_formula(body, {var: Var(fresh)})
            var = fresh
        return type(f)(var, subst_formula(body, live))
    if isinstance(f, (Box, Diamond)):
        raise ValueError("substitution below modalities is not supported")
    raise TypeError(f"not a formula: {f!r}")


def subst_program(p: HybridProgram, sub: Mapping[str, Term]) -> HybridProgram:
    """Substitute terms for variables inside a program.

    Substituted names must not be bound by the program (intended for
    inlining named constants); violations raise ``ValueError``.
    """
    clash = bound_vars(p) & set(sub)
    if clash:
        raise ValueError(f"cannot substitute bound variables: {sorted(clash)}")

    def walk(q: HybridProgram) -> HybridProgram:
        if isinstance(q, Assign):
            return Assign(q.var, subst_term(q.term, sub))
        if isinstance(q, AssignAny):
            return q
        if isinstance(q, Test):
            return Test(subst_formula(q.condition, sub))
        if isinstance(q, ODE):
            return ODE(
                tuple((x, subst_term(rhs, sub)) for x, rhs in q.equations),
                subst_formula(q.domain, sub),
            )
        if isinstance(q, Seq):
            return Seq(walk(q.first), walk(q.second))
        if isinstance(q, Choice):
            return Choice(walk(q.left), walk(q.right))
        if isinstance(q, Loop):
            return Loop(walk(q.body))
        raise TypeError(f"not a hybrid program: {q!r}")

    return walk(p)


# ---------------------------------------------------------------------------
# Printing (round-trips through the parser)
# ---------------------------------------------------------------------------

_TERM_PREC = {
    Plus: 1, Minus: 1,
    Times: 2, Divide: 2,
    Neg: 3,
    Power: 4,
}


def _format_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def print_term(t: Term) -> str:
    return _pt(t, 0)


def _pt(t: Term, ctx: int) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Const):
        s = _format_number(t.value)
        return f"({s})" if t.value < 0 and ctx > 0 else s
    if isinstance(t, Min):
        return f"min({_pt(t.left, 0)}, {_pt(t.right, 0)})"
    if isinstance(t, Max):
        return f"max({_pt(t.left, 0)}, {_pt(t.right, 0)})"
    if isinstance(t, Func):
        return f"{t.name}({', '.join(_pt(a, 0) for a in t.args)})"
    prec = _TERM_PREC[type(t)]
    if isinstance(t, Neg):
        s = "-" + _pt(t.arg, prec)
    elif isinstance(t, Power):
        s = f"{_pt(t.base, prec + 1)}^{t.exponent}"
    else:
        op = {Plus: "+", Minus: "-", Times: "*", Divide: "/"}[type(t)]
        s = f"{_pt(t.left, prec)}{op}{_pt(t.right, prec + 1)}"
    return f"({s})" if ctx > prec else s


_FML_PREC = {Equiv: 1, Implies: 2, Or: 3, And: 4}


def print_formula(f: Formula) -> str:
    return _pf(f, 0)


def _pf(f: Formula, ctx: int) -> str:
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, Cmp):
        return f"{print_term(f.left)}{f.op}{print_term(f.right)}"
    if isinstance(f, Not):
        return "!" + _pf(f.arg, 5)
    if isinstance(f, Forall):
        return f"\\forall {f.var} {_pf(f.body, 5)}"
    if isinstance(f, Exists):
        return f"\\exists {f.var} {_pf(f.body, 5)}"
    if isinstance(f, Box):
        return f"[{print_program(f.program)}]{_pf(f.body, 5)}"
    if isinstance(f, Diamond):
        return f"<{print_program(f.program)}>{_pf(f.body, 5)}"
    prec = _FML_PREC[type(f)]
    op = {Equiv: "<->", Implies: "->", Or: "|", And: "&"}[type(f)]
    if isinstance(f, Implies):
        # Right-associative: a -> b -> c prints without parens on the right.
        s = f"{_pf(f.left, prec + 1)} {op} {_pf(f.right, prec)}"
    else:
        s = f"{_pf(f.left, prec)} {op} {_pf(f.right, prec + 1)}"
    return f"({s})" if ctx > prec else s


def print_program(p: HybridProgram) -> str:
    return _pp(p, 0)


def _pp(p: HybridProgram, ctx: int) -> str:
    if isinstance(p, Assign):
        return f"{p.var}:={print_term(p.term)}"
    if isinstance(p, AssignAny):
        return f"{p.var}:=*"
    if isinstance(p, Test):
        return f"?{_pf(p.condition, 5)}"
    if isinstance(p, ODE):
        eqs = ", ".join(f"{x}'={print_term(rhs)}" for x, rhs in p.equations)
        if isinstance(p.domain, TrueF):
            return f"{{{eqs}}}"
        return f"{{{eqs} & {print_formula(p.domain)}}}"
    if isinstance(p, Loop):
        return f"{{{_pp(p.body, 0)}}}*"
    if isinstance(p, Choice):
        # ++ parses right-associatively.
        s = f"{_pp(p.left, 2)} ++ {_pp(p.right, 1)}"
        return f"{{{s}}}" if ctx > 1 else s
    if isinstance(p, Seq):
        # ; parses right-associatively.
        s = f"{_pp(p.first, 4)}; {_pp(p.second, 3)}"
        return f"{{{s}}}" if ctx > 3 else s
    raise TypeError(f"not a hybrid program: {p!r}")
