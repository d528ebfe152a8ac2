"""Normal-form recognition and program transformations for monitor synthesis.

Interval assignment macros (``x:=*; ?(lo<=x & x<=hi)``) and timed plants
(``t:=0; {..., t'=1 & t<=eps}; ?t=eps``) are recognized structurally from
their desugared form; the core AST keeps only the seven primitive statements.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from .syntax import (
    And, Assign, AssignAny, Choice, Cmp, Const, Formula, HybridProgram, Loop,
    Minus, ODE, Plus, Seq, TRUE, Term, Test, Times, Var, bound_vars,
    conjoin, conjuncts, free_vars, post_name, program_free_vars, seq,
    seq_items, term_vars,
)


class NormalFormError(ValueError):
    pass


class NormalFormKind(enum.Enum):
    DISTURBANCE = "disturbance"
    MEASUREMENT = "measurement"
    PLAIN = "plain"


@dataclass(frozen=True)
class IntervalMacro:
    """``var:=*; ?(lo<=var & var<=hi)``, optionally in centered ``c +- d`` form."""

    var: str
    lo: Term
    hi: Term
    center: Optional[Term] = None
    delta: Optional[Term] = None


@dataclass(frozen=True)
class TimedPlant:
    """``clock:=0; {ode & ... clock<=duration}; ?clock=duration``."""

    clock: str
    duration: Term
    ode: ODE


@dataclass(frozen=True)
class NormalFormInfo:
    kind: NormalFormKind
    ctrl: Optional[HybridProgram] = None
    plant: Optional[HybridProgram] = None
    ode: Optional[ODE] = None
    # Disturbance normal form: actuation interval around the control choice.
    disturbed_var: Optional[str] = None
    disturbance: Optional[IntervalMacro] = None
    # Measurement normal form: measured true variable and its measurement.
    measured_var: Optional[str] = None
    measurement_var: Optional[str] = None
    uncertainty: Optional[Term] = None
    duration: Optional[Term] = None
    clock: Optional[str] = None


def _bound_side(c: Formula, var: str):
    """Classify a conjunct as a lower/upper bound on var, else None."""
    if not isinstance(c, Cmp) or c.op not in ("<", "<="):
        return None
    if isinstance(c.right, Var) and c.right.name == var and var not in term_vars(c.left):
        return ("lo", c.left)
    if isinstance(c.left, Var) and c.left.name == var and var not in term_vars(c.right):
        return ("hi", c.right)
    return None


def match_interval_test(condition: Formula, var: str) -> Optional[tuple[Term, Term]]:
    """Match ``?(lo<=var & var<=hi)`` (conjunct order irrelevant)."""
    lo = hi = None
    for c in conjuncts(condition):
        side = _bound_side(c, var)
        if side is None:
            return None
        kind, term = side
        if kind == "lo" and lo is None:
            lo = term
        elif kind == "hi" and hi is None:
            hi = term
        else:
            return None
    if lo is None or hi is None:
        return None
    return lo, hi


def collect_var_bounds(
    condition: Formula, var: str
) -> tuple[list[Term], list[Term], list[Formula]]:
    """All lower/upper bound conjuncts on var plus the remaining conjuncts.

    Unlike :func:`match_interval_test` this accepts arbitrary extra
    conjuncts; it supports sampling from tests like
    ``?(-1<=f & f<=(m-x)/eps & ...)``.
    """
    lows: list[Term] = []
    highs: list[Term] = []
    rest: list[Formula] = []
    for c in conjuncts(condition):
        side = _bound_side(c, var)
        if side is None:
            rest.append(c)
        elif side[0] == "lo":
            lows.append(side[1])
        else:
            highs.append(side[1])
    return lows, highs, rest


def _centered(lo: Term, hi: Term) -> tuple[Optional[Term], Optional[Term]]:
    if isinstance(lo, Minus) and isinstance(hi, Plus):
        if lo.left == hi.left and lo.right == hi.right:
            return lo.left, lo.right
    return None, None


def match_interval_macro(first: HybridProgram, second: HybridProgram) -> Optional[IntervalMacro]:
    if not (isinstance(first, AssignAny) and isinstance(second, Test)):
        return None
    bounds = match_interval_test(second.condition, first.var)
    if bounds is None:
        return None
    lo, hi = bounds
    center, delta = _centered(lo, hi)
    return IntervalMacro(first.var, lo, hi, center, delta)


def interval_program(var: str, lo: Term, hi: Term) -> HybridProgram:
    """Desugared ``var:=*; ?(lo<=var & var<=hi)``."""
    return Seq(AssignAny(var), Test(And(Cmp("<=", lo, Var(var)), Cmp("<=", Var(var), hi))))


def centered_interval_program(var: str, center: Term, delta: Term) -> HybridProgram:
    return interval_program(var, Minus(center, delta), Plus(center, delta))


def match_timed_plant(items: list[HybridProgram]) -> Optional[TimedPlant]:
    """Match the three-statement timed plant at the front of items."""
    if len(items) < 3:
        return None
    reset, ode, stop = items[0], items[1], items[2]
    if not (isinstance(reset, Assign) and isinstance(reset.term, Const) and reset.term.value == 0.0):
        return None
    if not isinstance(ode, ODE):
        return None
    clock = reset.var
    if (clock, Const(1.0)) not in ode.equations and not any(
        x == clock and isinstance(rhs, Const) and rhs.value == 1.0 for x, rhs in ode.equations
    ):
        return None
    duration = None
    for c in conjuncts(ode.domain):
        if (
            isinstance(c, Cmp)
            and c.op == "<="
            and isinstance(c.left, Var)
            and c.left.name == clock
        ):
            duration = c.right
            break
    if duration is None:
        return None
    if not (
        isinstance(stop, Test)
        and isinstance(stop.condition, Cmp)
        and stop.condition.op == "="
        and stop.condition.left == Var(clock)
        and stop.condition.right == duration
    ):
        return None
    return TimedPlant(clock, duration, ode)


def timed_plant_program(clock: str, duration: Term, ode: ODE) -> HybridProgram:
    """Desugared plant that runs for exactly the given duration."""
    has_clock = any(x == clock for x, _ in ode.equations)
    eqs = ode.equations if has_clock else ode.equations + ((clock, Const(1.0)),)
    domain = And(ode.domain, Cmp("<=", Var(clock), duration)) if not isinstance(
        ode.domain, type(TRUE)
    ) else Cmp("<=", Var(clock), duration)
    return seq(
        Assign(clock, Const(0.0)),
        ODE(eqs, domain),
        Test(Cmp("=", Var(clock), duration)),
    )


def _find_odes(p: HybridProgram) -> list[ODE]:
    if isinstance(p, ODE):
        return [p]
    if isinstance(p, (Seq, Choice)):
        pair = (p.first, p.second) if isinstance(p, Seq) else (p.left, p.right)
        return _find_odes(pair[0]) + _find_odes(pair[1])
    if isinstance(p, Loop):
        return _find_odes(p.body)
    return []


def _match_disturbance(items: list[HybridProgram]) -> Optional[NormalFormInfo]:
    # ctrl; u:=*; ?(lo<=u & u<=hi); plant(u) with the plant trailing.
    for i in range(len(items) - 2):
        macro = match_interval_macro(items[i], items[i + 1])
        if macro is None:
            continue
        rest = items[i + 2:]
        if not rest:
            continue
        timed = match_timed_plant(rest)
        if timed is not None:
            if len(rest) != 3:
                continue
            ode = timed.ode
        elif len(rest) == 1 and isinstance(rest[0], ODE):
            ode = rest[0]
        else:
            continue
        reads = {x for _, rhs in ode.equations for x in term_vars(rhs)}
        if macro.var not in reads:
            continue
        if i == 0:
            continue  # Def. shape requires a controller before the actuation.
        return NormalFormInfo(
            kind=NormalFormKind.DISTURBANCE,
            ctrl=seq(*items[:i]),
            plant=seq(*rest),
            ode=ode,
            disturbed_var=macro.var,
            disturbance=macro,
            duration=timed.duration if timed else None,
            clock=timed.clock if timed else None,
        )
    return None


def _match_measurement(items: list[HybridProgram]) -> Optional[NormalFormInfo]:
    # ctrl(yhat); timed plant; yhat:=*; ?(y-delta<=yhat & yhat<=y+delta)
    if len(items) < 5:
        return None
    macro = match_interval_macro(items[-2], items[-1])
    if macro is None or macro.center is None:
        return None
    if not isinstance(macro.center, Var):
        return None
    y = macro.center.name
    timed = match_timed_plant(items[-5:-2])
    if timed is None:
        return None
    ctrl_items = items[:-5]
    if not ctrl_items:
        return None
    ctrl = seq(*ctrl_items)
    if y in bound_vars(ctrl):
        return None  # controller may read only the measurement
    return NormalFormInfo(
        kind=NormalFormKind.MEASUREMENT,
        ctrl=ctrl,
        plant=seq(*items[-5:-2]),
        ode=timed.ode,
        measured_var=y,
        measurement_var=macro.var,
        uncertainty=macro.delta,
        duration=timed.duration,
        clock=timed.clock,
    )


def recognize_normal_form(p: HybridProgram) -> NormalFormInfo:
    """Identify the disturbance/measurement shape of a loop body.

    Matching is purely structural over the desugared macros; a body matching
    both shapes is rejected as ambiguous.
    """
    if isinstance(p, Loop):
        raise NormalFormError("expected a loop body, found a loop")
    items = seq_items(p)
    disturbance = _match_disturbance(items)
    measurement = _match_measurement(items)
    if disturbance and measurement:
        raise NormalFormError("ambiguous normal form: both shapes match")
    if disturbance:
        return disturbance
    if measurement:
        return measurement
    return NormalFormInfo(kind=NormalFormKind.PLAIN, ctrl=p)


def ghost_name(var: str) -> str:
    return var + "_0"


def overapproximate_plant(p: HybridProgram, diff_invariants: Formula) -> HybridProgram:
    """Replace the unique ODE by a guarded nondeterministic assignment.

    The ODE over variables ``x`` becomes
    ``x_0:=x; ?Q; x:=*; ?(Q & R(x, x_0))`` where ``Q`` is the evolution
    domain and ``R`` the provided differential invariants.  Ghost names use
    the ``_0`` suffix; collisions with existing variables are rejected.
    """
    odes = _find_odes(p)
    if len(odes) != 1:
        raise NormalFormError(f"expected exactly one ODE, found {len(odes)}")
    ode = odes[0]
    taken = bound_vars(p) | program_free_vars(p)
    ghosts = {x: ghost_name(x) for x, _ in ode.equations}
    for x, g in ghosts.items():
        if g in taken:
            raise NormalFormError(f"ghost variable {g!r} already in use")
    replacement = seq(
        *[Assign(g, Var(x)) for x, g in ghosts.items()],
        Test(ode.domain),
        *[AssignAny(x) for x in ghosts],
        Test(And(ode.domain, diff_invariants)),
    )
    return _replace_ode(p, ode, replacement)


def _replace_ode(p: HybridProgram, target: ODE, replacement: HybridProgram) -> HybridProgram:
    if p is target or p == target:
        return replacement
    if isinstance(p, Seq):
        return Seq(_replace_ode(p.first, target, replacement), _replace_ode(p.second, target, replacement))
    if isinstance(p, Choice):
        return Choice(_replace_ode(p.left, target, replacement), _replace_ode(p.right, target, replacement))
    if isinstance(p, Loop):
        return Loop(_replace_ode(p.body, target, replacement))
    return p


def measurement_rollover(p: HybridProgram) -> HybridProgram:
    """Move a leading measurement after the plant.

    ``measure; ctrl; plant`` becomes ``ctrl; plant; measure``; the
    measurement variable must be bound only by the measurement itself.
    """
    items = seq_items(p)
    if len(items) < 3:
        raise NormalFormError("expected measure; ctrl; plant")
    macro = match_interval_macro(items[0], items[1])
    if macro is None or macro.center is None:
        raise NormalFormError("program does not start with a measurement")
    rest = items[2:]
    if macro.var in bound_vars(seq(*rest)):
        raise NormalFormError(f"measurement variable {macro.var!r} bound outside the measurement")
    return seq(*rest, items[0], items[1])


def ordered_bound_vars(p: HybridProgram) -> list[str]:
    """Bound variables in first-binding order (deterministic)."""
    out: list[str] = []

    def walk(q: HybridProgram):
        if isinstance(q, (Assign, AssignAny)):
            if q.var not in out:
                out.append(q.var)
        elif isinstance(q, ODE):
            for x, _ in q.equations:
                if x not in out:
                    out.append(x)
        elif isinstance(q, Seq):
            walk(q.first)
            walk(q.second)
        elif isinstance(q, Choice):
            walk(q.left)
            walk(q.right)
        elif isinstance(q, Loop):
            walk(q.body)

    walk(p)
    return out


def upsilon_plus(p: HybridProgram, exclude: frozenset[str] | set[str] = frozenset()) -> Formula:
    """Conjunction ``x_post = x`` over the bound variables of ``p``.

    ``exclude`` lists unobservable variables that the caller existentially
    quantifies instead of monitoring directly.
    """
    return conjoin(
        [Cmp("=", Var(post_name(x)), Var(x)) for x in ordered_bound_vars(p) if x not in exclude]
    )
