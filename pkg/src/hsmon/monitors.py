"""Monitor condition construction and runtime evaluation.

Five conditions are supported: the exact model monitor (some model run
explains the observed transition), the control monitor (the proposed
decision is a run of the controller), the actuator-disturbance monitor
(an unobservable actuation effect is existentially conjectured), the
pairwise measurement monitor (some true value within sensor uncertainty of
the previous measurement evolves to one within uncertainty of the next),
and the rolling monitor (the same, with interval bounds carried over the
entire measurement history by a non-diverging estimator).
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from typing import Dict, Optional

from .estimator import (
    Estimate, EstimateInconsistent, EstimatorSpec, initial_estimate, update,
)
from .evaluation import DEFAULT_TOL, TransitionPair
from .programs import (
    NormalFormError, NormalFormInfo, NormalFormKind, overapproximate_plant,
    recognize_normal_form, upsilon_plus,
)
from .simulate import cached_formula
from .synthesis import (
    DEFAULT_GRID, SynthesisReport, eval_bounded, find_witness, synthesize,
)
from .syntax import (
    And, Assign, Choice, Cmp, Const, Diamond, Exists, Forall, Formula,
    HybridProgram, Implies, Loop, Minus, ODE, Plus, Seq, Term, Var,
    bound_vars, conjoin, free_vars, post_name, seq, seq_items, subst_term,
)
from .trace import Trace


class MonitorBuildError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Monitor kinds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonitorKind:
    name = "abstract"


@dataclass(frozen=True)
class Exact(MonitorKind):
    name = "exact"


@dataclass(frozen=True)
class ControlOnly(MonitorKind):
    name = "ctrl"


@dataclass(frozen=True)
class Disturbance(MonitorKind):
    name = "disturbance"


@dataclass(frozen=True)
class Pairwise(MonitorKind):
    name = "pairwise"


@dataclass(frozen=True)
class Rolling(MonitorKind):
    name = "rolling"
    estimator: Optional[EstimatorSpec] = None


KIND_NAMES = ("exact", "ctrl", "disturbance", "pairwise", "rolling")


def kind_from_name(name: str, estimator: Optional[EstimatorSpec] = None) -> MonitorKind:
    if name == "exact":
        return Exact()
    if name == "ctrl":
        return ControlOnly()
    if name == "disturbance":
        return Disturbance()
    if name == "pairwise":
        return Pairwise()
    if name == "rolling":
        return Rolling(estimator=estimator)
    raise MonitorBuildError(f"unknown monitor kind {name!r}")


@dataclass(frozen=True)
class Verdict:
    satisfied: bool
    witness: Optional[Dict[str, float]] = None
    evaluated_formula: Optional[Formula] = None
    elapsed: float = 0.0


@dataclass(frozen=True)
class EvalConfig:
    tol: float = DEFAULT_TOL
    grid: int = DEFAULT_GRID


# Reserved variable names spliced into rolling-monitor programs.
EST_LOWER = "est_l"
EST_UPPER = "est_u"
PREV_SUFFIX = "_prev"


def _interval_conjuncts(var: str, lo: Term, hi: Term) -> Formula:
    return And(Cmp("<=", lo, Var(var)), Cmp("<=", Var(var), hi))


def unobservable_closure(program: HybridProgram, exclude: set[str]) -> set[str]:
    """Extend the unobservable set with variables copied from it.

    Ghost variables introduced by plant overapproximation inherit
    unobservability from their source: a monitor cannot reference the
    remembered value of a quantity it never sees.
    """
    out = set(exclude)
    changed = True
    while changed:
        changed = False
        for item in _assignments(program):
            if isinstance(item.term, Var) and item.term.name in out and item.var not in out:
                out.add(item.var)
                changed = True
    return out


def _assignments(p: HybridProgram) -> list[Assign]:
    if isinstance(p, Assign):
        return [p]
    if isinstance(p, Seq):
        return _assignments(p.first) + _assignments(p.second)
    if isinstance(p, Choice):
        return _assignments(p.left) + _assignments(p.right)
    if isinstance(p, Loop):
        return _assignments(p.body)
    return []


def build_monitor(
    body: HybridProgram,
    kind: MonitorKind,
    diff_invariants: Optional[Formula] = None,
    unobservable: frozenset[str] | set[str] = frozenset(),
) -> Formula:
    """The dL characterization of the monitor condition for a loop body.

    The body must match the normal form the kind requires; plants are
    replaced by their guarded nondeterministic overapproximation (using
    ``diff_invariants``) so the result is synthesizable.
    """
    nf = recognize_normal_form(body)
    if isinstance(kind, Disturbance) and nf.kind is not NormalFormKind.DISTURBANCE:
        raise MonitorBuildError("disturbance monitor requires disturbance normal form")
    if isinstance(kind, (Pairwise, Rolling)) and nf.kind is not NormalFormKind.MEASUREMENT:
        raise MonitorBuildError("measurement monitors require measurement normal form")

    if isinstance(kind, ControlOnly):
        if nf.ctrl is None:
            raise MonitorBuildError("no controller component recognized")
        ctrl = nf.ctrl
        exclude = frozenset(unobservable) & bound_vars(ctrl)
        return Diamond(ctrl, upsilon_plus(ctrl, exclude))

    program = body
    if _contains_ode(program):
        if diff_invariants is None:
            raise MonitorBuildError("plant overapproximation needs differential invariants")
        program = overapproximate_plant(program, diff_invariants)

    exclude = set(unobservable)
    if isinstance(kind, Disturbance):
        exclude.add(nf.disturbed_var)
        exclude = unobservable_closure(program, exclude)
        upsilon = upsilon_plus(program, exclude)
        return Diamond(program, Exists(post_name(nf.disturbed_var), upsilon))
    if isinstance(kind, (Pairwise, Rolling)):
        y = nf.measured_var
        yhat = nf.measurement_var
        delta = nf.uncertainty
        exclude.add(y)
        if isinstance(kind, Rolling):
            return _rolling_monitor(program, kind, y, yhat, delta, exclude)
        exclude = unobservable_closure(program, exclude)
        upsilon = upsilon_plus(program, exclude)
        inner = Diamond(program, Exists(post_name(y), upsilon))
        bounds = _interval_conjuncts(y, Minus(Var(yhat), delta), Plus(Var(yhat), delta))
        return Exists(y, And(bounds, inner))
    exclude = unobservable_closure(program, exclude)
    upsilon = upsilon_plus(program, exclude)
    return Diamond(program, upsilon)


def _rolling_monitor(
    program: HybridProgram,
    kind: Rolling,
    y: str,
    yhat: str,
    delta: Term,
    exclude: set[str],
) -> Formula:
    spec = kind.estimator
    if spec is None:
        raise MonitorBuildError("rolling monitor needs an estimator")
    y_prev = y + PREV_SUFFIX
    yhat_prev = yhat + PREV_SUFFIX
    taken = bound_vars(program)
    for ghost in (y_prev, yhat_prev):
        if ghost in taken:
            raise MonitorBuildError(f"ghost variable {ghost!r} already in use")
    inputs = {
        "yhat0": Var(yhat_prev),
        "yhat": Var(yhat),
        "effect": Minus(Var(y), Var(y_prev)),
        "delta": delta,
        "l0": Var(EST_LOWER),
        "u0": Var(EST_UPPER),
    }
    remembered = seq(
        Assign(y_prev, Var(y)),
        Assign(yhat_prev, Var(yhat)),
        *seq_items(program),
        Assign(EST_LOWER, subst_term(spec.lower, inputs)),
        Assign(EST_UPPER, subst_term(spec.upper, inputs)),
    )
    upsilon = upsilon_plus(remembered, unobservable_closure(remembered, exclude | {y_prev}))
    inner = Diamond(remembered, Exists(post_name(y), upsilon))
    bounds = _interval_conjuncts(
        y, Plus(Var(yhat), Var(EST_LOWER)), Plus(Var(yhat), Var(EST_UPPER))
    )
    return Exists(y, And(bounds, inner))


def _contains_ode(p: HybridProgram) -> bool:
    from .syntax import Choice, Loop, Seq

    if isinstance(p, ODE):
        return True
    if isinstance(p, Seq):
        return _contains_ode(p.first) or _contains_ode(p.second)
    if isinstance(p, Choice):
        return _contains_ode(p.left) or _contains_ode(p.right)
    if isinstance(p, Loop):
        return _contains_ode(p.body)
    return False


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(monitor: Formula, pair: TransitionPair, cfg: EvalConfig = EvalConfig()) -> Verdict:
    """Evaluate a synthesized monitor (quantifier-free, or with bounded
    existentials decided by witness search) on a transition pair."""
    start = _time.perf_counter()
    from .syntax import Exists as _Exists, Or as _Or

    witness = None
    if isinstance(monitor, (_Exists, _Or)):
        witness = find_witness(monitor, pair, grid=cfg.grid, tol=cfg.tol)
        satisfied = witness is not None
        if witness == {}:
            witness = None
    else:
        satisfied = eval_bounded(monitor, pair, tol=cfg.tol, grid=cfg.grid)
    return Verdict(
        satisfied=satisfied,
        witness=witness,
        evaluated_formula=monitor,
        elapsed=_time.perf_counter() - start,
    )


@dataclass
class CompiledMonitor:
    """A monitor condition with its synthesized executable form."""

    kind: MonitorKind
    condition: Formula
    report: SynthesisReport
    cfg: EvalConfig = field(default_factory=EvalConfig)

    @property
    def executable(self) -> Formula:
        return self.report.output

    def check(self, pair: TransitionPair) -> Verdict:
        return evaluate(self.executable, pair, self.cfg)


def compile_monitor(
    body: HybridProgram,
    kind: MonitorKind,
    diff_invariants: Optional[Formula] = None,
    unobservable: frozenset[str] | set[str] = frozenset(),
    cfg: EvalConfig = EvalConfig(),
) -> CompiledMonitor:
    condition = build_monitor(body, kind, diff_invariants, unobservable)
    return CompiledMonitor(kind=kind, condition=condition, report=synthesize(condition), cfg=cfg)


class RollingMonitor:
    """Stateful rolling-consistency monitor owning its current estimate.

    Each step checks that some true value inside the current estimate
    interval explains the new measurement through the model, then folds the
    new measurement into the estimate.  An inconsistent estimate (l > u) is
    a distinct history-inconsistency violation; the estimate resets to the
    sensor band afterwards so monitoring can continue.
    """

    def __init__(
        self,
        body: HybridProgram,
        estimator: EstimatorSpec,
        delta: float,
        diff_invariants: Optional[Formula] = None,
        unobservable: frozenset[str] | set[str] = frozenset(),
        cfg: EvalConfig = EvalConfig(),
    ):
        nf = recognize_normal_form(body)
        if nf.kind is not NormalFormKind.MEASUREMENT:
            raise MonitorBuildError("rolling monitor requires measurement normal form")
        self.nf = nf
        self.spec = estimator
        self.delta = delta
        self.cfg = cfg
        self.estimate = initial_estimate(delta)
        self.condition = build_monitor(
            body, Rolling(estimator=estimator), diff_invariants, unobservable
        )
        # The feasibility check reuses the pairwise shape with the interval
        # [yhat+est_l, yhat+est_u] supplied from the running estimate.
        pairwise = build_monitor(body, Pairwise(), diff_invariants, unobservable)
        self._feasibility = synthesize(pairwise).output
        self._y = nf.measured_var
        self._yhat = nf.measurement_var

    @property
    def executable(self) -> Formula:
        """Feasibility part of the condition (estimate bounds are supplied
        from the running estimate at each step)."""
        return self._feasibility

    def reset(self):
        self.estimate = initial_estimate(self.delta)

    def step(self, pair: TransitionPair, plant_effect: float = 0.0) -> Verdict:
        start = _time.perf_counter()
        est = self.estimate
        bounds = {self._y: (pair.pre[self._yhat] + est.l, pair.pre[self._yhat] + est.u)}
        witness = find_witness(
            self._feasibility, pair, bounds=bounds, grid=self.cfg.grid, tol=self.cfg.tol
        )
        feasible = witness is not None
        consistent = True
        try:
            self.estimate = update(
                self.spec,
                pair.pre[self._yhat],
                pair.post[self._yhat],
                plant_effect,
                self.delta,
                est,
            )
        except EstimateInconsistent:
            consistent = False
            self.estimate = initial_estimate(self.delta)
        return Verdict(
            satisfied=feasible and consistent,
            witness=witness,
            evaluated_formula=self._feasibility,
            elapsed=_time.perf_counter() - start,
        )


# ---------------------------------------------------------------------------
# Contraction obligations and variation bounds
# ---------------------------------------------------------------------------

def contraction_formula(inv: Formula, y: str, yhat: str, l: Term, u: Term) -> Formula:
    """``\\forall y (yhat+l <= y <= yhat+u -> inv)``: the invariant holds for
    every possible true value around the measurement.

    Exported as a proof obligation for offline checking; over grids it also
    serves as a runtime assertion in tests.
    """
    if y not in free_vars(inv):
        raise MonitorBuildError(f"{y!r} is not free in the invariant")
    bounds = _interval_conjuncts(y, Plus(Var(yhat), l), Plus(Var(yhat), u))
    return Forall(y, Implies(bounds, inv))


def contraction_holds_on_grid(
    obligation: Formula, pair: TransitionPair, cfg: EvalConfig = EvalConfig()
) -> bool:
    return eval_bounded(obligation, pair, tol=cfg.tol, grid=cfg.grid)


@dataclass
class VariationReport:
    """Bounded-variation audit of a sensor trace.

    Per monitor-satisfied step the measured value may move at most ``2*delta``
    beyond the interpolated plant effect; over a satisfied prefix of ``n``
    steps the true value may drift at most ``2*delta*(n+1)`` beyond the
    summed effects.
    """

    checked_steps: int = 0
    step_violations: list = field(default_factory=list)
    cumulative_violations: list = field(default_factory=list)

    @property
    def first_violation(self) -> Optional[int]:
        candidates = self.step_violations + self.cumulative_violations
        return min(candidates) if candidates else None

    @property
    def ok(self) -> bool:
        return not self.step_violations and not self.cumulative_violations


def variation_bounds(
    trace: Trace, delta: float, measured_var: Optional[str] = None, tol: float = 1e-7
) -> VariationReport:
    """Check the single-step and cumulative variation bounds on a trace.

    Only steps whose model verdict was satisfied are audited; the cumulative
    bound is checked on every all-satisfied prefix.  Requires ground-truth
    and measurement columns for the audited variable.
    """
    if measured_var is None:
        if not trace.measured_variables:
            raise ValueError("trace has no measured variables")
        measured_var = trace.measured_variables[0]
    y = measured_var
    report = VariationReport()
    rows = trace.rows
    if not rows:
        return report
    if y not in rows[0].state:
        raise ValueError(f"trace lacks ground truth for {y!r}")
    if y not in rows[0].measured:
        raise ValueError(f"trace lacks measurements for {y!r}")
    cumulative_effect = 0.0
    prefix_satisfied = True
    for i in range(1, len(rows)):
        row = rows[i]
        if row.model_verdict is False:
            prefix_satisfied = False
            continue
        report.checked_steps += 1
        effect = row.plant_effect.get(y, 0.0)
        step_dev = abs(row.measured[y] - rows[i - 1].measured[y] - effect)
        if step_dev > 2 * delta + tol:
            report.step_violations.append(i)
        if prefix_satisfied:
            cumulative_effect += effect
            drift = abs(row.state[y] - rows[0].state[y] - cumulative_effect)
            if drift > 2 * delta * (i + 1) + tol:
                report.cumulative_violations.append(i)
    return report
