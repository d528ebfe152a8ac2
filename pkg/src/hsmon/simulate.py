"""Sampled execution semantics for hybrid programs.

One call samples one run: assignments are exact, nondeterministic constructs
are resolved by the configured policy, ODEs are integrated with fixed-step
RK4.  Deterministic programs therefore map identical configurations to
bit-identical outputs.  :func:`check_run_compatibility` is the brute-force
transition oracle used by monitor tests; it never appears on the runtime
path.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterator, Optional

from .evaluation import (
    DEFAULT_TOL, EvalError, FormulaFn, State, TermFn, TransitionPair,
    compile_formula, compile_term,
)
from .programs import collect_var_bounds, match_interval_macro, match_interval_test
from .syntax import (
    Assign, AssignAny, Choice, Cmp, Formula, HybridProgram, Loop, ODE, Seq,
    Test, TrueF, Var, bound_vars, seq_items,
)


class SimulationError(RuntimeError):
    pass


_SEED_MIX = 0x9E3779B97F4A7C15
_SEED_MASK = (1 << 64) - 1


def derived_seed(seed: int, index: int) -> int:
    """Split-seed convention: derive an independent stream per sample index."""
    return (seed ^ ((index + 1) * _SEED_MIX)) & _SEED_MASK


@dataclass(frozen=True)
class RunConfig:
    """Sampling policy for one program run.

    ``scripted`` policies must fully determine all nondeterminism: choices,
    ODE stop times, and values for every ``x:=*`` without a trailing
    interval test.
    """

    ode_step: Optional[float] = None
    rng_seed: int = 0
    choice_policy: str = "uniform"  # "uniform" | "scripted"
    assign_ranges: Dict[str, tuple[float, float]] = field(default_factory=dict)
    scripted_choices: tuple[int, ...] = ()
    scripted_durations: tuple[float, ...] = ()
    scripted_assigns: Dict[str, tuple[float, ...]] = field(default_factory=dict)
    ode_horizon: float = 1.0
    loop_iterations: int = 1
    ode_substeps: int = 100
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.ode_step is not None and self.ode_step <= 0:
            raise ValueError("ode_step must be positive")


@dataclass
class PlantEffect:
    """Per-variable deltas accumulated over the plant runs of one program run."""

    deltas: Dict[str, float] = field(default_factory=dict)
    duration: float = 0.0

    def add(self, var: str, delta: float):
        self.deltas[var] = self.deltas.get(var, 0.0) + delta

    def get(self, var: str) -> float:
        return self.deltas.get(var, 0.0)


_term_cache: Dict[object, TermFn] = {}
_formula_cache: Dict[object, FormulaFn] = {}


def cached_term(t) -> TermFn:
    fn = _term_cache.get(t)
    if fn is None:
        fn = compile_term(t)
        _term_cache[t] = fn
    return fn


def cached_formula(f: Formula) -> FormulaFn:
    fn = _formula_cache.get(f)
    if fn is None:
        fn = compile_formula(f)
        _formula_cache[f] = fn
    return fn


_EMPTY: State = {}


class _Blocked(Exception):
    pass


class Runner:
    """Executes one sampled run per :meth:`run` call."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.rng = random.Random(cfg.rng_seed)
        self._choice_cursor = 0
        self._duration_cursor = 0
        self._assign_cursors: Dict[str, int] = {}

    # -- nondeterminism -----------------------------------------------------

    def _pick_choice(self) -> int:
        if self.cfg.choice_policy == "scripted":
            if self._choice_cursor >= len(self.cfg.scripted_choices):
                raise SimulationError("scripted choices exhausted")
            value = self.cfg.scripted_choices[self._choice_cursor]
            self._choice_cursor += 1
            return value
        return self.rng.randrange(2)

    def _pick_duration(self) -> float:
        if self.cfg.choice_policy == "scripted":
            if self._duration_cursor >= len(self.cfg.scripted_durations):
                raise SimulationError("scripted durations exhausted")
            value = self.cfg.scripted_durations[self._duration_cursor]
            self._duration_cursor += 1
            return value
        return self.rng.uniform(0.0, self.cfg.ode_horizon)

    def _pick_assign(self, var: str, state: State, bounds) -> float:
        scripted = self.cfg.scripted_assigns.get(var)
        if scripted is not None:
            cursor = self._assign_cursors.get(var, 0)
            if cursor >= len(scripted):
                raise SimulationError(f"scripted values for {var!r} exhausted")
            self._assign_cursors[var] = cursor + 1
            return scripted[cursor]
        if bounds is not None:
            lo, hi = bounds
            if lo > hi:
                raise _Blocked()
            return self.rng.uniform(lo, hi)
        if var in self.cfg.assign_ranges:
            lo, hi = self.cfg.assign_ranges[var]
            return self.rng.uniform(lo, hi)
        raise SimulationError(f"no sampling interval for {var}:=*")

    # -- execution ----------------------------------------------------------

    def run(self, p: HybridProgram, start: State) -> Optional[tuple[State, PlantEffect]]:
        """One sampled run; None when a test blocks."""
        state = dict(start)
        effect = PlantEffect()
        try:
            state = self._exec(p, state, effect)
        except _Blocked:
            return None
        return state, effect

    def _exec(self, p: HybridProgram, state: State, effect: PlantEffect) -> State:
        if isinstance(p, (Seq, Assign, AssignAny, Test, ODE)):
            return self._exec_items(seq_items(p), state, effect)
        if isinstance(p, Choice):
            branch = p.left if self._pick_choice() == 0 else p.right
            return self._exec(branch, state, effect)
        if isinstance(p, Loop):
            for _ in range(self.cfg.loop_iterations):
                state = self._exec(p.body, state, effect)
            return state
        raise TypeError(f"not a hybrid program: {p!r}")

    def _exec_items(self, items: list[HybridProgram], state: State, effect: PlantEffect) -> State:
        i = 0
        while i < len(items):
            stmt = items[i]
            if isinstance(stmt, Assign):
                state[stmt.var] = cached_term(stmt.term)(state, _EMPTY)
                i += 1
            elif isinstance(stmt, AssignAny):
                bounds = None
                if i + 1 < len(items) and isinstance(items[i + 1], Test):
                    lows, highs, _ = collect_var_bounds(items[i + 1].condition, stmt.var)
                    if lows and highs:
                        lo = max(cached_term(t)(state, _EMPTY) for t in lows)
                        hi = min(cached_term(t)(state, _EMPTY) for t in highs)
                        bounds = (lo, hi)
                state[stmt.var] = self._pick_assign(stmt.var, state, bounds)
                i += 1
            elif isinstance(stmt, Test):
                if not cached_formula(stmt.condition)(state, _EMPTY, self.cfg.tol):
                    raise _Blocked()
                i += 1
            elif isinstance(stmt, ODE):
                # A trailing ?clock=d test pins the duration of a timed plant.
                target = None
                if i + 1 < len(items) and isinstance(items[i + 1], Test):
                    cond = items[i + 1].condition
                    if (
                        isinstance(cond, Cmp)
                        and cond.op == "="
                        and isinstance(cond.left, Var)
                        and any(x == cond.left.name for x, _ in stmt.equations)
                    ):
                        bound = cached_term(cond.right)(state, _EMPTY)
                        current = state.get(cond.left.name, 0.0)
                        target = max(0.0, bound - current)
                duration = target if target is not None else self._pick_duration()
                state = self._integrate(stmt, state, duration, effect)
                i += 1
            else:
                state = self._exec(stmt, state, effect)
                i += 1
        return state

    def _integrate(self, ode: ODE, state: State, duration: float, effect: PlantEffect) -> State:
        names = [x for x, _ in ode.equations]
        rhs = [cached_term(t) for _, t in ode.equations]
        domain_fn = None if isinstance(ode.domain, TrueF) else cached_formula(ode.domain)
        if domain_fn is not None and not domain_fn(state, _EMPTY, self.cfg.tol):
            raise _Blocked()
        start_values = {x: state[x] for x in names}
        if duration > 0.0:
            h = self.cfg.ode_step
            if h is None:
                h = duration / self.cfg.ode_substeps
            steps = max(1, round(duration / h))
            h = duration / steps
            elapsed = 0.0
            for _ in range(steps):
                new_state = _rk4_step(state, names, rhs, h)
                for x in names:
                    if not math.isfinite(new_state[x]):
                        raise SimulationError(f"integrator diverged on {x}")
                if domain_fn is not None and not domain_fn(new_state, _EMPTY, self.cfg.tol):
                    break  # truncate at the previous step
                state = new_state
                elapsed += h
        else:
            elapsed = 0.0
        for x in names:
            effect.add(x, state[x] - start_values[x])
        effect.duration += elapsed
        return state


def _rk4_step(state: State, names: list[str], rhs: list[TermFn], h: float) -> State:
    k1 = [f(state, _EMPTY) for f in rhs]
    s2 = dict(state)
    for x, k in zip(names, k1):
        s2[x] = state[x] + 0.5 * h * k
    k2 = [f(s2, _EMPTY) for f in rhs]
    s3 = dict(state)
    for x, k in zip(names, k2):
        s3[x] = state[x] + 0.5 * h * k
    k3 = [f(s3, _EMPTY) for f in rhs]
    s4 = dict(state)
    for x, k in zip(names, k3):
        s4[x] = state[x] + h * k
    k4 = [f(s4, _EMPTY) for f in rhs]
    out = dict(state)
    for x, a, b, c, d in zip(names, k1, k2, k3, k4):
        out[x] = state[x] + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
    return out


def run_program(
    p: HybridProgram, start: State, cfg: RunConfig
) -> Optional[tuple[State, PlantEffect]]:
    """Sample one run of ``p`` from ``start``; None when the run blocks."""
    return Runner(cfg).run(p, start)


def reachable_samples(
    p: HybridProgram, start: State, n: int, cfg: RunConfig, retry_limit: int = 20
) -> list[State]:
    """``n`` independently sampled end states (blocked runs are resampled)."""
    if n < 1:
        raise ValueError("need at least one sample")
    out: list[State] = []
    for i in range(n):
        result = None
        for attempt in range(retry_limit):
            runner = Runner(replace(cfg, rng_seed=derived_seed(cfg.rng_seed, i * retry_limit + attempt)))
            result = runner.run(p, start)
            if result is not None:
                break
        if result is None:
            raise SimulationError("all samples blocked")
        out.append(result[0])
    return out


# ---------------------------------------------------------------------------
# Brute-force transition oracle
# ---------------------------------------------------------------------------

def check_run_compatibility(
    p: HybridProgram,
    pair: TransitionPair,
    cfg: RunConfig,
    grid: int = 5,
    tol: float = 1e-6,
) -> bool:
    """Does some run of loop-free ``p`` lead from ``pair.pre`` to ``pair.post``?

    Brute-force search over nondeterministic choices: choice branches are
    enumerated exhaustively, ``x:=*`` tries the target value ``post(x)`` plus
    a grid over any trailing interval test, ODE stop times are searched on a
    grid with one bisection refinement.  Used only as a test oracle; returns
    False on search exhaustion.
    """
    bv = bound_vars(p)
    for x, v in pair.pre.items():
        if x not in bv and abs(pair.post.get(x, v) - v) > tol:
            return False

    def end_states(q: HybridProgram, state: State) -> Iterator[State]:
        yield from _oracle_exec(seq_items(q), 0, state, pair.post, cfg, grid, tol)

    for end in end_states(p, dict(pair.pre)):
        if all(abs(end[x] - pair.post[x]) <= tol for x in bv if x in pair.post):
            return True
    return False


def _oracle_exec(
    items: list[HybridProgram],
    i: int,
    state: State,
    target: State,
    cfg: RunConfig,
    grid: int,
    tol: float,
) -> Iterator[State]:
    if i == len(items):
        yield state
        return
    stmt = items[i]
    if isinstance(stmt, Assign):
        new = dict(state)
        try:
            new[stmt.var] = cached_term(stmt.term)(state, _EMPTY)
        except (EvalError, KeyError):
            return
        yield from _oracle_exec(items, i + 1, new, target, cfg, grid, tol)
    elif isinstance(stmt, AssignAny):
        candidates: list[float] = []
        if stmt.var in target:
            candidates.append(target[stmt.var])
        bounds = None
        if i + 1 < len(items) and isinstance(items[i + 1], Test):
            bounds = match_interval_test(items[i + 1].condition, stmt.var)
        if bounds is not None:
            lo = cached_term(bounds[0])(state, _EMPTY)
            hi = cached_term(bounds[1])(state, _EMPTY)
            if hi >= lo:
                candidates.extend(lo + (hi - lo) * k / (grid - 1) for k in range(grid))
        elif stmt.var in cfg.assign_ranges:
            lo, hi = cfg.assign_ranges[stmt.var]
            candidates.extend(lo + (hi - lo) * k / (grid - 1) for k in range(grid))
        seen = set()
        for v in candidates:
            if v in seen:
                continue
            seen.add(v)
            new = dict(state)
            new[stmt.var] = v
            yield from _oracle_exec(items, i + 1, new, target, cfg, grid, tol)
    elif isinstance(stmt, Test):
        try:
            ok = cached_formula(stmt.condition)(state, _EMPTY, tol)
        except (EvalError, KeyError):
            return
        if ok:
            yield from _oracle_exec(items, i + 1, state, target, cfg, grid, tol)
    elif isinstance(stmt, Choice):
        for branch in (stmt.left, stmt.right):
            branched = seq_items(branch) + items[i + 1:]
            yield from _oracle_exec(branched, 0, dict(state), target, cfg, grid, tol)
    elif isinstance(stmt, ODE):
        yield from _oracle_ode(items, i, stmt, state, target, cfg, grid, tol)
    elif isinstance(stmt, Loop):
        return  # oracle handles loop-free programs only
    else:
        raise TypeError(f"not a hybrid program: {stmt!r}")


def _oracle_ode(items, i, ode: ODE, state: State, target, cfg, grid, tol) -> Iterator[State]:
    runner = Runner(replace(cfg, choice_policy="scripted"))

    def endpoint(duration: float) -> Optional[State]:
        effect = PlantEffect()
        try:
            return runner._integrate(ode, dict(state), duration, effect)
        except (_Blocked, SimulationError):
            return None

    names = [x for x, _ in ode.equations]
    objective_vars = [x for x in names if x in target]

    def distance(end: Optional[State]) -> float:
        if end is None:
            return math.inf
        return max((abs(end[x] - target[x]) for x in objective_vars), default=0.0)

    durations = [cfg.ode_horizon * k / (grid * 4) for k in range(grid * 4 + 1)]
    scored = [(distance(endpoint(d)), d) for d in durations]
    scored.sort()
    best = scored[0][1]
    # One bisection refinement pass around the best grid duration.
    lo = max(0.0, best - cfg.ode_horizon / (grid * 4))
    hi = min(cfg.ode_horizon, best + cfg.ode_horizon / (grid * 4))
    for _ in range(40):
        mid1 = lo + (hi - lo) / 3
        mid2 = hi - (hi - lo) / 3
        if distance(endpoint(mid1)) <= distance(endpoint(mid2)):
            hi = mid2
        else:
            lo = mid1
    for d in [best, (lo + hi) / 2]:
        end = endpoint(d)
        if end is not None:
            yield from _oracle_exec(items, i + 1, end, target, cfg, grid, tol)
