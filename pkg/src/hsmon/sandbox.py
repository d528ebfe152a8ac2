"""Simplex-style sandbox: untrusted controller, monitors, fallback.

Each step: the untrusted controller proposes a decision; the control monitor
checks it against the verified controller and replaces it by the fallback
output before actuation on violation.  The plant then advances (with
configured disturbance, drift, and sensor-noise injection), and the model
monitor checks the completed transition; a model violation engages the
fallback at the next controller slot (detection latency of one sample is
inherent to sampled monitoring).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

from .evaluation import State, TransitionPair
from .modelfile import Model
from .monitors import (
    CompiledMonitor, EvalConfig, RollingMonitor, Verdict,
)
from .programs import NormalFormInfo, NormalFormKind, ghost_name
from .simulate import (
    PlantEffect, RunConfig, Runner, SimulationError, cached_formula,
    cached_term, derived_seed, run_program,
)
from .syntax import (
    Assign, HybridProgram, ODE, Seq, TRUE, Var, bound_vars, seq, seq_items,
)
from .trace import Trace, TraceRow


class SandboxError(RuntimeError):
    pass


ControllerPolicy = Callable[[State, random.Random], Dict[str, float]]


@dataclass
class Injections:
    """Per-step nondeterminism and fault injection for an episode.

    Probabilistic knobs label steps nonconformant exactly when an injected
    quantity leaves its modeled bounds; scripted sequences override the
    probabilistic path (entry ``i`` applies at step ``i+1``).
    """

    disturb_excess_prob: float = 0.0
    disturb_excess_scale: float = 2.0
    sensor_fault_prob: float = 0.0
    sensor_fault_scale: float = 2.0
    drift_prob: float = 0.0
    drift_scale: float = 4.0
    initial_offset: Optional[float] = None
    noise_script: Optional[tuple[float, ...]] = None
    drift_script: Optional[tuple[float, ...]] = None
    duration_script: Optional[tuple[float, ...]] = None


@dataclass
class StepOutcome:
    proposed: Dict[str, float]
    executed: Dict[str, float]
    control_verdict: bool
    model_verdict: Optional[bool]
    action: str
    conformant: bool
    post_true: State
    post_observer: State
    measured: Dict[str, float]
    effect: PlantEffect
    model_witness: Optional[Dict[str, float]] = None


@dataclass
class SandboxConfig:
    body: HybridProgram
    nf: NormalFormInfo
    control_monitor: CompiledMonitor
    model_monitor: CompiledMonitor | RollingMonitor
    fallback: HybridProgram
    invariant: object                       # compiled below
    safety: object
    untrusted: ControllerPolicy
    injections: Injections = field(default_factory=Injections)
    delta: float = 0.0
    plant_horizon: float = 1.0
    ode_substeps: int = 100
    intervene: bool = True
    check_invariant: bool = True
    tol: float = 1e-9


def model_controller(ctrl: HybridProgram, rng_salt: int = 0) -> ControllerPolicy:
    """Conformant policy: sample a run of the verified control program."""
    ctrl_bv = sorted(bound_vars(ctrl))

    def policy(state: State, rng: random.Random) -> Dict[str, float]:
        for attempt in range(40):
            cfg = RunConfig(rng_seed=derived_seed(rng.getrandbits(48), rng_salt + attempt))
            result = run_program(ctrl, state, cfg)
            if result is not None:
                return {v: result[0][v] for v in ctrl_bv}
        raise SandboxError("verified controller blocked from the current state")

    return policy


def random_controller(choices: Dict[str, tuple[float, ...]]) -> ControllerPolicy:
    """Untrusted policy: uniform proposals, conformant or not."""

    def policy(state: State, rng: random.Random) -> Dict[str, float]:
        out = {}
        for var, values in choices.items():
            if len(values) == 2 and values[0] < values[1]:
                out[var] = rng.uniform(values[0], values[1])
            else:
                out[var] = rng.choice(values)
        return out

    return policy


def scripted_controller(script: list[Dict[str, float]]) -> ControllerPolicy:
    cursor = {"i": 0}

    def policy(state: State, rng: random.Random) -> Dict[str, float]:
        i = min(cursor["i"], len(script) - 1)
        cursor["i"] += 1
        return dict(script[i])

    return policy


class Sandbox:
    """Drives episodes of one scenario; owns the observer bookkeeping."""

    def __init__(self, cfg: SandboxConfig):
        self.cfg = cfg
        nf = cfg.nf
        self._invariant_fn = cached_formula(cfg.invariant)
        self._plant = nf.plant
        self._ode: Optional[ODE] = nf.ode
        self._clock = nf.clock
        self._duration_term = nf.duration
        self._measured = nf.measured_var
        self._measurement = nf.measurement_var
        self._disturbed = nf.disturbed_var
        self._ctrl_bv = sorted(bound_vars(nf.ctrl)) if nf.ctrl is not None else []
        body_vars = bound_vars(cfg.body)
        if nf.ctrl is not None and self._ode is not None:
            plant_bv = {x for x, _ in self._ode.equations}
            if set(self._ctrl_bv) & plant_bv:
                raise SandboxError("controller and plant bind the same variable")
        # Ghost bookkeeping mirrors the overapproximated monitor program:
        # each ghost stores its source value at plant start (clock reads 0).
        executable = getattr(cfg.model_monitor, "executable", None)
        monitored = _referenced_ghosts(executable) if executable is not None else set()
        self._ghosts = {}
        if self._ode is not None:
            for x, _ in self._ode.equations:
                g = ghost_name(x)
                if g in monitored or executable is None:
                    self._ghosts[g] = x
        self._unobservable = set()
        if self._measured is not None:
            self._unobservable.add(self._measured)
        if self._disturbed is not None:
            self._unobservable.add(self._disturbed)

    # -- observer -----------------------------------------------------------

    def observer_state(self, true_state: State, ghosts: Dict[str, float]) -> State:
        out = {k: v for k, v in true_state.items() if k not in self._unobservable}
        out.update(ghosts)
        return out

    def initial_states(self, start: State, rng: random.Random) -> tuple[State, State]:
        true_state = dict(start)
        if self._measurement is not None and self._measurement not in true_state:
            offset = self.cfg.injections.initial_offset
            if offset is None:
                offset = rng.uniform(-self.cfg.delta, self.cfg.delta)
            true_state[self._measurement] = true_state[self._measured] + offset
        ghosts = {}
        for g, src in self._ghosts.items():
            ghosts[g] = 0.0 if src == self._clock else true_state.get(src, 0.0)
        if self._clock is not None and self._clock not in true_state:
            true_state[self._clock] = 0.0
        return true_state, self.observer_state(true_state, ghosts)

    # -- one loop iteration ---------------------------------------------------

    def step(
        self,
        true_state: State,
        observer: State,
        rng: random.Random,
        step_index: int,
        pending_fallback: bool = False,
    ) -> StepOutcome:
        cfg = self.cfg
        if cfg.check_invariant and not self._invariant_fn(true_state, {}, cfg.tol):
            raise SandboxError(f"invariant false at entry of step {step_index}")

        # Control decision (Simplex: replace before actuation on violation).
        action = "pass-through"
        if pending_fallback and cfg.intervene:
            proposed = self._fallback_decision(observer, rng)
            action = "fallback-engaged"
        else:
            proposed = cfg.untrusted(dict(observer), rng)
        executed = proposed
        control_ok = self._control_verdict(observer, proposed).satisfied
        if not control_ok and cfg.intervene:
            executed = self._fallback_decision(observer, rng)
            action = "fallback-engaged"
            if not self._control_verdict(observer, executed).satisfied:
                raise SandboxError("fallback output fails the control monitor")

        new_true = dict(true_state)
        new_true.update(executed)

        # Actuator disturbance.
        within_bounds = True
        if self._disturbed is not None:
            value, within_bounds = self._sample_disturbance(new_true, rng)
            new_true[self._disturbed] = value

        # Plant.
        ghosts = {}
        for g, src in self._ghosts.items():
            ghosts[g] = 0.0 if src == self._clock else new_true.get(src, 0.0)
        new_true, effect = self._advance_plant(new_true, rng, step_index)

        # Model-violating drift (between steps, before measurement).
        within_model = True
        if self._measured is not None:
            drift = self._sample_drift(rng, step_index)
            if drift != 0.0:
                new_true[self._measured] += drift
                within_model = False

        # Measurement.
        measured = {}
        non_faulty = True
        if self._measurement is not None:
            value, non_faulty = self._sample_measurement(new_true, rng, step_index)
            new_true[self._measurement] = value
            measured[self._measured] = value

        new_observer = self.observer_state(new_true, ghosts)
        pair = TransitionPair(observer, new_observer)
        if isinstance(cfg.model_monitor, RollingMonitor):
            verdict = cfg.model_monitor.step(pair, effect.get(self._measured))
        else:
            verdict = cfg.model_monitor.check(pair)

        conformant = within_bounds and within_model and non_faulty
        return StepOutcome(
            proposed=proposed,
            executed=executed,
            control_verdict=control_ok,
            model_verdict=verdict.satisfied,
            action=action,
            conformant=conformant,
            post_true=new_true,
            post_observer=new_observer,
            measured=measured,
            effect=effect,
            model_witness=verdict.witness,
        )

    # -- helpers --------------------------------------------------------------

    def _control_verdict(self, observer: State, decision: Dict[str, float]) -> Verdict:
        post = dict(observer)
        post.update(decision)
        return self.cfg.control_monitor.check(TransitionPair(observer, post))

    def _fallback_decision(self, observer: State, rng: random.Random) -> Dict[str, float]:
        for attempt in range(40):
            cfg = RunConfig(rng_seed=derived_seed(rng.getrandbits(48), attempt))
            result = run_program(self.cfg.fallback, observer, cfg)
            if result is not None:
                return {v: result[0][v] for v in self._ctrl_bv if v in result[0]}
        raise SandboxError("fallback program blocked")

    def _sample_disturbance(self, state: State, rng: random.Random) -> tuple[float, bool]:
        macro = self.cfg.nf.disturbance
        lo = cached_term(macro.lo)(state, {})
        hi = cached_term(macro.hi)(state, {})
        inj = self.cfg.injections
        if inj.disturb_excess_prob > 0 and rng.random() < inj.disturb_excess_prob:
            span = max(hi - lo, self.cfg.delta, 1e-3)
            offset = span * rng.uniform(0.25, 1.0) * inj.disturb_excess_scale
            value = hi + offset if rng.random() < 0.5 else lo - offset
            return value, False
        return rng.uniform(lo, hi), True

    def _advance_plant(
        self, state: State, rng: random.Random, step_index: int
    ) -> tuple[State, PlantEffect]:
        # The sandbox drives the plant duration itself (exactly the sampling
        # period for timed plants), so the clock is bookkept explicitly
        # rather than integrated against its own exact-duration domain bound.
        inj = self.cfg.injections
        effect = PlantEffect()
        if self._ode is None:
            return state, effect
        ode = self._ode
        if self._duration_term is not None:
            duration = cached_term(self._duration_term)(state, {})
            state = dict(state)
            state[self._clock] = 0.0
            ode = ODE(
                tuple((x, rhs) for x, rhs in ode.equations if x != self._clock),
                TRUE,
            )
        elif inj.duration_script is not None:
            duration = inj.duration_script[min(step_index - 1, len(inj.duration_script) - 1)]
        else:
            duration = rng.uniform(0.0, self.cfg.plant_horizon)
        runner = Runner(RunConfig(rng_seed=0, ode_substeps=self.cfg.ode_substeps, tol=self.cfg.tol))
        new_state = state
        if ode.equations:
            new_state = runner._integrate(ode, dict(state), duration, effect)
        if self._duration_term is not None:
            new_state = dict(new_state)
            new_state[self._clock] = duration
            effect.add(self._clock, duration)
            effect.duration = duration
        return new_state, effect

    def _sample_drift(self, rng: random.Random, step_index: int) -> float:
        inj = self.cfg.injections
        if inj.drift_script is not None:
            i = step_index - 1
            return inj.drift_script[i] if i < len(inj.drift_script) else 0.0
        if inj.drift_prob > 0 and rng.random() < inj.drift_prob:
            magnitude = self.cfg.delta * rng.uniform(1.0, inj.drift_scale)
            return magnitude if rng.random() < 0.5 else -magnitude
        return 0.0

    def _sample_measurement(
        self, state: State, rng: random.Random, step_index: int
    ) -> tuple[float, bool]:
        delta = self.cfg.delta
        true_value = state[self._measured]
        inj = self.cfg.injections
        if inj.noise_script is not None:
            i = step_index - 1
            offset = inj.noise_script[i] if i < len(inj.noise_script) else 0.0
        elif inj.sensor_fault_prob > 0 and rng.random() < inj.sensor_fault_prob:
            magnitude = delta * rng.uniform(1.0 + 1e-6, inj.sensor_fault_scale)
            offset = magnitude if rng.random() < 0.5 else -magnitude
        else:
            offset = rng.uniform(-delta, delta)
        return true_value + offset, abs(offset) <= delta


def _referenced_ghosts(f) -> set[str]:
    from .syntax import free_vars, base_name, is_post

    names = set()
    try:
        for v in free_vars(f):
            names.add(base_name(v) if is_post(v) else v)
    except TypeError:
        return set()
    return {n for n in names if n.endswith("_0")}


def sandbox_step(
    cfg: SandboxConfig,
    current_true: State,
    current_observer: State,
    rng: random.Random,
    step_index: int = 1,
    pending_fallback: bool = False,
) -> StepOutcome:
    """One Simplex iteration from the given states."""
    return Sandbox(cfg).step(current_true, current_observer, rng, step_index, pending_fallback)


def run_episode(cfg: SandboxConfig, start: State, steps: int, seed: int = 0) -> Trace:
    """Run ``steps`` sandbox iterations; the trace includes the start row."""
    sandbox = Sandbox(cfg)
    rng = random.Random(seed)
    true_state, observer = sandbox.initial_states(start, rng)
    variables = sorted(true_state)
    measured_vars = [sandbox._measured] if sandbox._measured is not None else []
    trace = Trace(variables=variables, measured_variables=measured_vars)
    first_measured = (
        {sandbox._measured: true_state[sandbox._measurement]} if sandbox._measurement else {}
    )
    trace.append(TraceRow(step=0, time=0.0, state=dict(true_state), measured=first_measured))
    pending = False
    now = 0.0
    for i in range(1, steps + 1):
        outcome = sandbox.step(true_state, observer, rng, i, pending_fallback=pending)
        now += outcome.effect.duration
        trace.append(
            TraceRow(
                step=i,
                time=now,
                state=dict(outcome.post_true),
                measured=dict(outcome.measured),
                plant_effect=dict(outcome.effect.deltas),
                est_l=getattr(cfg.model_monitor, "estimate", None).l
                if isinstance(cfg.model_monitor, RollingMonitor)
                else None,
                est_u=getattr(cfg.model_monitor, "estimate", None).u
                if isinstance(cfg.model_monitor, RollingMonitor)
                else None,
                control_verdict=outcome.control_verdict,
                model_verdict=outcome.model_verdict,
                action=outcome.action,
                conformant=outcome.conformant,
            )
        )
        pending = cfg.intervene and outcome.model_verdict is False
        true_state = outcome.post_true
        observer = outcome.post_observer
    return trace


def validate_fallback(cfg: SandboxConfig, states: list[State], limit: int = 1000) -> int:
    """Sampling validation of the fallback against the control monitor.

    Every sampled fallback output must pass the control monitor; the first
    rejection aborts with :class:`SandboxError`.  Returns the number of
    checks performed.
    """
    rng = random.Random(1)
    sandbox = Sandbox(cfg)
    checked = 0
    for state in states[:limit]:
        observer = sandbox.observer_state(state, {})
        decision = sandbox._fallback_decision(observer, rng)
        if not sandbox._control_verdict(observer, decision).satisfied:
            raise SandboxError(f"fallback rejected by control monitor at {state}")
        checked += 1
    return checked
