"""Shipped case studies, noise injection, and the precision/recall harness.

A scenario file bundles a model with monitor kind, injection parameters,
and episode counts.  Evaluation executes episodes with ground truth
recorded (the simulator knows true values and injected faults), labels each
step conformant exactly when every injected quantity stayed within its
modeled bounds and the executed decision passed the control monitor, and
aggregates precision (true non-alarms / all non-alarms) and recall (true
non-alarms / (true non-alarms + false alarms)).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, Optional

from .evaluation import TransitionPair, eval_formula
from .modelfile import Model, ModelFileError, load_model, load_model_text
from .monitors import (
    CompiledMonitor, ControlOnly, EvalConfig, RollingMonitor, build_monitor,
    compile_monitor, contraction_formula, kind_from_name,
)
from .programs import NormalFormKind, recognize_normal_form
from .sandbox import (
    Injections, Sandbox, SandboxConfig, SandboxError, model_controller,
    random_controller, run_episode, scripted_controller, validate_fallback,
)
from .simulate import derived_seed
from .synthesis import SynthesisReport, synthesize
from .syntax import Const, Neg
from .trace import Trace


class ScenarioError(ValueError):
    pass


def list_scenarios() -> list[str]:
    pkg = resources.files("hsmon").joinpath("data")
    return sorted(p.name[:-3] for p in pkg.iterdir() if p.name.endswith(".hp"))


def scenario_text(name: str) -> str:
    pkg = resources.files("hsmon").joinpath("data")
    candidate = pkg.joinpath(f"{name}.hp")
    if not candidate.is_file():
        raise ScenarioError(f"unknown scenario {name!r}; available: {list_scenarios()}")
    return candidate.read_text()


def load_scenario(name_or_path: str) -> Model:
    path = Path(name_or_path)
    if path.suffix == ".hp" and path.exists():
        return load_model(path)
    return load_model_text(scenario_text(name_or_path), name=name_or_path)


# ---------------------------------------------------------------------------
# Sandbox assembly
# ---------------------------------------------------------------------------

_NOISE_KEYS = {
    "fault_prob": "sensor_fault_prob",
    "fault_scale": "sensor_fault_scale",
    "drift_prob": "drift_prob",
    "drift_scale": "drift_scale",
    "excess_prob": "disturb_excess_prob",
    "excess_scale": "disturb_excess_scale",
    "initial_offset": "initial_offset",
    "noise_script": "noise_script",
    "drift_script": "drift_script",
    "duration_script": "duration_script",
}


def _injections(noise: Dict[str, object]) -> Injections:
    kwargs = {}
    for key, value in noise.items():
        if key not in _NOISE_KEYS:
            raise ScenarioError(f"unknown noise parameter {key!r}")
        target = _NOISE_KEYS[key]
        if target.endswith("_script"):
            value = value if isinstance(value, tuple) else (float(value),)
        kwargs[target] = value
    return Injections(**kwargs)


def _policy(model: Model, nf):
    spec = dict(model.controller)
    name = spec.pop("policy", "model")
    if name == "model":
        return model_controller(nf.ctrl)
    if name == "scripted":
        return scripted_controller([{k: float(v) for k, v in spec.items()}])
    if name in ("random", "adversarial"):
        choices = {}
        for key, value in spec.items():
            choices[key] = value if isinstance(value, tuple) else (float(value),)
        return random_controller(choices)
    raise ScenarioError(f"unknown controller policy {name!r}")


def build_sandbox(model: Model, intervene: Optional[bool] = None) -> SandboxConfig:
    nf = recognize_normal_form(model.body)
    eval_cfg = EvalConfig(tol=model.episodes.tol, grid=model.episodes.grid)
    kind_name = model.monitor_kind or "exact"
    control = compile_monitor(
        model.body, ControlOnly(), model.diff_invariants, model.unobservable, eval_cfg
    )
    if kind_name == "rolling":
        if model.estimator is None:
            raise ScenarioError("rolling monitor needs an estimator section")
        monitor = RollingMonitor(
            model.body, model.estimator, model.delta,
            model.diff_invariants, model.unobservable, eval_cfg,
        )
    else:
        monitor = compile_monitor(
            model.body, kind_from_name(kind_name, model.estimator),
            model.diff_invariants, model.unobservable, eval_cfg,
        )
    if model.fallback is None:
        raise ScenarioError("scenario needs a fallback section")
    return SandboxConfig(
        body=model.body,
        nf=nf,
        control_monitor=control,
        model_monitor=monitor,
        fallback=model.fallback,
        invariant=model.invariant,
        safety=model.safety,
        untrusted=_policy(model, nf),
        injections=_injections(model.noise),
        delta=model.delta,
        plant_horizon=model.episodes.duration,
        intervene=model.episodes.intervene if intervene is None else intervene,
        check_invariant=model.episodes.intervene if intervene is None else intervene,
        tol=model.episodes.tol,
    )


def audit_scenario(model: Model, samples: int = 50, seed: int = 0) -> None:
    """Load-time audit: assumptions imply the invariant and the invariant
    implies safety on sampled start states."""
    rng = random.Random(seed)
    tol = model.episodes.tol
    for i in range(samples):
        state = dict(model.start)
        if i > 0:
            for k in state:
                state[k] += rng.uniform(-0.02, 0.02) * (abs(state[k]) + 1.0)
        pair = TransitionPair(state, {})
        try:
            if eval_formula(model.assumptions, pair, tol) and not eval_formula(
                model.invariant, pair, tol
            ):
                raise ScenarioError(f"assumptions do not imply the invariant at {state}")
            if eval_formula(model.invariant, pair, tol) and not eval_formula(
                model.safety, pair, tol
            ):
                raise ScenarioError(f"invariant does not imply safety at {state}")
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            # Start state may not cover audit-only variables; skip jitters
            # that stray outside the declared set.
            continue


def conformant_states(model: Model, episodes: int = 5, steps: int = 20, seed: int = 42):
    """Sample reachable states from injection-free conformant rollouts."""
    clean = Model(
        name=model.name, body=model.body, definitions=model.definitions,
        invariant=model.invariant, safety=model.safety, assumptions=model.assumptions,
        diff_invariants=model.diff_invariants, fallback=model.fallback,
        unobservable=model.unobservable, estimator=model.estimator,
        monitor_kind=model.monitor_kind, start=model.start,
        episodes=model.episodes, noise={}, controller={"policy": "model"},
    )
    cfg = build_sandbox(clean, intervene=False)
    cfg.check_invariant = False
    out = []
    for e in range(episodes):
        trace = run_episode(cfg, model.start, steps, seed=derived_seed(seed, e))
        out.extend(dict(r.state) for r in trace.rows)
    return out


# ---------------------------------------------------------------------------
# Precision/recall evaluation
# ---------------------------------------------------------------------------

@dataclass
class PRReport:
    true_nonalarms: int = 0
    all_nonalarms: int = 0
    false_alarms: int = 0
    true_alarms: int = 0
    steps: int = 0
    runs: int = 0

    @property
    def precision(self) -> Optional[float]:
        if self.all_nonalarms == 0:
            return None
        return self.true_nonalarms / self.all_nonalarms

    @property
    def recall(self) -> Optional[float]:
        denom = self.true_nonalarms + self.false_alarms
        if denom == 0:
            return None
        return self.true_nonalarms / denom

    def record(self, conformant: bool, alarmed: bool):
        self.steps += 1
        if alarmed:
            if conformant:
                self.false_alarms += 1
            else:
                self.true_alarms += 1
        else:
            self.all_nonalarms += 1
            if conformant:
                self.true_nonalarms += 1

    def to_dict(self) -> Dict[str, object]:
        return {
            "true_nonalarms": self.true_nonalarms,
            "all_nonalarms": self.all_nonalarms,
            "false_alarms": self.false_alarms,
            "true_alarms": self.true_alarms,
            "steps": self.steps,
            "runs": self.runs,
            "precision": self.precision,
            "recall": self.recall,
        }


@dataclass
class EvaluationResult:
    scenario: str
    report: PRReport
    traces: list[Trace] = field(default_factory=list)

    def summary_json(self) -> str:
        payload = {"scenario": self.scenario, **self.report.to_dict()}
        return json.dumps(payload, indent=2, sort_keys=True)

    def traces_csv(self) -> str:
        # Episodes are concatenated; a run column prefixes every row.
        chunks = []
        for run, trace in enumerate(self.traces):
            csv_text = trace.to_csv()
            lines = csv_text.splitlines()
            if run == 0:
                chunks.append("run," + lines[0])
            chunks.extend(f"{run}," + line for line in lines[1:])
        return "\n".join(chunks) + "\n"


def run_evaluation(
    model: Model,
    runs: Optional[int] = None,
    steps: Optional[int] = None,
    seed: Optional[int] = None,
    audit: bool = True,
    validate: bool = False,
) -> EvaluationResult:
    """Execute runs x steps episodes and aggregate the PR report.

    Monitoring is passive here (fallback does not rewrite history) unless
    the scenario enables intervention; ground-truth conformance labels come
    from the injectors.
    """
    runs = runs if runs is not None else model.episodes.runs
    steps = steps if steps is not None else model.episodes.steps
    seed = seed if seed is not None else model.episodes.seed
    if runs < 1 or steps < 0:
        raise ScenarioError("need runs >= 1 and steps >= 0")
    if audit:
        audit_scenario(model)
    cfg = build_sandbox(model)
    if validate:
        validate_fallback(cfg, conformant_states(model), limit=1000)
    report = PRReport(runs=runs)
    traces = []
    for r in range(runs):
        if isinstance(cfg.model_monitor, RollingMonitor):
            cfg.model_monitor.reset()
        trace = run_episode(cfg, model.start, steps, seed=derived_seed(seed, r))
        for row in trace.rows[1:]:
            report.record(bool(row.conformant), row.model_verdict is False)
        traces.append(trace)
    return EvaluationResult(scenario=model.name, report=report, traces=traces)


# ---------------------------------------------------------------------------
# Scripted drift scenario (pairwise vs rolling first-violation steps)
# ---------------------------------------------------------------------------

@dataclass
class DriftComparison:
    trace: Trace
    pairwise_verdicts: list[bool]
    rolling_verdicts: list[bool]

    @property
    def pairwise_first_violation(self) -> Optional[int]:
        return _first_false(self.pairwise_verdicts)

    @property
    def rolling_first_violation(self) -> Optional[int]:
        return _first_false(self.rolling_verdicts)


def _first_false(verdicts: list[bool]) -> Optional[int]:
    for i, v in enumerate(verdicts, start=1):
        if not v:
            return i
    return None


def fig6_scenario(scale: float = 1.0) -> DriftComparison:
    """Run the scripted drift scenario under both measurement monitors.

    ``scale`` multiplies the scripted drift and noise offsets; at 0.5 both
    monitors stay satisfied throughout.
    """
    model = load_scenario("flight_drift")
    if scale != 1.0:
        scaled = dict(model.noise)
        scaled["noise_script"] = tuple(scale * v for v in model.noise["noise_script"])
        scaled["drift_script"] = tuple(scale * v for v in model.noise["drift_script"])
        model.noise = scaled
    steps = model.episodes.steps
    pairwise_cfg = build_sandbox(model)
    trace = run_episode(pairwise_cfg, model.start, steps, seed=model.episodes.seed)
    pairwise = [bool(r.model_verdict) for r in trace.rows[1:]]

    rolling_model = model
    rolling_model.monitor_kind = "rolling"
    rolling_cfg = build_sandbox(rolling_model)
    rolling_trace = run_episode(rolling_cfg, model.start, steps, seed=model.episodes.seed)
    rolling = [bool(r.model_verdict) for r in rolling_trace.rows[1:]]
    return DriftComparison(trace=trace, pairwise_verdicts=pairwise, rolling_verdicts=rolling)


# ---------------------------------------------------------------------------
# Synthesis entry point used by the service/CLI
# ---------------------------------------------------------------------------

@dataclass
class SynthesisBundle:
    monitor_text: str
    report: SynthesisReport
    obligation_text: Optional[str] = None

    def trace_jsonl(self) -> str:
        lines = [json.dumps({"rule": rule}) for rule in self.report.methods]
        lines.append(
            json.dumps({"residual_quantifiers": self.report.residual_quantifiers})
        )
        return "\n".join(lines) + "\n"


def synthesize_for_model(model: Model, kind_name: Optional[str] = None) -> SynthesisBundle:
    name = kind_name or model.monitor_kind or "exact"
    condition = build_monitor(
        model.body,
        kind_from_name(name, model.estimator),
        model.diff_invariants,
        model.unobservable,
    )
    report = synthesize(condition)
    obligation = None
    nf = recognize_normal_form(model.body)
    if nf.kind is NormalFormKind.MEASUREMENT and name in ("pairwise", "rolling"):
        delta = model.delta
        formula = contraction_formula(
            model.invariant, nf.measured_var, nf.measurement_var,
            Neg(Const(delta)), Const(delta),
        )
        obligation = str(formula)
    return SynthesisBundle(
        monitor_text=str(report.output), report=report, obligation_text=obligation
    )
