"""Loader for ``.hp`` model and scenario files.

A file is a sequence of sections introduced by ``name:`` at the start of a
line; the section body is the inline remainder plus all following lines up
to the next section header.  ``#`` starts a comment.  Model sections:
``definitions``, ``program``, ``invariant``, ``diff_invariants``,
``safety``, ``assumptions``, ``fallback``, ``unobservable``, ``estimator``.
Scenario sections: ``name``, ``monitor``, ``start``, ``episodes``,
``noise``, ``controller``, ``expectations``.

Named constants from ``definitions`` are evaluated and inlined into every
program and formula, so downstream synthesis sees numeric coefficients.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

from .estimator import EstimatorSpec
from .evaluation import TransitionPair, eval_term
from .parser import ParseError, parse_formula, parse_program, parse_term
from .syntax import (
    Const, Formula, HybridProgram, Loop, TRUE, bound_vars, free_vars,
    program_free_vars, subst_formula, subst_program,
)


class ModelFileError(ValueError):
    pass


_MODEL_SECTIONS = {
    "definitions", "program", "invariant", "diff_invariants", "safety",
    "assumptions", "fallback", "unobservable", "estimator",
}
_SCENARIO_SECTIONS = {
    "name", "description", "monitor", "start", "episodes", "noise",
    "controller", "expectations",
}
_SECTION_RE = re.compile(r"^([a-z_]+):\s*(.*)$")


def _split_sections(text: str) -> Dict[str, str]:
    sections: Dict[str, str] = {}
    current: Optional[str] = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        m = _SECTION_RE.match(line)
        if m and not raw[0].isspace():
            name = m.group(1)
            if name not in _MODEL_SECTIONS | _SCENARIO_SECTIONS:
                raise ModelFileError(f"unknown section {name!r}")
            if name in sections:
                raise ModelFileError(f"duplicate section {name!r}")
            current = name
            sections[current] = m.group(2).strip()
        else:
            if current is None:
                raise ModelFileError(f"content before first section: {line.strip()!r}")
            sections[current] = (sections[current] + "\n" + line.strip()).strip()
    return sections


def _parse_assignments(body: str, context: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for line in body.splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise ModelFileError(f"expected name = value in {context}: {line!r}")
        name, value = line.split("=", 1)
        out[name.strip()] = value.strip()
    return out


def _eval_definitions(body: str) -> Dict[str, float]:
    values: Dict[str, float] = {}
    for name, expr in _parse_assignments(body, "definitions").items():
        term = parse_term(expr)
        try:
            values[name] = eval_term(term, TransitionPair(values, {}))
        except Exception as exc:
            raise ModelFileError(f"cannot evaluate definition {name}: {exc}") from exc
    return values


@dataclass
class EpisodeParams:
    runs: int = 1
    steps: int = 10
    seed: int = 0
    intervene: bool = False
    duration: float = 1.0           # plant horizon for untimed ODEs
    tol: float = 1e-9               # monitor equality tolerance
    grid: int = 101                 # witness-search grid resolution


@dataclass
class Model:
    """A parsed model/scenario file with constants inlined."""

    name: str
    body: HybridProgram                         # loop body
    definitions: Dict[str, float] = field(default_factory=dict)
    invariant: Formula = TRUE
    safety: Formula = TRUE
    assumptions: Formula = TRUE
    diff_invariants: Optional[Formula] = None
    fallback: Optional[HybridProgram] = None
    unobservable: frozenset[str] = frozenset()
    estimator: Optional[EstimatorSpec] = None
    monitor_kind: Optional[str] = None
    start: Dict[str, float] = field(default_factory=dict)
    episodes: EpisodeParams = field(default_factory=EpisodeParams)
    noise: Dict[str, object] = field(default_factory=dict)
    controller: Dict[str, object] = field(default_factory=dict)
    expectations: Dict[str, float] = field(default_factory=dict)

    @property
    def delta(self) -> float:
        return float(self.definitions.get("delta", 0.0))


def _parse_scalar(value: str):
    lowered = value.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if "," in value:
        return tuple(float(v.strip()) for v in value.split(",") if v.strip())
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def load_model_text(text: str, name: str = "model") -> Model:
    sections = _split_sections(text)
    if "program" not in sections:
        raise ModelFileError("missing program section")
    definitions = _eval_definitions(sections.get("definitions", ""))
    inline = {n: Const(v) for n, v in definitions.items()}

    def formula(section: str, default: Formula = TRUE) -> Formula:
        if section not in sections:
            return default
        try:
            return subst_formula(parse_formula(sections[section]), inline)
        except ParseError as exc:
            raise ModelFileError(f"in section {section}: {exc}") from exc

    try:
        program = subst_program(parse_program(sections["program"]), inline)
    except ParseError as exc:
        raise ModelFileError(f"in section program: {exc}") from exc
    body = program.body if isinstance(program, Loop) else program

    fallback = None
    if "fallback" in sections:
        fallback = subst_program(parse_program(sections["fallback"]), inline)

    estimator = None
    if "estimator" in sections:
        rules = _parse_assignments(sections["estimator"], "estimator")
        if set(rules) != {"l", "u"}:
            raise ModelFileError("estimator section needs exactly l = ... and u = ...")
        estimator = EstimatorSpec(lower=parse_term(rules["l"]), upper=parse_term(rules["u"]))

    unobservable = frozenset(sections.get("unobservable", "").split())

    start = {}
    for var, expr in _parse_assignments(sections.get("start", ""), "start").items():
        start[var] = eval_term(parse_term(expr), TransitionPair(definitions, {}))

    episodes = EpisodeParams()
    for key, value in _parse_assignments(sections.get("episodes", ""), "episodes").items():
        if not hasattr(episodes, key):
            raise ModelFileError(f"unknown episode parameter {key!r}")
        setattr(episodes, key, _parse_scalar(value))

    noise = {k: _parse_scalar(v) for k, v in _parse_assignments(sections.get("noise", ""), "noise").items()}
    controller = {
        k: _parse_scalar(v)
        for k, v in _parse_assignments(sections.get("controller", ""), "controller").items()
    }
    expectations = {
        k: float(v)
        for k, v in _parse_assignments(sections.get("expectations", ""), "expectations").items()
    }

    model = Model(
        name=sections.get("name", name),
        body=body,
        definitions=definitions,
        invariant=formula("invariant"),
        safety=formula("safety"),
        assumptions=formula("assumptions"),
        diff_invariants=formula("diff_invariants", default=None) if "diff_invariants" in sections else None,
        fallback=fallback,
        unobservable=unobservable,
        estimator=estimator,
        monitor_kind=sections.get("monitor") or None,
        start=start,
        episodes=episodes,
        noise=noise,
        controller=controller,
        expectations=expectations,
    )
    _validate(model)
    return model


def _validate(model: Model):
    clash = set(model.definitions) & bound_vars(model.body)
    if clash:
        raise ModelFileError(f"definitions bound by the program: {sorted(clash)}")
    missing = {
        v
        for v in program_free_vars(model.body)
        if v not in model.start and v not in bound_vars(model.body)
    }
    if model.start and missing:
        raise ModelFileError(f"start state missing variables: {sorted(missing)}")


def load_model(path: str | Path) -> Model:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelFileError(f"cannot read {path}: {exc}") from exc
    return load_model_text(text, name=path.stem)
