"""Set-membership rolling state estimators.

An estimate ``[l, u]`` is anchored to the current measurement: the true
value lies in ``[yhat+l, yhat+u]``.  Update rules are data (closed-form
term pairs over reserved input names), so the rolling monitor can splice
them into program ASTs as the estimator-update suffix.
"""

from __future__ import annotations

from dataclasses import dataclass

from .evaluation import DEFAULT_TOL, TransitionPair, eval_term
from .parser import parse_term
from .syntax import Term, term_vars

#: Input names available to estimator update terms.
UPDATE_INPUTS = ("yhat0", "yhat", "effect", "delta", "l0", "u0")


class EstimateInconsistent(ValueError):
    """Measurement history admits no true value (rolling-monitor violation)."""

    def __init__(self, l: float, u: float):
        super().__init__(f"inconsistent estimate: l={l} > u={u}")
        self.l = l
        self.u = u


@dataclass(frozen=True)
class Estimate:
    l: float
    u: float

    def __post_init__(self):
        if self.l > self.u:
            raise EstimateInconsistent(self.l, self.u)

    @property
    def width(self) -> float:
        return self.u - self.l


@dataclass(frozen=True)
class EstimatorSpec:
    """Closed-form update ``e(yhat0, yhat, effect, delta, [l0,u0]) -> [l,u]``."""

    lower: Term
    upper: Term

    def __post_init__(self):
        unknown = (term_vars(self.lower) | term_vars(self.upper)) - set(UPDATE_INPUTS)
        if unknown:
            raise ValueError(f"estimator terms use unknown inputs: {sorted(unknown)}")


def flight_velocity_estimator() -> EstimatorSpec:
    """Interval update for a measured quantity with known plant effect.

    Shifts the previous deviation bounds by the measurement change plus the
    modeled effect and clips them to the sensor band ``[-delta, delta]``.
    """
    return EstimatorSpec(
        lower=parse_term("max(-delta, yhat0 - yhat + effect + l0)"),
        upper=parse_term("min(delta, yhat0 - yhat + effect + u0)"),
    )


def initial_estimate(delta: float) -> Estimate:
    """Before any history, only the sensor band is known."""
    return Estimate(-delta, delta)


def update(
    spec: EstimatorSpec,
    yhat0: float,
    yhat: float,
    plant_effect: float,
    delta: float,
    est0: Estimate,
) -> Estimate:
    """One estimator step; raises :class:`EstimateInconsistent` when the
    new measurement cannot be explained by any true value in the history."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    env = {
        "yhat0": yhat0,
        "yhat": yhat,
        "effect": plant_effect,
        "delta": delta,
        "l0": est0.l,
        "u0": est0.u,
    }
    pair = TransitionPair(env, {})
    return Estimate(eval_term(spec.lower, pair), eval_term(spec.upper, pair))


def contains_truth(est: Estimate, yhat: float, y_true: float, tol: float = DEFAULT_TOL) -> bool:
    """Membership of the true value in the estimate around the measurement."""
    return yhat + est.l - tol <= y_true <= yhat + est.u + tol
