"""Time-indexed traces of monitored episodes and their CSV serialization."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, Optional


@dataclass
class TraceRow:
    step: int
    time: float
    state: Dict[str, float]                      # true state
    measured: Dict[str, float] = field(default_factory=dict)
    plant_effect: Dict[str, float] = field(default_factory=dict)
    est_l: Optional[float] = None
    est_u: Optional[float] = None
    control_verdict: Optional[bool] = None
    model_verdict: Optional[bool] = None
    action: str = ""                             # "", "pass-through", "fallback-engaged"
    conformant: Optional[bool] = None            # ground-truth label


@dataclass
class Trace:
    variables: list[str]
    measured_variables: list[str] = field(default_factory=list)
    rows: list[TraceRow] = field(default_factory=list)

    def append(self, row: TraceRow):
        self.rows.append(row)

    def header(self) -> list[str]:
        cols = ["step", "time"]
        cols += self.variables
        cols += [f"measured_{v}" for v in self.measured_variables]
        if any(r.est_l is not None for r in self.rows):
            cols += ["est_l", "est_u"]
        cols += ["control_verdict", "model_verdict", "action", "conformant"]
        return cols

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = self.header()
        with_est = "est_l" in header
        writer.writerow(header)
        for r in self.rows:
            row: list = [r.step, repr(r.time)]
            row += [repr(r.state[v]) for v in self.variables]
            row += [repr(r.measured[v]) if v in r.measured else "" for v in self.measured_variables]
            if with_est:
                row += [
                    "" if r.est_l is None else repr(r.est_l),
                    "" if r.est_u is None else repr(r.est_u),
                ]
            row += [
                _flag(r.control_verdict),
                _flag(r.model_verdict),
                r.action,
                _flag(r.conformant),
            ]
            writer.writerow(row)
        return buf.getvalue()


def _flag(value: Optional[bool]) -> str:
    if value is None:
        return ""
    return "1" if value else "0"
