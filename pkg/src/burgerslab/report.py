"""Verdict-carrying statistics and their CSV / JSON persistence."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError

RULES = ("abs", "rel", "le", "ge", "range", "z", "info")


def _clean(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


@dataclass
class Statistic:
    """One measured quantity and the rule that turns it into a verdict.

    Rules: ``abs`` |est - target| <= tol, ``rel`` |est - target| <= tol |target|,
    ``le`` est <= target, ``ge`` est >= target, ``range`` target = (lo, hi),
    ``z`` |est - target| <= tol * stderr, ``info`` no verdict.
    """

    name: str
    estimate: float
    stderr: float = math.nan
    target: object = math.nan
    rule: str = "info"
    tolerance: float = 0.0
    note: str = ""

    def __post_init__(self):
        if self.rule not in RULES:
            raise ParameterError(f"unknown rule {self.rule!r}")
        if self.rule == "range" and len(self.target) != 2:
            raise ParameterError("range rule needs target = (lo, hi)")

    @property
    def verdict(self) -> str:
        est, tgt, tol = float(self.estimate), self.target, self.tolerance
        if self.rule == "info":
            return "info"
        if not math.isfinite(est):
            return "fail"
        ok = {
            "abs": lambda: abs(est - tgt) <= tol,
            "rel": lambda: abs(est - tgt) <= tol * abs(tgt),
            "le": lambda: est <= tgt,
            "ge": lambda: est >= tgt,
            "range": lambda: tgt[0] <= est <= tgt[1],
            "z": lambda: abs(est - tgt) <= tol * self.stderr,
        }[self.rule]()
        return "pass" if ok else "fail"

    @property
    def passed(self) -> bool:
        return self.verdict != "fail"

    def target_text(self) -> str:
        if self.rule == "range":
            return f"[{self.target[0]:.6g}, {self.target[1]:.6g}]"
        if self.rule == "info":
            return "" if isinstance(self.target, float) and math.isnan(self.target) else f"{self.target}"
        prefix = {"le": "<= ", "ge": ">= "}.get(self.rule, "")
        suffix = {"abs": f" ± {self.tolerance:.3g}", "rel": f" ± {100 * self.tolerance:.3g}%",
                  "z": f" ± {self.tolerance:g} se"}.get(self.rule, "")
        return f"{prefix}{self.target:.6g}{suffix}"

    def to_dict(self) -> dict:
        return _clean({"statistic": self.name, "estimate": self.estimate, "stderr": self.stderr,
                       "target": self.target, "rule": self.rule, "tolerance": self.tolerance,
                       "verdict": self.verdict, "note": self.note})


@dataclass
class StatReport:
    experiment: str
    statistics: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def add(self, *args, **kwargs) -> Statistic:
        stat = args[0] if args and isinstance(args[0], Statistic) else Statistic(*args, **kwargs)
        self.statistics.append(stat)
        return stat

    def extend(self, other: "StatReport", prefix: str = "") -> "StatReport":
        for s in other.statistics:
            self.statistics.append(Statistic(prefix + s.name, s.estimate, s.stderr, s.target,
                                             s.rule, s.tolerance, s.note))
        return self

    def __getitem__(self, name: str) -> Statistic:
        for s in self.statistics:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.statistics)

    def failures(self) -> list:
        return [s for s in self.statistics if not s.passed]

    def to_dict(self) -> dict:
        return _clean({"experiment": self.experiment, "passed": self.passed, "config": self.config,
                       "metadata": self.metadata, "statistics": [s.to_dict() for s in self.statistics]})

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n")
        return path

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["statistic", "estimate", "stderr", "target", "verdict"])
            for s in self.statistics:
                writer.writerow([s.name, f"{float(s.estimate):.10g}", f"{float(s.stderr):.6g}",
                                 s.target_text(), s.verdict])
        return path

    def lines(self) -> list:
        out = []
        for s in self.statistics:
            se = "" if not math.isfinite(float(s.stderr)) else f" (se {float(s.stderr):.3g})"
            out.append(f"[{s.verdict.upper():4}] {s.name}: {float(s.estimate):.6g}{se}  target {s.target_text()}")
        return out
