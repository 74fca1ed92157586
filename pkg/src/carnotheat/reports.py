"""Run reports: threshold checks with error bars, JSON/CSV serialization.

The one rule every suite follows: a check never passes on a value whose
error bar crosses the threshold.  ``check_le(value, threshold, error)``
demands value + error <= threshold; ``check_close`` folds the bar into the
measured deviation.  Reports are deterministic functions of the config (the
wall-clock field is informational and excluded from that contract).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["Check", "RunReport", "check_le", "check_ge", "check_close"]


@dataclass(frozen=True)
class Check:
    """One pass/fail assertion with its measured value and error bar."""

    name: str
    value: float
    threshold: float
    error: float = 0.0
    mode: str = "le"          # le: value+error <= threshold; ge: value-error >=
    note: str = ""

    @property
    def passed(self) -> bool:
        if self.mode == "le":
            return bool(self.value + self.error <= self.threshold)
        if self.mode == "ge":
            return bool(self.value - self.error >= self.threshold)
        raise ValueError(f"unknown check mode {self.mode!r}")

    def row(self):
        return {"name": self.name, "value": self.value, "error": self.error,
                "threshold": self.threshold, "mode": self.mode,
                "passed": self.passed, "note": self.note}


def check_le(name, value, threshold, error=0.0, note="") -> Check:
    return Check(name=name, value=float(value), threshold=float(threshold),
                 error=abs(float(error)), mode="le", note=note)


def check_ge(name, value, threshold, error=0.0, note="") -> Check:
    return Check(name=name, value=float(value), threshold=float(threshold),
                 error=abs(float(error)), mode="ge", note=note)


def check_close(name, value, reference, rel, error=0.0, note="") -> Check:
    """|value - reference| + error <= rel * |reference|, reported as the
    relative deviation against ``rel``."""
    scale = abs(float(reference))
    if scale == 0.0:
        raise ValueError("check_close needs a nonzero reference")
    dev = abs(float(value) - float(reference)) / scale
    return Check(name=name, value=dev, threshold=float(rel),
                 error=abs(float(error)) / scale, mode="le",
                 note=note or f"value={value!r} ref={reference!r}")


@dataclass
class RunReport:
    """Everything one suite run produced, ready to serialize."""

    suite: str
    label: str
    config: dict                       # parsed TOML echo
    checks: list = field(default_factory=list)
    sweeps: list = field(default_factory=list)   # dicts with t_grid/values/...
    scalars: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    sample_count: int = 0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, check: Check):
        self.checks.append(check)

    def to_dict(self):
        return {
            "suite": self.suite,
            "label": self.label,
            "passed": self.passed,
            "config": self.config,
            "checks": [c.row() for c in self.checks],
            "sweeps": self.sweeps,
            "scalars": self.scalars,
            "wall_clock": self.wall_clock,
            "sample_count": self.sample_count,
        }

    def write(self, outdir) -> tuple[Path, Path]:
        """Write report.json plus a flat report.csv and return both paths."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        jpath = outdir / "report.json"
        jpath.write_text(json.dumps(self.to_dict(), indent=2,
                                    allow_nan=True) + "\n")
        cpath = outdir / "report.csv"
        with open(cpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["section", "name", "t", "value", "error",
                        "threshold", "passed"])
            for c in self.checks:
                w.writerow(["check", c.name, "", repr(c.value), repr(c.error),
                            repr(c.threshold), c.passed])
            for name, val in sorted(self.scalars.items()):
                w.writerow(["scalar", name, "", repr(float(val)), "", "", ""])
            for sweep in self.sweeps:
                label = sweep.get("label", "sweep")
                for t, v, e in zip(sweep.get("t_grid", []),
                                   sweep.get("values", []),
                                   sweep.get("errors", [])):
                    w.writerow(["sweep", label, repr(float(t)), repr(float(v)),
                                repr(float(e)), "", ""])
                if "limit" in sweep:
                    w.writerow(["limit", label, "", repr(float(sweep["limit"])),
                                repr(float(sweep.get("limit_error", math.nan))),
                                "", ""])
        return jpath, cpath

    def summary_lines(self):
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            cmp_ = "<=" if c.mode == "le" else ">="
            yield (f"[{status}] {c.name}: {c.value:.6g} (+-{c.error:.2g}) "
                   f"{cmp_} {c.threshold:.6g}")
