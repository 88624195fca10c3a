"""Experiment reports: tri-state verdicts and stable CSV / JSON emission."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)

SCHEMA = "squarefield.report/1"
UNDEFINED = "undefined"

_RELATIONS = {
    "<": lambda v, t: v < t,
    "<=": lambda v, t: v <= t,
    ">": lambda v, t: v > t,
    ">=": lambda v, t: v >= t,
}


class VerdictStatus(Enum):
    PASS = "pass"
    FAIL = "fail"
    INFORMATIONAL = "informational"


@dataclass(frozen=True)
class Verdict:
    name: str
    status: VerdictStatus
    value: float | None
    threshold: float | None
    relation: str  # <, <=, >, >=

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "status": self.status.value,
            "value": _json_value(self.value),
            "threshold": _json_value(self.threshold),
            "relation": self.relation,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Verdict:
        return cls(
            name=data["name"],
            status=VerdictStatus(data["status"]),
            value=data.get("value"),
            threshold=data.get("threshold"),
            relation=data.get("relation", "<="),
        )


def check(
    name: str,
    value: float | None,
    threshold: float,
    relation: str = "<=",
    *,
    informational: bool = False,
) -> Verdict:
    """Verdict for ``value relation threshold``; an undefined value fails."""
    if relation not in _RELATIONS:
        raise ValueError(f"Unknown relation: {relation}")
    value = None if value is None else float(value)
    if informational:
        status = VerdictStatus.INFORMATIONAL
    elif value is not None and math.isfinite(value) and _RELATIONS[relation](value, threshold):
        status = VerdictStatus.PASS
    else:
        status = VerdictStatus.FAIL
    return Verdict(name, status, value, float(threshold), relation)


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    columns: list[str]
    rows: list[list[Any]] = field(default_factory=list)
    scalars: dict[str, Any] = field(default_factory=dict)
    verdicts: list[Verdict] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict, compare=False)

    @property
    def passed(self) -> bool:
        return all(v.status is not VerdictStatus.FAIL for v in self.verdicts)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def add_row(self, *values: Any) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"row has {len(values)} values for {len(self.columns)} columns")
        self.rows.append([_plain(v) for v in values])


def _plain(value: Any) -> Any:
    """numpy scalars to Python scalars."""
    if isinstance(value, np.generic):
        return value.item()
    return value


def _cell(value: Any) -> str:
    value = _plain(value)
    if value is None:
        return UNDEFINED
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _json_value(value: Any) -> Any:
    value = _plain(value)
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_value(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_value(v) for v in value]
    return value


def to_csv(report: ExperimentReport, timings: bool = False) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(report.columns)
    writer.writerows([_cell(v) for v in row] for row in report.rows)
    if report.scalars:
        writer.writerow([])
        writer.writerow(["scalar", "value"])
        writer.writerows([name, _cell(value)] for name, value in report.scalars.items())
    if report.verdicts:
        writer.writerow([])
        writer.writerow(["verdict", "status", "value", "threshold", "relation"])
        for v in report.verdicts:
            writer.writerow(
                [v.name, v.status.value, _cell(v.value), _cell(v.threshold), v.relation]
            )
    if timings and report.timings:
        writer.writerow([])
        writer.writerow(["stage", "seconds"])
        writer.writerows([stage, _cell(seconds)] for stage, seconds in report.timings.items())
    return buffer.getvalue()


def to_json(report: ExperimentReport, timings: bool = False) -> str:
    data = {
        "schema": SCHEMA,
        "experiment": report.experiment,
        "config": _json_value(report.config),
        "columns": list(report.columns),
        "rows": _json_value(report.rows),
        "scalars": _json_value(report.scalars),
        "verdicts": [v.to_dict() for v in report.verdicts],
    }
    if timings:
        data["timings"] = _json_value(report.timings)
    return json.dumps(data, indent=2, allow_nan=False) + "\n"


def report_from_json(text: str) -> ExperimentReport:
    data = json.loads(text)
    if data.get("schema") != SCHEMA:
        raise ValueError(f"unsupported report schema: {data.get('schema')}")
    return ExperimentReport(
        experiment=data["experiment"],
        config=data.get("config", {}),
        columns=list(data["columns"]),
        rows=[list(row) for row in data.get("rows", [])],
        scalars=dict(data.get("scalars", {})),
        verdicts=[Verdict.from_dict(v) for v in data.get("verdicts", [])],
        timings=dict(data.get("timings", {})),
    )


def emit(report: ExperimentReport, fmt: str = "csv", timings: bool = False) -> str:
    if fmt == "csv":
        return to_csv(report, timings)
    if fmt == "json":
        return to_json(report, timings)
    raise ValueError(f"Unknown report format: {fmt}")


def write_report(
    report: ExperimentReport,
    fmt: str = "csv",
    path: str | Path | None = None,
    timings: bool = False,
) -> None:
    text = emit(report, fmt, timings)
    if path is None:
        sys.stdout.write(text)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    logger.info("Wrote %s report to %s", fmt, path)
