"""Tests for verdicts and the CSV / JSON report emitters."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from squarefield.report import (
    SCHEMA,
    ExperimentReport,
    VerdictStatus,
    check,
    emit,
    report_from_json,
    to_csv,
    to_json,
    write_report,
)


@pytest.fixture
def report():
    r = ExperimentReport("compare", {"seed": 0, "p_values": [0.5, 2.0]}, ["index", "ratio"])
    r.add_row(0, np.float64(1.25))
    r.add_row(1, None)
    r.scalars["slope"] = 0.5
    r.verdicts.append(check("explicit_bound", 0.1, 0.0, ">="))
    r.verdicts.append(check("ratio_ceiling", 5.0, 3.0, informational=True))
    r.timings["rows"] = 0.25
    return r


class TestCheck:
    @pytest.mark.parametrize(
        "value, threshold, relation, status",
        [
            (1.0, 2.0, "<=", VerdictStatus.PASS),
            (2.0, 2.0, "<=", VerdictStatus.PASS),
            (2.0, 2.0, "<", VerdictStatus.FAIL),
            (3.0, 2.0, ">", VerdictStatus.PASS),
            (2.0, 2.0, ">=", VerdictStatus.PASS),
            (1.0, 2.0, ">=", VerdictStatus.FAIL),
        ],
    )
    def test_relations(self, value, threshold, relation, status):
        assert check("x", value, threshold, relation).status is status

    @pytest.mark.parametrize("value", [None, math.nan, math.inf])
    def test_undefined_values_fail(self, value):
        verdict = check("x", value, 1e9, "<=")
        assert verdict.status is VerdictStatus.FAIL

    def test_informational_never_fails(self):
        assert check("x", None, 1.0, informational=True).status is VerdictStatus.INFORMATIONAL

    def test_unknown_relation(self):
        with pytest.raises(ValueError, match="Unknown relation"):
            check("x", 1.0, 1.0, "==")

    def test_numpy_value_becomes_float(self):
        assert type(check("x", np.float32(1.5), 2.0).value) is float


class TestReport:
    def test_passed(self, report):
        assert report.passed
        assert report.exit_code == 0
        report.verdicts.append(check("gap", 1.0, 0.5))
        assert not report.passed
        assert report.exit_code == 1

    def test_add_row_checks_length(self, report):
        with pytest.raises(ValueError, match="2 columns"):
            report.add_row(1, 2, 3)

    def test_add_row_converts_numpy_scalars(self, report):
        assert type(report.rows[0][1]) is float


class TestCsv:
    def test_sections(self, report):
        lines = to_csv(report).splitlines()
        assert lines[:3] == ["index,ratio", "0,1.25", "1,undefined"]
        assert lines[3] == ""
        assert lines[4:6] == ["scalar,value", "slope,0.5"]
        assert lines[7] == "verdict,status,value,threshold,relation"
        assert lines[8] == "explicit_bound,pass,0.1,0.0,>="
        assert lines[9] == "ratio_ceiling,informational,5.0,3.0,<="

    def test_timings_only_on_request(self, report):
        assert "stage,seconds" not in to_csv(report)
        assert to_csv(report, timings=True).splitlines()[-1] == "rows,0.25"

    def test_booleans(self):
        r = ExperimentReport("x", {}, ["ok"])
        r.add_row(True)
        assert to_csv(r).splitlines()[1] == "true"


class TestJson:
    def test_schema_and_content(self, report):
        data = json.loads(to_json(report))
        assert data["schema"] == SCHEMA
        assert data["rows"] == [[0, 1.25], [1, None]]
        assert data["verdicts"][0] == {
            "name": "explicit_bound",
            "status": "pass",
            "value": 0.1,
            "threshold": 0.0,
            "relation": ">=",
        }
        assert "timings" not in data

    def test_non_finite_values_are_null(self):
        r = ExperimentReport("x", {"bound": math.inf}, ["v"])
        r.add_row(math.nan)
        r.verdicts.append(check("v", math.nan, 1.0))
        data = json.loads(to_json(r))
        assert data["rows"] == [[None]]
        assert data["config"]["bound"] is None
        assert data["verdicts"][0]["value"] is None

    def test_read_back(self, report):
        loaded = report_from_json(to_json(report, timings=True))
        assert loaded == report
        assert loaded.timings == report.timings
        assert loaded.verdicts[1].status is VerdictStatus.INFORMATIONAL

    def test_rejects_other_schema(self):
        with pytest.raises(ValueError, match="schema"):
            report_from_json(json.dumps({"schema": "other/1"}))


class TestEmit:
    def test_formats(self, report):
        assert emit(report, "csv") == to_csv(report)
        assert emit(report, "json") == to_json(report)

    def test_unknown_format(self, report):
        with pytest.raises(ValueError, match="Unknown report format"):
            emit(report, "xml")

    def test_write_to_file(self, report, tmp_path):
        path = tmp_path / "out" / "report.json"
        write_report(report, "json", path)
        assert json.loads(path.read_text(encoding="utf-8"))["experiment"] == "compare"

    def test_write_to_stdout(self, report, capsys):
        write_report(report, "csv")
        assert capsys.readouterr().out.startswith("index,ratio\n")
