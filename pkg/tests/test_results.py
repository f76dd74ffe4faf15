"""Tests for result and trace files."""
import csv
import json

import pytest

from src.models.errors import ResultsIoError
from src.models.schemas import ResultRow
from src.models.simulation import SlotTrace
from src.services.results import COLUMNS, emit_results, emit_trace, parse_results, render_results


def row(**values):
    data = dict(experiment="unit", mode="dp", strategy="dp-optimal", n_channels=2, horizon_slots=2,
                bandwidth_bits=100.0, value_bits=50.4, value_exact="252/5", first_action=[1],
                oracle_match=True)
    data.update(values)
    return ResultRow(**data)


class TestRender:
    def test_header_and_one_line(self):
        lines = render_results([row()], "csv").splitlines()
        assert len(lines) == 2
        assert lines[0].split(",") == COLUMNS
        assert "horizon_slots" in COLUMNS and "mean_loss_bits" in COLUMNS

    def test_cells(self):
        record = next(csv.DictReader(render_results([row(mean_bits=1 / 3)], "csv").splitlines()))
        assert record["value_exact"] == "252/5"
        assert record["first_action"] == "[1]"
        assert record["oracle_match"] == "true"
        assert record["absorbing"] == ""
        assert record["mean_bits"] == "0.333333333333"

    def test_json(self):
        records = json.loads(render_results([row(), row(strategy="other")], "json"))
        assert [r["strategy"] for r in records] == ["dp-optimal", "other"]
        assert records[0]["value_bits"] == 50.4
        assert list(records[0]) == COLUMNS

    def test_no_rows(self, tmp_path):
        path = tmp_path / "out.csv"
        with pytest.raises(ResultsIoError):
            emit_results([], "csv", path)
        assert not path.exists()

    def test_unknown_format(self):
        with pytest.raises(ResultsIoError):
            render_results([row()], "xml")


class TestFiles:
    @pytest.mark.parametrize("fmt", ["csv", "json"])
    def test_read_back(self, tmp_path, fmt):
        original = [row(selection_freq=[0.25, 0.75], per_user_bits=[1.5, 2.5]), row(strategy="b", mean_bits=2.0)]
        path = emit_results(original, fmt, tmp_path / f"out.{fmt}")
        parsed = parse_results(path)
        assert [r.strategy for r in parsed] == ["dp-optimal", "b"]
        assert parsed[0].selection_freq == [0.25, 0.75]
        assert parsed[0].oracle_match is True
        assert parsed[1].mean_bits == 2.0
        assert parsed[1].first_action == [1]

    def test_nested_directories(self, tmp_path):
        path = emit_results([row()], "csv", tmp_path / "a" / "b" / "out.csv")
        assert path.exists()

    def test_bad_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("[{\"experiment\": 1}]")
        with pytest.raises(ResultsIoError):
            parse_results(path)
        with pytest.raises(ResultsIoError):
            parse_results(tmp_path / "missing.csv")

    def test_trace(self, tmp_path):
        records = [
            SlotTrace(replication=0, slot=1, channels=[0], free=[True], transmitted=[True]),
            SlotTrace(replication=0, slot=2, user=1, channels=[1], free=[False], transmitted=[False]),
        ]
        path = emit_trace(records, tmp_path / "run.trace.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "replication,slot,user,channels,free,transmitted"
        assert lines[2] == '0,2,1,[1],[false],[false]'
