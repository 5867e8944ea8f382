import json

import numpy as np

from engine.exporter import ResultExporter, format_value, sidecar_path


def test_format_value():
    assert format_value(0.1) == "0.1"
    assert format_value(1e-300) == "1e-300"
    assert format_value(True) == "true"
    assert format_value(None) == ""
    assert format_value(np.float64(1.5)) == "1.5"
    assert format_value(np.int64(3)) == "3"
    assert float(format_value(2.0 / 3.0)) == 2.0 / 3.0


def test_csv_has_header_and_columns(tmp_path):
    path = ResultExporter.write_csv(tmp_path / "out.csv", [{"a": 1, "b": 0.25}, {"a": 2}], ["a", "b"],
                                    "abc123", 7)
    lines = path.read_text().splitlines()
    assert lines[0] == ResultExporter.header("abc123", 7)
    assert lines[0].startswith("# cavity-recovery ")
    assert lines[1:] == ["a,b", "1,0.25", "2,"]
    assert [p.name for p in tmp_path.iterdir()] == ["out.csv"]


def test_json_replaces_non_finite(tmp_path):
    path = ResultExporter.write_json(tmp_path / "sub" / "out.json", {"rows": [float("nan"), 1.0]}, "h", 0)
    document = json.loads(path.read_text())
    assert document["rows"] == [None, 1.0]
    assert document["meta"]["config_hash"] == "h"


def test_rewrite_replaces_file(tmp_path):
    target = tmp_path / "out.csv"
    ResultExporter.write_text(target, "first\n")
    ResultExporter.write_text(target, "second\n")
    assert target.read_text() == "second\n"


def test_sidecar_path(tmp_path):
    assert sidecar_path(tmp_path / "run.csv", "staircases") == tmp_path / "run.staircases.csv"
    assert sidecar_path(tmp_path / "run.csv", "failures", ".json") == tmp_path / "run.failures.json"
