import json
import math

import numpy as np
import pytest

from sgbeam.io import OUTPUT_DIR_ENV, output_directory, read_csv, read_csv_array, schema_tag, write_csv, write_json


def test_csv_round_trip(tmp_path):
    rows = [(0.1, 2, "a"), (np.float64(1 / 3), np.int64(4), "b")]
    p = write_csv(tmp_path / "sub" / "x.csv", "trajectory", ["t", "n", "label"], rows)
    tag, cols, data = read_csv(p)
    assert tag == schema_tag("trajectory") == "sgbeam:trajectory v1"
    assert cols == ["t", "n", "label"]
    assert float(data[1][0]) == 1 / 3  # floats are written with repr
    assert data[1][1] == "4"


def test_csv_array(tmp_path):
    a = np.random.default_rng(0).normal(size=(5, 3))
    p = write_csv(tmp_path / "a.csv", "grid", ["a", "b", "c"], a)
    _, cols, b = read_csv_array(p)
    assert np.array_equal(a, b)


def test_csv_without_schema_rejected(tmp_path):
    p = tmp_path / "plain.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="schema"):
        read_csv(p)


def test_json_tag_and_nonfinite(tmp_path):
    p = write_json(tmp_path / "s.json", "summary", {"x": np.float64(1.5), "bad": math.nan, "v": np.arange(3),
                                                     "flag": np.bool_(True)})
    doc = json.loads(p.read_text())
    assert doc == {"schema": "sgbeam:summary v1", "x": 1.5, "bad": None, "v": [0, 1, 2], "flag": True}


def test_output_directory_precedence(monkeypatch, tmp_path):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    assert output_directory(None, None) == output_directory(None, "") == type(tmp_path)(".")
    assert str(output_directory(None, "cfgdir")) == "cfgdir"
    monkeypatch.setenv(OUTPUT_DIR_ENV, "envdir")
    assert str(output_directory(None, "cfgdir")) == "envdir"
    assert str(output_directory("flagdir", "cfgdir")) == "flagdir"
