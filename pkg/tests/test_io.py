import csv
import json

import numpy as np
import pytest

from utils.io import (RunWriter, read_block, read_json, read_mode_csv, write_block, write_json,
                      write_mode_csv, write_table_csv)
from utils.utils import make_batch, parallel_map, resolve_threads, sha256_file, to_jsonable


def test_mode_csv(tmp_path):
  y = np.linspace(0.0, 8.0, 4, endpoint=False)
  field = np.array([1.0 + 2.0j, -0.1, 1 / 3, 1e-300j])
  path = write_mode_csv(tmp_path / "mode.csv", y, field)
  with open(path) as f:
    lines = f.read().splitlines()
  assert lines[0] == "y,re,im"
  assert lines[1] == "0,1,2"
  y_back, field_back = read_mode_csv(path)
  assert np.array_equal(y_back, y)
  assert np.array_equal(field_back, field)


def test_mode_csv_shape_mismatch(tmp_path):
  with pytest.raises(ValueError):
    write_mode_csv(tmp_path / "mode.csv", [0.0, 1.0], [1.0])


def test_mode_csv_needs_columns(tmp_path):
  path = tmp_path / "other.csv"
  path.write_text("a,b\n1,2\n")
  with pytest.raises(ValueError):
    read_mode_csv(path)


def test_table_csv(tmp_path):
  rows = [{"lambda": 0.5, "kappa": np.float64(1.25), "pairs": (1, 2), "note": None}]
  path = write_table_csv(tmp_path / "lap.csv", rows)
  with open(path, newline="") as f:
    read = list(csv.DictReader(f))
  assert read[0]["lambda"] == "0.5"
  assert read[0]["kappa"] == "1.25"
  assert json.loads(read[0]["pairs"]) == [1, 2]
  assert read[0]["note"] == ""


def test_block(tmp_path):
  values = np.array([[1 + 1j, 2.5], [-3j, 0.0]])
  path = write_block(tmp_path / "omega.bin", values)
  raw = path.read_bytes()
  assert int.from_bytes(raw[:8], "little") == 8
  assert len(raw) == 8 + 8 * 8
  assert np.array_equal(read_block(path, complex_values=True), values.ravel())
  assert np.array_equal(read_block(write_block(tmp_path / "r.bin", [1.0, 2.0])), [1.0, 2.0])


def test_block_corruption(tmp_path):
  path = write_block(tmp_path / "omega.bin", np.arange(4.0))
  path.write_bytes(path.read_bytes()[:-8])
  with pytest.raises(ValueError):
    read_block(path)
  odd = write_block(tmp_path / "odd.bin", np.arange(3.0))
  with pytest.raises(ValueError):
    read_block(odd, complex_values=True)
  (tmp_path / "empty.bin").write_bytes(b"\x01")
  with pytest.raises(ValueError):
    read_block(tmp_path / "empty.bin")


def test_json(tmp_path):
  obj = {"nu": np.float64(1e-3), "k": np.int64(1), "c": 1 + 2j, "grid": np.arange(2), "nan": float("nan")}
  data = read_json(write_json(tmp_path / "x.json", obj))
  assert data["nu"] == 1e-3
  assert data["k"] == 1
  assert data["c"] == {"re": 1.0, "im": 2.0}
  assert data["grid"] == [0, 1]
  assert np.isnan(data["nan"])


def test_run_writer_records(tmp_path):
  writer = RunWriter(tmp_path / "run")
  first = writer.mode_csv("evolution/initial.csv", [0.0, 1.0], [1.0, 2.0])
  second = writer.json("manifest.json", {"status": "complete"})
  assert first["path"] == "evolution/initial.csv"
  assert first["kind"] == "mode_csv"
  assert second["sha256"] == sha256_file(tmp_path / "run" / "manifest.json")
  assert writer.records == [first, second]
  (tmp_path / "run" / "report.pdf").write_bytes(b"%PDF")
  assert writer.file("report.pdf", "pdf")["kind"] == "pdf"
  assert len(writer.records) == 3


def test_make_batch():
  assert make_batch([1, 2, 3, 4, 5], size=2) == [[1, 2], [3, 4], [5]]
  assert make_batch([], size=2) == []
  with pytest.raises(ValueError):
    make_batch([1], size=0)


def test_resolve_threads(monkeypatch):
  assert resolve_threads(3) == 3
  monkeypatch.setenv("OSCAR_THREADS", "5")
  assert resolve_threads(None) == 5
  monkeypatch.setenv("OSCAR_THREADS", "many")
  assert resolve_threads(None) >= 1


@pytest.mark.parametrize("threads", [1, 4])
def test_parallel_map_keeps_order(threads):
  assert parallel_map(lambda x: x * x, range(10), threads=threads) == [x * x for x in range(10)]


def test_to_jsonable():
  assert to_jsonable({1: (np.bool_(True), np.float32(0.5))}) == {"1": [True, 0.5]}
