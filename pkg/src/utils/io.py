"""Run artifacts: mode CSVs, binary field blocks, JSON, and the per-run writer."""
from utils.logging import get_logger
logger = get_logger(__name__)

import csv
import json
import struct
import threading
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from utils.utils import ensure_path, sha256_file, to_jsonable

PathLike = Union[str, Path]

_HEADER = struct.Struct("<Q")


################################# Mode CSV ##################################


def write_mode_csv(path: PathLike, y: ArrayLike, field: ArrayLike) -> Path:
  """Write one complex mode as `y,re,im` rows with 17 significant digits."""
  path = ensure_path(str(path))
  y = np.asarray(y, dtype=float)
  field = np.asarray(field, dtype=complex)
  if y.shape != field.shape:
    raise ValueError(f"y has shape {y.shape} but the field has shape {field.shape}")
  with open(path, "w", newline="", encoding="utf-8") as f:
    writer = csv.writer(f, lineterminator="\n")
    writer.writerow(["y", "re", "im"])
    for yi, value in zip(y, field):
      writer.writerow([f"{yi:.17g}", f"{value.real:.17g}", f"{value.imag:.17g}"])
  return path


def read_mode_csv(path: PathLike) -> tuple[NDArray[np.float64], NDArray[np.complex128]]:
  with open(path, newline="", encoding="utf-8") as f:
    reader = csv.DictReader(f)
    if reader.fieldnames is None or not {"y", "re", "im"} <= set(reader.fieldnames):
      raise ValueError(f"{path}: expected columns y,re,im")
    rows = [(float(r["y"]), float(r["re"]), float(r["im"])) for r in reader]
  data = np.array(rows, dtype=float).reshape(-1, 3)
  return data[:, 0], data[:, 1] + 1j * data[:, 2]


def write_table_csv(path: PathLike, rows: Sequence[Mapping[str, Any]], columns: Optional[Sequence[str]] = None) -> Path:
  """Plot-ready table; floats at full precision, nested values as JSON."""
  path = ensure_path(str(path))
  if columns is None:
    columns = list(rows[0].keys()) if rows else []

  def cell(value: Any) -> str:
    value = to_jsonable(value)
    if isinstance(value, float):
      return f"{value:.17g}"
    if isinstance(value, (dict, list)):
      return json.dumps(value, allow_nan=True)
    return "" if value is None else str(value)

  with open(path, "w", newline="", encoding="utf-8") as f:
    writer = csv.writer(f, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
      writer.writerow([cell(row.get(c)) for c in columns])
  return path


################################# Binary blocks ##################################


def write_block(path: PathLike, values: ArrayLike) -> Path:
  """Length-prefixed little-endian float64 block; complex data is stored as interleaved re/im.

  The prefix counts float64 words, so a complex array of n entries has prefix 2n.
  Shape is not stored; callers keep it in the JSON sidecar.
  """
  path = ensure_path(str(path))
  array = np.asarray(values)
  if np.iscomplexobj(array):
    payload = np.ascontiguousarray(array, dtype="<c16").view("<f8").ravel()
  else:
    payload = np.ascontiguousarray(array, dtype="<f8").ravel()
  with open(path, "wb") as f:
    f.write(_HEADER.pack(payload.size))
    f.write(payload.tobytes())
  return path


def read_block(path: PathLike, complex_values: bool = False) -> NDArray:
  with open(path, "rb") as f:
    raw = f.read()
  if len(raw) < _HEADER.size:
    raise ValueError(f"{path}: truncated header")
  (count,) = _HEADER.unpack_from(raw)
  payload = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
  if payload.size != count:
    raise ValueError(f"{path}: header announces {count} values, found {payload.size}")
  if complex_values:
    if count % 2:
      raise ValueError(f"{path}: odd word count {count} for complex data")
    return payload.view("<c16").astype(np.complex128)
  return payload.astype(np.float64)


################################# JSON ##################################


def write_json(path: PathLike, obj: Any) -> Path:
  """UTF-8 JSON; floats keep their shortest round-trip repr, which preserves all 17 digits."""
  path = ensure_path(str(path))
  with open(path, "w", encoding="utf-8", newline="\n") as f:
    json.dump(to_jsonable(obj), f, indent=2, ensure_ascii=False, allow_nan=True)
    f.write("\n")
  return path


def read_json(path: PathLike) -> Any:
  with open(path, encoding="utf-8") as f:
    return json.load(f)


################################# Run writer ##################################


class RunWriter:
  """The single writer of a run directory.

  Every write goes through one lock and is recorded as {path, sha256, kind},
  with `path` relative to the run directory, in write order.
  """

  def __init__(self, run_dir: PathLike):
    self.run_dir = ensure_path(str(run_dir).rstrip("/") + "/")
    self._lock = threading.Lock()
    self._records: list[dict[str, str]] = []

  @property
  def records(self) -> list[dict[str, str]]:
    with self._lock:
      return list(self._records)

  def _record(self, path: Path, kind: str) -> dict[str, str]:
    record = {
      "path": path.relative_to(self.run_dir).as_posix(),
      "sha256": sha256_file(path),
      "kind": kind,
    }
    self._records.append(record)
    logger.info(f"Wrote {kind} artifact {record['path']}")
    return record

  def _target(self, name: str) -> Path:
    return self.run_dir / name

  def mode_csv(self, name: str, y: ArrayLike, field: ArrayLike) -> dict[str, str]:
    with self._lock:
      return self._record(write_mode_csv(self._target(name), y, field), "mode_csv")

  def table(self, name: str, rows: Sequence[Mapping[str, Any]], columns: Optional[Sequence[str]] = None) -> dict[str, str]:
    with self._lock:
      return self._record(write_table_csv(self._target(name), rows, columns), "table_csv")

  def block(self, name: str, values: ArrayLike) -> dict[str, str]:
    with self._lock:
      return self._record(write_block(self._target(name), values), "block")

  def json(self, name: str, obj: Any) -> dict[str, str]:
    with self._lock:
      return self._record(write_json(self._target(name), obj), "json")

  def file(self, name: str, kind: str) -> dict[str, str]:
    """Record a file written by someone else (e.g. the PDF renderer) under the lock."""
    with self._lock:
      return self._record(self._target(name), kind)
