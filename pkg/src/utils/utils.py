import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from itertools import islice
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence, TypeVar

from tqdm import tqdm

from constant import THREADS_ENV

T = TypeVar("T")
R = TypeVar("R")


################################# Filesystem ##################################


def ensure_path(path_str: str) -> Path:
  """
  Create the directory, or the parent directory when the path names a file.
  """
  path = Path(path_str)
  if str(path_str).endswith('/') or not path.suffix:
    path.mkdir(parents=True, exist_ok=True)
  else:
    path.parent.mkdir(parents=True, exist_ok=True)
  return path


def sha256_file(path: Path, chunk: int = 1 << 20) -> str:
  digest = hashlib.sha256()
  with open(path, "rb") as f:
    while block := f.read(chunk):
      digest.update(block)
  return digest.hexdigest()


################################### Batching ##################################


def make_batch(obj: Sequence[T], size: int = 100) -> list[list[T]]:
  """
  Split a sequence into consecutive batches of a given size.

  Args:
    obj: Sequence to batch
    size: Maximum size of each batch (default: 100)

  Returns:
    List of batches, in input order

  Raises:
    ValueError: If size is less than 1
  """
  if size < 1:
    raise ValueError("Batch size must be at least 1")

  if obj is None or len(obj) == 0:
    return []

  obj_iter = iter(obj)
  batches = []
  while True:
    batch = list(islice(obj_iter, size))
    if not batch:
      break
    batches.append(batch)

  return batches


################################# Concurrency #################################


def resolve_threads(threads: Optional[int] = None) -> int:
  """Thread count from the explicit value, else OSCAR_THREADS, else the CPU count."""
  if threads is not None and threads > 0:
    return int(threads)
  env = os.environ.get(THREADS_ENV)
  if env:
    try:
      value = int(env)
      if value > 0:
        return value
    except ValueError:
      pass
  return os.cpu_count() or 1


def parallel_map(func: Callable[[T], R],
         items: Iterable[T],
         threads: Optional[int] = None,
         desc: Optional[str] = None,
         progress: bool = False) -> list[R]:
  """
  Apply `func` to every item on a thread pool and return results in input order.
  """
  items = list(items)
  workers = min(resolve_threads(threads), max(len(items), 1))
  if workers == 1:
    return [func(item) for item in tqdm(items, desc=desc, disable=not progress)]
  with ThreadPoolExecutor(max_workers=workers) as pool:
    results = pool.map(func, items)
    return list(tqdm(results, total=len(items), desc=desc, disable=not progress))


def to_jsonable(obj: Any) -> Any:
  """Convert numpy scalars/arrays and tuples into plain JSON types."""
  import numpy as np

  if isinstance(obj, dict):
    return {str(k): to_jsonable(v) for k, v in obj.items()}
  if isinstance(obj, (list, tuple)):
    return [to_jsonable(v) for v in obj]
  if isinstance(obj, np.ndarray):
    return to_jsonable(obj.tolist())
  if isinstance(obj, (np.floating,)):
    return float(obj)
  if isinstance(obj, (np.integer,)):
    return int(obj)
  if isinstance(obj, (np.bool_,)):
    return bool(obj)
  if isinstance(obj, complex):
    return {"re": obj.real, "im": obj.imag}
  if isinstance(obj, Path):
    return str(obj)
  return obj
