"""Run configuration.

A run file is TOML (`.cfg`); its tables map onto the flat `Configuration`
dataclass below, which doubles as the LangGraph `config_schema` of the
experiment graph.

Example:

  [profile]
  family = "kolmogorov"
  period = 8.0

  [grid]
  n = 256

  [sweep]
  k = [1]
  nu = [1e-3]
"""
from __future__ import annotations

import re
import tomllib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Optional, Type, TypeVar, Union

from langchain_core.runnables import RunnableConfig, ensure_config

from constant import (C_DAGGER, C_SPLIT, DEFAULT_N, GAMMA, KAPPA_MIN, LAMBDA_MARGIN,
                      M_VISC, OUTPUT_DIR, SIGMA0, SIGMA_SHARP, SUBTRACTION_ORDER,
                      T_MIN, TAIL_TOL)
from core.errors import ConfigInvalid
from utils.logging import get_logger

logger = get_logger(__name__)


STAGES = ("geometry", "kernels", "lap", "evolution", "fits")


@dataclass(kw_only=True)
class Configuration:
  """Everything a run needs: profile, grid, sweeps, routes, norms, windows and output."""

  # Profile and grid
  profile: dict[str, Any] = field(
    default_factory=lambda: {"family": "kolmogorov", "period": 8.0},
  )

  n: int = field(
    default=DEFAULT_N,
  )

  # Sweeps
  ks: list[int] = field(default_factory=lambda: [1])

  nus: list[float] = field(default_factory=lambda: [1e-3])

  lambdas: list[float] = field(default_factory=list)
  """Spectral points for the kernel and LAP stages."""

  alpha: float = field(
    default=0.0,
  )

  lap_grid: bool = field(
    default=False,
  )
  """Scan the full coarse + refined λ grid instead of `lambdas`."""

  embedded_lambdas: list[float] = field(default_factory=list)

  times: dict[str, float] = field(
    default_factory=lambda: {"start": 0.0, "stop": 20.0, "step": 0.25},
  )

  initial: dict[str, Any] = field(
    default_factory=lambda: {"kind": "bump", "center": 0.0, "width": 0.5},
  )

  # Routes and stages
  routes: list[str] = field(default_factory=lambda: ["direct"])

  stages: list[str] = field(default_factory=lambda: list(STAGES))

  # Norms
  gamma: float = field(
    default=GAMMA,
  )

  norm: str = field(
    default="X",
  )

  # Windows
  fit_window: list[float] = field(default_factory=lambda: [T_MIN, 50.0])

  depletion_offset: float = field(
    default=0.0,
  )

  # Structural constants
  c_dagger: float = field(default=C_DAGGER)
  calibrate: bool = field(default=False)
  sigma_sharp: float = field(default=SIGMA_SHARP)
  sigma0: float = field(default=SIGMA0)
  m_visc: float = field(default=M_VISC)
  kappa_min: float = field(default=KAPPA_MIN)
  c_split: float = field(default=C_SPLIT)

  # Contour plan
  contour_alpha: Optional[float] = field(default=None)
  contour_margin: float = field(default=LAMBDA_MARGIN)
  contour_horizon: Optional[float] = field(default=None)
  contour_order: int = field(default=SUBTRACTION_ORDER)
  tail_tol: float = field(default=TAIL_TOL)

  # Run
  output_dir: str = field(
    default=OUTPUT_DIR,
  )

  threads: Optional[int] = field(default=None)

  seed: Optional[int] = field(default=0)
  """Bootstrap seed; None draws fresh entropy and breaks checksum reproducibility."""

  report: bool = field(default=False)

  def asdict(self) -> dict[str, Any]:
    """Convert the instance to a dictionary."""
    return {f.name: getattr(self, f.name) for f in fields(self)}

  @classmethod
  def from_runnable_config(
    cls: Type[T], config: Optional[RunnableConfig] = None
  ) -> T:
    """Create a Configuration from the `configurable` entries of a RunnableConfig."""
    config = ensure_config(config)
    configurable = config.get("configurable") or {}
    _fields = {f.name for f in fields(cls) if f.init}
    return cls(**{k: v for k, v in configurable.items() if k in _fields})

  @property
  def time_grid(self) -> list[float]:
    start, stop, step = (float(self.times[key]) for key in ("start", "stop", "step"))
    count = int(round((stop - start) / step))
    return [start + i * step for i in range(count + 1)]

  @property
  def sweep(self) -> list[tuple[int, float]]:
    return [(int(k), float(nu)) for k in self.ks for nu in self.nus]


T = TypeVar("T", bound=Configuration)


######################################## Run files ########################################


def _number_list(value: Any) -> list[float]:
  if not isinstance(value, list):
    raise TypeError("expected a list")
  return [float(v) for v in value]


def _int_list(value: Any) -> list[int]:
  if not isinstance(value, list):
    raise TypeError("expected a list")
  return [int(v) for v in value]


def _str_list(value: Any) -> list[str]:
  if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
    raise TypeError("expected a list of strings")
  return list(value)


def _table(value: Any) -> dict[str, Any]:
  if not isinstance(value, dict):
    raise TypeError("expected a table")
  return dict(value)


def _optional(convert: Callable[[Any], Any]) -> Callable[[Any], Any]:
  return lambda value: None if value is None else convert(value)


def _flag(value: Any) -> bool:
  if not isinstance(value, bool):
    raise TypeError("expected true or false")
  return value


# table -> key -> (Configuration field, converter)
_SCHEMA: dict[str, dict[str, tuple[str, Callable[[Any], Any]]]] = {
  "run": {
    "output_dir": ("output_dir", str),
    "threads": ("threads", _optional(int)),
    "seed": ("seed", _optional(int)),
    "stages": ("stages", _str_list),
    "report": ("report", _flag),
  },
  "grid": {"n": ("n", int)},
  "sweep": {
    "k": ("ks", _int_list),
    "nu": ("nus", _number_list),
    "lambda": ("lambdas", _number_list),
    "alpha": ("alpha", float),
    "lap_grid": ("lap_grid", _flag),
    "embedded_lambda": ("embedded_lambdas", _number_list),
    "times": ("times", _table),
  },
  "initial": {},
  "routes": {"evolution": ("routes", _str_list)},
  "norms": {"gamma": ("gamma", float), "kind": ("norm", str)},
  "windows": {"fit": ("fit_window", _number_list), "depletion_offset": ("depletion_offset", float)},
  "constants": {
    "c_dagger": ("c_dagger", float),
    "calibrate": ("calibrate", _flag),
    "sigma_sharp": ("sigma_sharp", float),
    "sigma0": ("sigma0", float),
    "m_visc": ("m_visc", float),
    "kappa_min": ("kappa_min", float),
    "c_split": ("c_split", float),
  },
  "contour": {
    "alpha": ("contour_alpha", _optional(float)),
    "margin": ("contour_margin", float),
    "horizon": ("contour_horizon", _optional(float)),
    "order": ("contour_order", int),
    "tail_tol": ("tail_tol", float),
  },
  "profile": {},
}


def _line_of(text: str, table: str, key: Optional[str] = None) -> Optional[int]:
  """1-based line of `key` inside `[table]` (or of the table header)."""
  current = None
  for number, line in enumerate(text.splitlines(), 1):
    stripped = line.strip()
    header = re.match(r"^\[([^\[\]]+)\]", stripped)
    if header:
      current = header.group(1).strip()
      if key is None and current == table:
        return number
      continue
    if key is not None and current == table and re.match(rf"^{re.escape(key)}\s*=", stripped):
      return number
  return None


def parse_config(text: str) -> Configuration:
  """Build a Configuration from TOML text.

  Raises:
    ConfigInvalid: syntax errors (with line), unknown tables or keys,
      wrong types and missing required keys (with the dotted field name).
  """
  try:
    data = tomllib.loads(text)
  except tomllib.TOMLDecodeError as e:
    match = re.search(r"line (\d+)", str(e))
    raise ConfigInvalid(f"syntax error: {e}", line=int(match.group(1)) if match else None) from e

  values: dict[str, Any] = {}
  for table, content in data.items():
    if table not in _SCHEMA:
      raise ConfigInvalid(f"unknown table [{table}]", field=table, line=_line_of(text, table))
    if not isinstance(content, dict):
      raise ConfigInvalid("expected a table", field=table)
    if table == "profile":
      values["profile"] = dict(content)
      continue
    if table == "initial":
      values["initial"] = dict(content)
      continue
    for key, value in content.items():
      dotted = f"{table}.{key}"
      if key not in _SCHEMA[table]:
        raise ConfigInvalid("unknown key", field=dotted, line=_line_of(text, table, key))
      name, convert = _SCHEMA[table][key]
      try:
        values[name] = convert(value)
      except (TypeError, ValueError) as e:
        raise ConfigInvalid(f"invalid value {value!r}: {e}", field=dotted, line=_line_of(text, table, key)) from e

  profile = values.get("profile")
  if profile is None:
    raise ConfigInvalid("missing required table", field="profile")
  if "period" not in profile:
    raise ConfigInvalid("missing required key", field="profile.period", line=_line_of(text, "profile"))
  try:
    profile["period"] = float(profile["period"])
  except (TypeError, ValueError) as e:
    raise ConfigInvalid(f"invalid value {profile['period']!r}", field="profile.period",
                        line=_line_of(text, "profile", "period")) from e
  if str(profile.get("family", "kolmogorov")) == "table" and "path" not in profile:
    raise ConfigInvalid("table profiles need a path", field="profile.path", line=_line_of(text, "profile"))

  configuration = Configuration(**values)
  _validate(configuration, text)
  return configuration


def _validate(configuration: Configuration, text: str) -> None:
  unknown = set(configuration.stages) - set(STAGES)
  if unknown:
    raise ConfigInvalid(f"unknown stage(s) {sorted(unknown)}", field="run.stages", line=_line_of(text, "run", "stages"))
  routes = set(configuration.routes) - {"direct", "contour"}
  if routes:
    raise ConfigInvalid(f"unknown route(s) {sorted(routes)}", field="routes.evolution",
                        line=_line_of(text, "routes", "evolution"))
  if configuration.norm not in ("X", "H1k"):
    raise ConfigInvalid(f"unknown norm '{configuration.norm}'", field="norms.kind", line=_line_of(text, "norms", "kind"))
  if not {"start", "stop", "step"} <= set(configuration.times):
    raise ConfigInvalid("times need start, stop and step", field="sweep.times", line=_line_of(text, "sweep", "times"))
  if float(configuration.times["step"]) <= 0:
    raise ConfigInvalid("time step must be positive", field="sweep.times", line=_line_of(text, "sweep", "times"))
  if len(configuration.fit_window) != 2:
    raise ConfigInvalid("fit window needs [start, stop]", field="windows.fit", line=_line_of(text, "windows", "fit"))
  if configuration.n < 8 or configuration.n % 2:
    raise ConfigInvalid(f"grid size must be even and >= 8, got {configuration.n}", field="grid.n",
                        line=_line_of(text, "grid", "n"))


def load_config(path: Union[str, Path, None] = None, cls: Type[T] = Configuration) -> T:
  """Read a run file; without a path the defaults are returned."""
  if path is None:
    return cls()
  path = Path(path)
  try:
    text = path.read_text(encoding="utf-8")
  except OSError as e:
    raise ConfigInvalid(f"cannot read {path}: {e}") from e
  configuration = parse_config(text)
  logger.info(f"Loaded configuration from {path}")
  return configuration
