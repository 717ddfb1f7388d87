from dataclasses import dataclass, field
from typing import Annotated, Any, Optional, Sequence, Union

from core.diagnostics import RunManifest
from core.evolution import EvolutionState
from core.grid import Grid
from core.profile import ShearProfile


######################################## Reducers ########################################
# These methods allow to modify the value of the state they are associated with
# (e.g. artifacts: Annotated[list[dict], add_artifacts]), without overwriting the value.
#
# With reducer:
#   return {"artifacts": record}
# Without reducer:
#   return {"artifacts": state.artifacts + [record]}


def add_artifacts(
  existing: Sequence[dict[str, Any]],
  new: Union[Sequence[dict[str, Any]], dict[str, Any]]
) -> list[dict[str, Any]]:
  """Append artifact records, keeping the order in which they were written."""
  existing_list = list(existing) if existing else []

  if isinstance(new, dict):
    return existing_list + [new]
  elif isinstance(new, list):
    return existing_list + new
  return existing_list


def merge_dicts(existing: Optional[dict[str, Any]], new: Optional[dict[str, Any]]) -> dict[str, Any]:
  merged = dict(existing or {})
  merged.update(new or {})
  return merged


######################################## Input State ########################################


@dataclass(kw_only=True)
class InputExperimentState:
  """Where the run writes its artifacts."""

  run_dir: str


######################################## Experiment State ########################################


@dataclass(kw_only=True)
class ExperimentState(InputExperimentState):
  """The state carried through geometry → kernels → lap → evolution → fits → manifest."""

  profile: Optional[ShearProfile] = None

  grid: Optional[Grid] = None

  constants: Annotated[dict[str, Any], merge_dicts] = field(default_factory=dict)
  """Calibrated and derived constants recorded in the manifest."""

  evolutions: dict[str, EvolutionState] = field(default_factory=dict)
  """Evolution results keyed by `k<k>_nu<nu>_<route>`."""

  artifacts: Annotated[list[dict[str, Any]], add_artifacts] = field(default_factory=list)
  """Records {path, sha256, kind} of every file written, in order."""

  manifest: Optional[RunManifest] = None
