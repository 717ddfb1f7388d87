from pathlib import Path

import pytest

from core.configuration import STAGES, Configuration, load_config, parse_config
from core.errors import ConfigInvalid

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL = """
[profile]
family = "kolmogorov"
period = 8.0

[grid]
n = 64

[sweep]
k = [1, 2]
nu = [1e-3]
times = { start = 0.0, stop = 1.0, step = 0.25 }
"""


def test_parse_minimal():
  configuration = parse_config(MINIMAL)
  assert configuration.profile == {"family": "kolmogorov", "period": 8.0}
  assert configuration.n == 64
  assert configuration.ks == [1, 2]
  assert configuration.nus == [1e-3]
  assert configuration.routes == ["direct"]
  assert configuration.stages == list(STAGES)
  assert configuration.sweep == [(1, 1e-3), (2, 1e-3)]
  assert configuration.time_grid == [0.0, 0.25, 0.5, 0.75, 1.0]


def test_integer_period_is_converted():
  configuration = parse_config("[profile]\nperiod = 10\n")
  assert configuration.profile["period"] == 10.0
  assert isinstance(configuration.profile["period"], float)


@pytest.mark.parametrize("text,field,line", [
  ("[profile]\nfamily = \"kolmogorov\"\n", "profile.period", 1),
  ("[grid]\nn = 64\n", "profile", None),
  ("[profile]\nperiod = 8.0\n\n[plots]\nwidth = 3\n", "plots", 4),
  ("[profile]\nperiod = 8.0\n\n[grid]\nm = 64\n", "grid.m", 5),
  ("[profile]\nperiod = 8.0\n\n[grid]\nn = 63\n", "grid.n", 5),
  ("[profile]\nperiod = 8.0\n\n[grid]\nn = \"many\"\n", "grid.n", 5),
  ("[profile]\nperiod = 8.0\n[routes]\nevolution = [\"direct\", \"euler\"]\n", "routes.evolution", 4),
  ("[profile]\nperiod = 8.0\n[run]\nstages = [\"plots\"]\n", "run.stages", 4),
  ("[profile]\nperiod = 8.0\n[norms]\nkind = \"L2\"\n", "norms.kind", 4),
  ("[profile]\nperiod = 8.0\n[sweep]\ntimes = { start = 0.0, stop = 1.0 }\n", "sweep.times", 4),
  ("[profile]\nperiod = 8.0\n[windows]\nfit = [1.0]\n", "windows.fit", 4),
  ("[profile]\nfamily = \"table\"\nperiod = 8.0\n", "profile.path", 1),
])
def test_invalid_config_names_the_field(text, field, line):
  with pytest.raises(ConfigInvalid) as info:
    parse_config(text)
  assert info.value.field == field
  assert info.value.line == line


def test_syntax_error_carries_the_line():
  with pytest.raises(ConfigInvalid) as info:
    parse_config("[profile]\nperiod = 8.0\nfamily = \n")
  assert info.value.line == 3
  assert "line 3" in str(info.value)


def test_load_defaults():
  configuration = load_config(None)
  assert configuration == Configuration()
  assert configuration.profile["family"] == "kolmogorov"
  assert configuration.seed == 0


def test_load_missing_file(tmp_path):
  with pytest.raises(ConfigInvalid):
    load_config(tmp_path / "absent.cfg")


def test_load_bench_config():
  configuration = load_config(CONFIGS / "bench_kolmogorov.cfg")
  assert configuration.n == 512
  assert configuration.nus == [1e-3, 3e-4, 1e-4, 3e-5]
  assert configuration.routes == ["direct", "contour"]
  assert configuration.initial == {"kind": "bump", "center": 4.0, "width": 1.5}
  assert configuration.contour_alpha == 0.1
  assert configuration.tail_tol == 1e-5
  assert configuration.fit_window == [5.0, 50.0]
  assert configuration.report
  assert len(configuration.time_grid) == 201


def test_from_runnable_config_ignores_unknown_keys():
  configuration = Configuration.from_runnable_config({"configurable": {"n": 128, "thread_id": "x"}})
  assert configuration.n == 128
  assert Configuration.from_runnable_config(None) == Configuration()


def test_asdict_round_trips():
  configuration = parse_config(MINIMAL)
  assert Configuration(**configuration.asdict()) == configuration
