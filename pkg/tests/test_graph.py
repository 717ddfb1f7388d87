import numpy as np
import pytest

from core.configuration import Configuration
from core.errors import ConfigInvalid
from core.graphs.experiment_graph import initial_condition, run_experiment
from core.grid import make_grid
from core.profile import build_profile
from utils.io import read_block, read_json, write_mode_csv
from utils.utils import sha256_file

from conftest import KOLMOGOROV


def _small(tmp_path, **overrides) -> Configuration:
  values = dict(
    profile=dict(KOLMOGOROV), n=32, ks=[1], nus=[1e-2], lambdas=[],
    times={"start": 0.0, "stop": 2.0, "step": 0.5},
    initial={"kind": "bump", "center": 4.0, "width": 3.0},
    routes=["direct"], stages=["geometry", "evolution", "fits"],
    fit_window=[0.5, 2.0], output_dir=str(tmp_path / "run"),
  )
  values.update(overrides)
  return Configuration(**values)


def test_empty_sweep_writes_only_the_manifest(tmp_path):
  manifest = run_experiment(_small(tmp_path, ks=[]))
  assert manifest.status == "complete"
  assert manifest.artifacts == []
  stored = read_json(tmp_path / "run" / "manifest.json")
  assert stored["status"] == "complete"
  assert stored["profile_hash"] == manifest.profile_hash


def test_small_run(tmp_path):
  manifest = run_experiment(_small(tmp_path))
  run_dir = tmp_path / "run"
  paths = [record["path"] for record in manifest.artifacts]
  for expected in ("geometry/profile.csv", "evolution/initial.csv", "evolution/k1_nu0.01_direct_omega.bin",
                   "evolution/k1_nu0.01_direct.json", "evolution/k1_nu0.01_direct_series.csv",
                   "evolution/nu0.01_direct_xy_final.bin", "fits/rates.csv"):
    assert expected in paths
  assert "manifest.json" not in paths
  for record in manifest.artifacts:
    assert record["sha256"] == sha256_file(run_dir / record["path"])

  meta = read_json(run_dir / "evolution/k1_nu0.01_direct.json")
  assert meta["shape"] == [5, 32]
  assert meta["helmholtz_residual"] < 1e-10
  omega = read_block(run_dir / "evolution/k1_nu0.01_direct_omega.bin", complex_values=True)
  assert omega.reshape(meta["shape"]).shape == (5, 32)

  assert manifest.grid == {"n": 32, "period": 8.0, "h": 0.25}
  assert manifest.constants["critical_points"] == pytest.approx([2.0, 6.0])
  assert manifest.config["tail_tol"] == 1e-5
  assert read_json(run_dir / "manifest.json")["artifacts"] == manifest.artifacts


def test_runs_are_reproducible(tmp_path):
  first = run_experiment(_small(tmp_path, output_dir=str(tmp_path / "a")))
  second = run_experiment(_small(tmp_path, output_dir=str(tmp_path / "b")))
  assert [r["sha256"] for r in first.artifacts] == [r["sha256"] for r in second.artifacts]


def test_failure_writes_a_partial_manifest(tmp_path):
  with pytest.raises(ConfigInvalid) as info:
    run_experiment(_small(tmp_path, initial={"kind": "bogus"}))
  assert info.value.field == "initial.kind"
  stored = read_json(tmp_path / "run" / "manifest.json")
  assert stored["status"] == "partial"
  assert stored["error"].startswith("ConfigInvalid")
  assert [record["path"] for record in stored["artifacts"]] == ["geometry/profile.csv"]


def test_initial_condition_from_file(tmp_path):
  profile = build_profile(KOLMOGOROV)
  grid = make_grid(32, 8.0)
  values = np.exp(1j * grid.nodes)
  path = write_mode_csv(tmp_path / "ic.csv", grid.nodes, values)
  configuration = Configuration(initial={"kind": "file", "path": str(path)})
  assert np.array_equal(initial_condition(configuration, profile, grid), values)
  with pytest.raises(ConfigInvalid):
    initial_condition(configuration, profile, make_grid(64, 8.0))
  with pytest.raises(ConfigInvalid):
    initial_condition(Configuration(initial={"kind": "bump", "width": 0.0}), profile, grid)


def test_bump_is_centred(kolmogorov, grid32):
  configuration = Configuration(initial={"kind": "bump", "center": 4.0, "width": 1.0})
  omega0 = initial_condition(configuration, kolmogorov, grid32)
  # 1 on |y − 4| <= 1/2, 0 beyond |y − 4| >= 1
  assert np.all(omega0[14:19] == 1.0)
  assert np.all(omega0[:13] == 0.0)
  assert np.allclose(omega0[1:], omega0[1:][::-1])
