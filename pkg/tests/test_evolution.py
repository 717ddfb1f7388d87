import numpy as np
import pytest

from conftest import fourier_mode
from core.evolution import (EvolutionState, contour_plan, evolve_contour, evolve_direct,
                            local_window, sample_density, split_local_nonlocal, synthesize_xy)
from core.errors import TailTooLarge
from core.grid import make_grid

NU = 1e-2
TIMES = [0.0, 0.5, 1.0, 2.0]


def _exact_flat(grid, k, times):
  """Single Fourier mode under b ≡ 0.3: pure viscous decay plus advection."""
  ell2 = (2 * np.pi / grid.period) ** 2
  rate = -NU * (ell2 + k ** 2) - 1j * k * 0.3
  return np.exp(rate * np.asarray(times))[:, None] * fourier_mode(grid)[None, :]


def test_direct_route_on_flat_profile(flat, grid32):
  run = evolve_direct(flat, 1, NU, fourier_mode(grid32), TIMES)
  assert run.route == "direct"
  assert run.omega.shape == (4, 32)
  assert np.allclose(run.omega, _exact_flat(grid32, 1, TIMES), atol=1e-10)
  assert run.helmholtz_residual() < 1e-12


def test_direct_route_keeps_time_order(flat, grid32):
  times = [2.0, 0.0, 1.0]
  run = evolve_direct(flat, 2, NU, fourier_mode(grid32), times)
  assert np.allclose(run.omega, _exact_flat(grid32, 2, times), atol=1e-10)


def test_implicit_matches_expm(kolmogorov, grid32):
  omega0 = np.exp(-((grid32.nodes - 4.0) ** 2)).astype(complex)
  expm = evolve_direct(kolmogorov, 1, NU, omega0, TIMES, method="expm")
  bdf = evolve_direct(kolmogorov, 1, NU, omega0, TIMES, method="implicit")
  assert np.max(np.abs(expm.omega - bdf.omega)) < 1e-6


def test_direct_route_rejects_bad_input(flat, grid32):
  with pytest.raises(ValueError):
    evolve_direct(flat, 1, NU, fourier_mode(grid32), [-1.0, 0.0])
  with pytest.raises(ValueError):
    evolve_direct(flat, 1, NU, fourier_mode(grid32), [0.0], method="euler")


def test_velocities(flat, grid32):
  run = evolve_direct(flat, 1, NU, fourier_mode(grid32), [0.0])
  psi = run.psi[0]
  assert np.allclose(run.ux[0], -grid32.fourier_diff(psi, 1))
  assert np.allclose(run.uy[0], 1j * psi)
  assert run.norms()[0] == pytest.approx(np.sqrt(8.0))


def test_contour_plan(kolmogorov):
  plan = contour_plan(kolmogorov, 1, NU, t_max=2.0, alpha=2.0, margin=40.0)
  assert plan.spacing == pytest.approx(np.pi / 16)
  assert plan.lambda_max >= 41.0
  assert plan.shift == pytest.approx(1.0)
  nodes = plan.nodes(level=1)
  assert nodes[0] == pytest.approx(-plan.lambda_max)
  assert nodes[-1] == pytest.approx(plan.lambda_max)
  assert plan.weights(level=1).sum() == pytest.approx(2 * plan.lambda_max)
  assert np.allclose(plan.nodes(level=0), nodes[::2])


def test_contour_plan_default_shift_and_horizon(kolmogorov):
  plan = contour_plan(kolmogorov, 1, 1e-4, t_max=10.0, horizon=200.0)
  assert plan.alpha == pytest.approx(-0.02 * 1e-2)
  assert plan.spacing == pytest.approx(2 * np.pi / 200.0)
  with pytest.raises(ValueError):
    contour_plan(kolmogorov, 1, 1e-4, t_max=10.0, alpha=-1.0)


def test_contour_route_matches_flat_solution(flat, grid32):
  plan = contour_plan(flat, 1, NU, t_max=2.0, alpha=2.0, margin=40.0)
  run = evolve_contour(flat, 1, NU, fourier_mode(grid32), plan, TIMES, threads=1)
  exact = _exact_flat(grid32, 1, TIMES)
  assert run.route == "contour"
  assert np.allclose(run.omega[0], exact[0])
  error = np.linalg.norm(run.omega - exact, axis=1) / np.linalg.norm(exact, axis=1)
  assert np.max(error) < 1e-3
  assert np.all(run.tail <= plan.tail_tol)


def test_contour_route_rejects_a_large_tail(flat, grid32):
  assert contour_plan(flat, 1, NU, t_max=2.0).tail_tol == 1e-5
  plan = contour_plan(flat, 1, NU, t_max=2.0, alpha=2.0, margin=40.0, tail_tol=1e-12)
  with pytest.raises(TailTooLarge) as info:
    evolve_contour(flat, 1, NU, fourier_mode(grid32), plan, TIMES, threads=1)
  assert info.value.tolerance == 1e-12
  assert info.value.tail > 1e-12


@pytest.mark.slow
def test_routes_agree_on_kolmogorov(kolmogorov):
  grid = make_grid(64, 8.0)
  omega0 = np.exp(-((grid.nodes - 4.0) ** 2) / 0.5).astype(complex)
  times = [0.0, 1.0, 2.0, 4.0]
  direct = evolve_direct(kolmogorov, 1, NU, omega0, times)
  plan = contour_plan(kolmogorov, 1, NU, t_max=4.0, alpha=0.5, margin=40.0)
  contour = evolve_contour(kolmogorov, 1, NU, omega0, plan, times, threads=1)
  error = np.linalg.norm(direct.omega - contour.omega, axis=1) / np.linalg.norm(direct.omega, axis=1)
  assert np.max(error) < 1e-3


def test_local_and_nonlocal_parts_add_up(kolmogorov, grid32):
  omega0 = np.exp(-((grid32.nodes - 4.0) ** 2)).astype(complex)
  plan = contour_plan(kolmogorov, 1, NU, t_max=2.0, alpha=2.0, margin=20.0)
  data = sample_density(kolmogorov, grid32, 1, NU, omega0, plan, threads=1)
  split = split_local_nonlocal(data, kolmogorov, 2.0)
  for name in ("omega", "psi"):
    assert np.allclose(split[f"{name}_loc"] + split[f"{name}_nloc"], split[f"{name}_full"])
  assert np.allclose(grid32.apply_helmholtz(split["psi_full"], 1), split["omega_full"], atol=1e-10)


def test_local_window_grows_away_from_critical_values(kolmogorov, grid32):
  window = local_window(kolmogorov, grid32, 1, NU)
  # node 8 is y = 2, the maximum of b; node 0 is y = 0, where b = 0
  assert window[8] == pytest.approx(0.25 * np.sqrt(NU), abs=1e-9)
  assert window[0] == pytest.approx(0.25 * (1.0 + np.sqrt(NU)))


def test_synthesize_xy(flat, grid32):
  run = evolve_direct(flat, 1, NU, fourier_mode(grid32), [0.0, 1.0])
  x = np.linspace(0, 2 * np.pi, 8, endpoint=False)
  fields = synthesize_xy([run], x)
  assert fields.omega.shape == (2, 8, 32)
  assert np.allclose(fields.omega[:, 0, :], 2 * run.omega.real)
  assert np.allclose(fields.uy[0, 0, :], 2 * np.real(1j * run.psi[0]))


def test_synthesize_xy_rejects_mismatched_modes(flat, grid32):
  a = evolve_direct(flat, 1, NU, fourier_mode(grid32), [0.0, 1.0])
  b = evolve_direct(flat, 2, NU, fourier_mode(grid32), [0.0, 2.0])
  with pytest.raises(ValueError):
    synthesize_xy([a, b], [0.0])
  with pytest.raises(ValueError):
    synthesize_xy([], [0.0])


def test_state_is_rebuilt_from_omega(grid32):
  omega = np.stack([fourier_mode(grid32)] * 2)
  psi = grid32.invert_helmholtz(omega, 1, axis=1)
  state = EvolutionState(k=1, nu=NU, grid=grid32, times=np.array([0.0, 1.0]), omega=omega, psi=psi, route="direct")
  assert state.helmholtz_residual() < 1e-12
