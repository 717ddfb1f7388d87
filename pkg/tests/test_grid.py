import numpy as np
import pytest

from conftest import fourier_mode
from core.errors import NearSingular, ZeroMode
from core.grid import (Grid, PeriodicOperator, make_grid, periodic_distance, periodic_offset,
                       solve_periodic)

ELL2 = (np.pi / 4) ** 2


@pytest.mark.parametrize("n", [5, 2, 0])
def test_grid_rejects_odd_or_tiny_sizes(n):
  with pytest.raises(ValueError):
    Grid(n=n, period=8.0)


def test_make_grid_is_shared():
  assert make_grid(64, 8.0) is make_grid(64, 8.0)
  assert make_grid(64, 8.0).h == pytest.approx(0.125)


def test_periodic_distance_wraps():
  assert periodic_distance(0.5, 7.5, 8.0) == pytest.approx(1.0)
  assert periodic_offset(0.5, 7.5, 8.0) == pytest.approx(1.0)
  assert periodic_offset(7.5, 0.5, 8.0) == pytest.approx(-1.0)


@pytest.mark.parametrize("period", [8.0, 10.0])
def test_fourier_diff_of_exponential(period):
  grid = make_grid(32, period)
  f = fourier_mode(grid)
  expected = 2j * np.pi / period * f
  assert np.max(np.abs(grid.fourier_diff(f) - expected)) < 1e-12


def test_second_derivative_of_sine(grid32):
  f = np.sin(2 * np.pi * grid32.nodes / 8.0)
  assert np.allclose(grid32.fourier_diff(f, 2).real, -ELL2 * f, atol=1e-12)
  assert np.allclose(grid32.d2 @ f, -ELL2 * f, atol=1e-12)


def test_fourier_diff_along_axis(grid32):
  f = np.sin(2 * np.pi * grid32.nodes / 8.0)
  rows = np.stack([f, 2 * f])
  out = grid32.fourier_diff(rows, 2, axis=1).real
  assert np.allclose(out[1], -2 * ELL2 * f, atol=1e-12)


def test_invert_helmholtz(grid32):
  omega = fourier_mode(grid32)
  psi = grid32.invert_helmholtz(omega, 1)
  assert np.allclose(psi, -omega / (1 + ELL2), atol=1e-12)
  assert np.allclose(grid32.apply_helmholtz(psi, 1), omega, atol=1e-12)
  assert np.allclose(grid32.helmholtz_inverse_matrix(1) @ omega, psi, atol=1e-12)


def test_invert_helmholtz_rejects_zero_mode(grid32):
  with pytest.raises(ZeroMode):
    grid32.invert_helmholtz(np.ones(grid32.n), 0)


def test_interpolation_is_exact_for_band_limited(grid32):
  f = fourier_mode(grid32, 3)
  points = [0.1, 2.345, 7.9]
  expected = np.exp(2j * np.pi * 3 * np.asarray(points) / 8.0)
  assert np.allclose(grid32.interpolate(f, points), expected, atol=1e-12)
  assert np.allclose(grid32.interpolation_weights(points) @ f, expected, atol=1e-12)


def test_hmk_norm_of_single_mode(grid32):
  f = fourier_mode(grid32)
  l2 = np.sqrt(8.0)
  assert grid32.l2_norm(f) == pytest.approx(l2)
  assert grid32.hmk_norm(f, 2, 1) == pytest.approx(l2 * np.sqrt(4 + ELL2))


def test_h1k_norm_of_the_first_mode_at_k2(grid32):
  # sqrt(k^2 p + (2pi/p)^2 p) = sqrt(32 + 8 (pi/4)^2)
  norm = grid32.hmk_norm(np.exp(2j * np.pi * grid32.nodes / 8.0), 2, 1)
  assert norm == pytest.approx(np.sqrt(32 + 8 * ELL2), rel=1e-12)
  assert norm == pytest.approx(6.0774, abs=1e-4)


@pytest.mark.parametrize("assembly,tol", [("dense", 1e-11), ("banded", 1e-7)])
def test_solve_periodic_helmholtz(grid64, assembly, tol):
  rhs = fourier_mode(grid64)
  op = PeriodicOperator.from_constants(grid64, 1.0, -1.0, assembly=assembly)
  x = solve_periodic(op, rhs)
  assert np.max(np.abs(x + rhs / (1 + ELL2))) < tol


def test_solve_periodic_identity(grid32):
  rhs = np.cos(grid32.nodes) + 0.5j
  op = PeriodicOperator.from_constants(grid32, 0.0, 1.0)
  assert np.allclose(solve_periodic(op, rhs), rhs)


def test_banded_matches_dense_application(grid64):
  f = fourier_mode(grid64)
  c0 = np.cos(2 * np.pi * grid64.nodes / 8.0)
  dense = PeriodicOperator(grid=grid64, c2=np.full(64, 0.1 + 0j), c0=c0 + 0j, assembly="dense")
  banded = PeriodicOperator(grid=grid64, c2=np.full(64, 0.1 + 0j), c0=c0 + 0j, assembly="banded")
  assert np.max(np.abs(dense.apply(f) - banded.apply(f))) < 1e-7


def test_auto_assembly_is_dense_on_small_grids(grid64):
  assert PeriodicOperator.from_constants(grid64, 1.0, 0.0).kind == "dense"


def test_singular_laplacian_is_reported(grid32):
  op = PeriodicOperator.from_constants(grid32, 1.0, 0.0, assembly="dense")
  with pytest.raises(NearSingular) as info:
    solve_periodic(op, np.ones(grid32.n), lam=0.25)
  assert info.value.lam == 0.25


def test_solve_periodic_rejects_a_missed_residual(grid64):
  op = PeriodicOperator.from_constants(grid64, 1.0, -1.0, assembly="dense")
  rhs = fourier_mode(grid64) + np.cos(3 * grid64.nodes)
  solve_periodic(op, rhs)
  with pytest.raises(NearSingular) as info:
    solve_periodic(op, rhs, lam=0.5, tol=1e-30)
  assert 0 < info.value.residual < 1e-10
  assert info.value.lam == 0.5


@pytest.mark.parametrize("order", [1, 2, 3])
def test_derivative_matrix_matches_fourier_diff(grid32, order):
  f = np.sin(2 * np.pi * grid32.nodes / 8.0) + 0.5 * np.cos(6 * np.pi * grid32.nodes / 8.0)
  matrix = grid32.derivative_matrix(order)
  assert np.isrealobj(matrix)
  assert np.allclose(matrix @ f, grid32.fourier_diff(f, order), atol=1e-10)
