import dataclasses

import numpy as np
import pytest

from conftest import fourier_mode
from core.errors import AlphaOutOfRange, CalibrationFailure, StencilOutOfRange
from core.profile import SpectralPoint, param_geometry, weights
from core.resolvent import (DensitySolver, LapReport, LapRow, NormOperator, WeightedNormSpec,
                            admissible_pairs, assemble_Lk, assemble_T, calibrate_c_dagger,
                            density_bound_ratio, embedded_eigenvalue_scan, good_derivative,
                            lambda_grid, lap_constant, lap_kappa, lap_scan, operator_norm,
                            refined_singularity_residual, semigroup_generator, spectral_density,
                            weighted_norm)


def _bump(grid, center=4.0):
  return np.exp(-((grid.nodes - center) ** 2)).astype(complex)


######## operators ########


def test_inviscid_operator_on_flat_profile(flat, grid32):
  L = assemble_Lk(flat, 1, grid32)
  assert np.allclose(L, 0.3 * np.eye(32))


def test_generator_on_flat_profile(flat, grid32):
  G = semigroup_generator(flat, 2, 1e-2, grid32)
  f = fourier_mode(grid32)
  rate = -1e-2 * (np.pi / 4) ** 2 - 2j * 0.3 - 1e-2 * 4
  assert np.allclose(G @ f, rate * f, atol=1e-12)


def test_generator_decays_at_least_at_the_viscous_rate(kolmogorov, grid64):
  nu, k = 1e-3, 1
  spectrum = np.linalg.eigvals(semigroup_generator(kolmogorov, k, nu, grid64))
  assert np.max(spectrum.real) <= -nu * k ** 2 + 1e-9


def test_inviscid_spectrum_stays_on_the_band(kolmogorov, grid64):
  spectrum = np.linalg.eigvals(assemble_Lk(kolmogorov, 1, grid64))
  assert np.max(np.abs(spectrum.imag)) < 1e-6
  assert np.max(np.abs(spectrum.real)) <= 1.0 + 1e-6


######## spectral density ########


def test_density_solves_the_coupled_problem(kolmogorov, grid64):
  point = SpectralPoint(lam=0.3, alpha=0.0, nu=1e-2, k=1)
  density = spectral_density(kolmogorov, point, _bump(grid64))
  assert density.residual["coupled"] < 1e-9
  assert density.residual["helmholtz"] < 1e-10
  assert density.M_k == pytest.approx(grid64.hmk_norm(_bump(grid64), 1, 3))
  assert np.isfinite(density_bound_ratio(density, grid64))


def test_density_solver_matches_direct_solve(kolmogorov, grid64):
  point = SpectralPoint(lam=-0.4, alpha=0.05, nu=1e-2, k=1)
  solver = DensitySolver.build(kolmogorov, grid64, 1, 1e-2, 0.05)
  direct = spectral_density(kolmogorov, point, _bump(grid64))
  schur = spectral_density(kolmogorov, point, _bump(grid64), solver=solver)
  assert np.allclose(direct.omega, schur.omega, atol=1e-9)
  assert np.allclose(direct.psi, schur.psi, atol=1e-9)


def test_density_solver_must_match_the_point(kolmogorov, grid64):
  solver = DensitySolver.build(kolmogorov, grid64, 1, 1e-2, 0.0)
  point = SpectralPoint(lam=0.0, alpha=0.0, nu=2e-2, k=1)
  with pytest.raises(ValueError):
    spectral_density(kolmogorov, point, _bump(grid64), solver=solver)


def test_density_of_zero_datum(kolmogorov, grid32):
  point = SpectralPoint(lam=0.0, alpha=0.0, nu=1e-2, k=1)
  density = spectral_density(kolmogorov, point, np.zeros(32))
  assert density.M_k == 0.0
  assert not np.any(density.omega)


def test_density_rejects_negative_shift(kolmogorov, grid32):
  point = SpectralPoint(lam=0.0, alpha=-0.5, nu=1e-2, k=1)
  with pytest.raises(AlphaOutOfRange):
    spectral_density(kolmogorov, point, _bump(grid32))


def test_modified_stream_function_removes_the_critical_part(kolmogorov, grid64):
  point = SpectralPoint(lam=0.3, alpha=0.0, nu=1e-2, k=1)
  omega0 = _bump(grid64, center=3.0)
  density = spectral_density(kolmogorov, point, omega0)
  far = np.abs(grid64.nodes - 4.0) < 0.5
  # the correction is supported within 2δ0 of the critical points
  assert np.allclose(density.psi_star[far], density.psi[far])
  residual = refined_singularity_residual(density, kolmogorov)
  assert residual.residual.shape == (64,)
  assert np.all(residual.residual >= 0)


######## T operator ########


def test_nondegenerate_T(kolmogorov, grid64):
  point = SpectralPoint(lam=0.5, alpha=0.0, nu=1e-2, k=1)
  operator = assemble_T(kolmogorov, point, grid64)
  assert not operator.degenerate
  assert operator.regime == "nondegenerate"
  assert operator.identity_error < 1e-9
  h = _bump(grid64)
  assert np.allclose(operator.apply(h), operator.matrix @ h)


def test_T_vanishes_on_flat_profile(flat, grid32):
  point = SpectralPoint(lam=0.3, alpha=0.1, nu=1e-2, k=1)
  operator = assemble_T(flat, point, grid32)
  assert operator.geometry is None
  assert not np.any(operator.matrix)


def test_degenerate_T_decomposes_exactly(kolmogorov, grid128):
  point = SpectralPoint(lam=1.0 - 1e-5, alpha=1e-4, nu=1e-6, k=1)
  operator = assemble_T(kolmogorov, point, grid128, c_dagger=1.0, threads=1)
  assert operator.degenerate
  assert operator.j == 0
  assert set(operator.pieces) == {"I1", "I2", "v1", "v2"}
  assert operator.theta == pytest.approx(operator.geometry.delta / 3)
  assert operator.identity_error < 1e-6


######## norms ########


def test_admissible_pairs():
  pairs = admissible_pairs(15 / 8)
  assert pairs[0] == (0.0, -15 / 8)
  assert pairs[1] == pytest.approx((1.0, -7 / 8))
  assert pairs[2] == pytest.approx((0.75, 1 / 8))


@pytest.mark.parametrize("kwargs", [
  {"sigma1": 0.5, "sigma2": 0.0},
  {"gamma": 2.0},
  {"kind": "L2"},
])
def test_norm_spec_validation(kwargs):
  with pytest.raises(ValueError):
    WeightedNormSpec(**kwargs)


def test_norm_labels():
  assert WeightedNormSpec.h1k(1).label == "H1k"
  assert WeightedNormSpec.level(0).label.startswith("X^(0,")


def test_x_norm_of_a_constant(kolmogorov, grid32):
  point = SpectralPoint(lam=0.5, alpha=0.0, nu=1e-2, k=1)
  geometry = dataclasses.replace(param_geometry(kolmogorov, point), delta=0.5)
  field = weights(kolmogorov, geometry, 0, grid32)
  spec = WeightedNormSpec(sigma1=0.0, sigma2=0.0, strict=False)
  # sqrt(2) from the L2 block on [1.5, 2.5], 1 from the sup outside
  assert weighted_norm(np.ones(32), spec, field) == pytest.approx(np.sqrt(2) + 1, rel=1e-9)


def test_weighted_norm_is_homogeneous(kolmogorov, grid64):
  point = SpectralPoint(lam=0.5, alpha=0.0, nu=1e-2, k=1)
  geometry = param_geometry(kolmogorov, point)
  field = weights(kolmogorov, geometry, 0, grid64, enforce=False)
  spec = WeightedNormSpec.level(1)
  g = _bump(grid64, center=2.5)
  assert weighted_norm(2 * g, spec, field) == pytest.approx(2 * weighted_norm(g, spec, field))
  assert weighted_norm(np.zeros(64), spec, field) == 0.0
  h1 = WeightedNormSpec.h1k(1)
  assert weighted_norm(g, h1, grid=grid64) == pytest.approx(grid64.hmk_norm(g, 1, 1))


def test_x_norm_needs_weights(grid32):
  with pytest.raises(ValueError):
    NormOperator.build(WeightedNormSpec.level(0), grid32)


def test_gram_is_hermitian_positive(kolmogorov, grid32):
  point = SpectralPoint(lam=0.5, alpha=0.0, nu=1e-2, k=1)
  geometry = param_geometry(kolmogorov, point)
  norm = NormOperator.build(WeightedNormSpec.level(0), grid32, weights(kolmogorov, geometry, 0, grid32, enforce=False))
  q = norm.gram()
  assert np.allclose(q, q.conj().T)
  assert np.min(np.linalg.eigvalsh(q)) > 0


def test_operator_norm_of_identity(grid32):
  norm = NormOperator.build(WeightedNormSpec.h1k(1), grid32)
  assert operator_norm(np.eye(32), norm) == pytest.approx(1.0)
  assert operator_norm(np.zeros((32, 32)), norm) == 0.0


######## LAP ########


def test_lap_kappa_without_perturbation(kolmogorov, grid32):
  point = SpectralPoint(lam=0.5, alpha=0.0, nu=1e-2, k=1)
  geometry = param_geometry(kolmogorov, point)
  norm = NormOperator.build(WeightedNormSpec.level(0), grid32, weights(kolmogorov, geometry, 0, grid32, enforce=False))
  kappa2, kappa_mixed = lap_kappa(np.zeros((32, 32)), norm)
  assert kappa2 == pytest.approx(1.0)
  assert kappa_mixed == pytest.approx(1.0)


def test_lap_constant_in_h1k(kolmogorov, grid64):
  point = SpectralPoint(lam=0.5, alpha=0.0, nu=1e-2, k=1)
  report = lap_constant(kolmogorov, point, WeightedNormSpec.h1k(1), grid64)
  row = report.rows[0]
  assert row.kappa2 == row.kappa_mixed
  assert 0 < report.kappa < np.inf
  assert row.regime == "nondegenerate"
  assert row.to_dict()["lambda"] == 0.5


def test_lap_report_pass_rule():
  rows = [LapRow(lam=l, regime="nondegenerate", kappa2=k, kappa_mixed=k, t_norm=1.0, pieces={},
                 identity_error=0.0) for l, k in ((0.0, 0.3), (0.5, 0.08))]
  assert LapReport(rows=rows, norm="H1k", kappa_min=0.05).passed
  assert not LapReport(rows=rows, norm="H1k", kappa_min=0.1).passed
  assert LapReport(rows=rows, norm="H1k").kappa == 0.08
  assert not LapReport(rows=[], norm="H1k").passed


def test_lap_scan_uses_h1k_outside_sigma(kolmogorov, grid32):
  report = lap_scan(kolmogorov, grid32, 1, 1e-2, 0.0, [-0.5, 0.5], WeightedNormSpec.level(0), threads=1)
  assert [row.lam for row in report.rows] == [-0.5, 0.5]
  assert [row.norm for row in report.rows] == ["H1k", "H1k"]
  assert report.norm == "H1k"
  assert report.table()[0]["norm"] == "H1k"
  assert np.all(np.isfinite([row.kappa_mixed for row in report.rows]))


def test_lap_scan_switches_norm_at_the_critical_value(kolmogorov, grid128):
  report = lap_scan(kolmogorov, grid128, 1, 1e-6, 1e-4, [0.5, 1.0 - 1e-5], WeightedNormSpec.level(0),
                    c_dagger=1.0, threads=1)
  outside, inside = report.rows
  assert outside.norm == "H1k"
  assert inside.norm.startswith("X^(0,") and inside.norm.endswith("_j1")
  assert report.norm == f"H1k+{inside.norm}"


def test_lambda_grid(kolmogorov):
  lambdas = lambda_grid(kolmogorov, 1, 1e-6)
  assert np.all(np.diff(lambdas) > 0)
  assert lambdas[0] < -1.0 < lambdas[-1]
  step = np.sqrt(1e-6) / 8
  for value in (-1.0, 1.0):
    for m in range(-4, 5):
      assert np.min(np.abs(lambdas - (value + m * step))) < 1e-12


######## good derivative ########


def test_good_derivative_needs_a_full_stencil(kolmogorov, grid32):
  point = SpectralPoint(lam=0.0, alpha=0.0, nu=1e-2, k=1)
  samples = np.ones((5, 32))
  with pytest.raises(StencilOutOfRange):
    good_derivative(samples, np.linspace(0, 0.4, 5), kolmogorov, point, 1)


def test_good_derivative_outside_the_band_is_plain(kolmogorov, grid32):
  lambdas = 1.5 + 0.01 * np.arange(5)
  g = np.cos(2 * np.pi * grid32.nodes / 8.0)
  samples = np.stack([l ** 2 * g for l in lambdas])
  point = SpectralPoint(lam=lambdas[2], alpha=0.0, nu=1e-2, k=1)
  result = good_derivative(samples, lambdas, kolmogorov, point, 2)
  assert not result.active
  assert np.allclose(result.first, 2 * lambdas[2] * g)
  assert np.allclose(result.second, 2 * g)


def test_good_derivative_inside_the_band(kolmogorov, grid64):
  lambdas = 0.3 + 0.01 * np.arange(-2, 3)
  samples = np.stack([np.exp(-((grid64.nodes - 4.0 - l) ** 2)) for l in lambdas])
  point = SpectralPoint(lam=0.3, alpha=0.0, nu=1e-4, k=1)
  result = good_derivative(samples, lambdas, kolmogorov, point, 2)
  assert result.active
  assert np.all(np.isfinite(result.first))
  assert np.all(np.isfinite(result.second))


######## embedded eigenvalues ########


def test_embedded_scan(kolmogorov, grid64):
  scan = embedded_eigenvalue_scan(kolmogorov, 1, [-0.5, 0.0, 0.5, 0.9999], grid64, exclusion=1e-3, threads=1)
  assert list(scan.lambdas) == [-0.5, 0.0, 0.5]
  assert scan.floor > 0
  assert all(len(roots) == 2 for roots in scan.roots)
  assert len(scan.table()) == 3


def test_calibration_skips_nondegenerate_points(kolmogorov, grid32):
  points = [SpectralPoint(lam=lam, alpha=0.0, nu=1e-3, k=1) for lam in (-0.5, 0.5)]
  assert calibrate_c_dagger(kolmogorov, grid32, points, start=3.0) == (3.0, 0.0)


def test_calibration_fails_without_room_for_c_dagger(kolmogorov, grid32):
  # sqrt(alpha) alone already exceeds 1/8
  point = SpectralPoint(lam=1.0 - 1e-5, alpha=0.02, nu=1e-6, k=1)
  with pytest.raises(CalibrationFailure) as info:
    calibrate_c_dagger(kolmogorov, grid32, [point])
  assert info.value.c_dagger == 10.0
