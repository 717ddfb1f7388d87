import numpy as np
import pytest

from core.errors import AlphaOutOfRange, DeltaTooLarge, PeriodTooSmall, RegimeMismatch, WrongCriticalCount
from core.grid import make_grid
from core.profile import (SpectralPoint, bracket, build_profile, crossing_points,
                          param_geometry, phi0, phi_inner, profile_hash, weights)

CURVATURE = (np.pi / 4) ** 2


def test_kolmogorov_critical_structure(kolmogorov):
  assert kolmogorov.critical_points == pytest.approx((2.0, 6.0), abs=1e-9)
  assert kolmogorov.critical_values == pytest.approx((1.0, -1.0), abs=1e-12)
  assert kolmogorov.curvatures == pytest.approx((-CURVATURE, CURVATURE), abs=1e-10)
  assert kolmogorov.kappa == pytest.approx(0.6)
  assert kolmogorov.delta0 == pytest.approx(0.12)


def test_kolmogorov_derivatives(kolmogorov):
  y = np.linspace(0, 8, 17)
  w = np.pi / 4
  assert np.allclose(kolmogorov.b(y), np.sin(w * y))
  assert np.allclose(kolmogorov.b(y, 1), w * np.cos(w * y))
  assert np.allclose(kolmogorov.b(y, 3), -w ** 3 * np.cos(w * y))


def test_sigma_halfwidth(kolmogorov):
  assert kolmogorov.sigma_halfwidth(0) == pytest.approx(CURVATURE * 0.12 ** 2 / 16)
  assert kolmogorov.in_sigma(1.0 - 5e-4, 0)
  assert not kolmogorov.in_sigma(1.0 - 1e-3, 0)


@pytest.mark.parametrize("period", [6.0, 2 * np.pi])
def test_short_periods_are_rejected(period):
  with pytest.raises(PeriodTooSmall):
    build_profile({"family": "kolmogorov", "period": period})


def test_table_profile_matches_kolmogorov(tmp_path):
  y = np.arange(256) * 8.0 / 256
  path = tmp_path / "b.csv"
  np.savetxt(path, np.column_stack([y, np.sin(np.pi * y / 4)]), delimiter=",", header="y,b")
  profile = build_profile({"family": "table", "path": str(path), "period": 8.0})
  assert profile.critical_points == pytest.approx((2.0, 6.0), abs=1e-6)
  assert profile.curvatures[0] == pytest.approx(-CURVATURE, rel=1e-4)


def test_table_profile_with_four_extrema_is_rejected(tmp_path):
  y = np.arange(256) * 8.0 / 256
  path = tmp_path / "b.csv"
  np.savetxt(path, np.column_stack([y, np.sin(np.pi * y / 2)]), delimiter=",")
  with pytest.raises(WrongCriticalCount) as info:
    build_profile({"family": "table", "path": str(path), "period": 8.0})
  assert info.value.count == 4


def test_constant_profile_has_no_critical_structure(flat):
  assert not flat.has_critical_structure
  assert flat.b_range == (0.3, 0.3)
  with pytest.raises(RegimeMismatch):
    flat.require_critical()


def test_profile_hash_is_stable(kolmogorov):
  again = build_profile({"family": "kolmogorov", "period": 8.0})
  other = build_profile({"family": "kolmogorov", "period": 10.0})
  assert profile_hash(kolmogorov) == profile_hash(again)
  assert profile_hash(kolmogorov) != profile_hash(other)


def test_cutoffs():
  s = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0])
  values = phi0(s)
  assert values[:3] == pytest.approx([1.0, 1.0, 1.0])
  assert values[-2:] == pytest.approx([0.0, 0.0])
  assert 0 < values[3] < 1
  assert np.all(np.diff(values) <= 0)
  assert phi0(-1.5) == pytest.approx(values[3])
  assert phi_inner(0.5) == pytest.approx(1.0)
  assert phi_inner(1.0) == pytest.approx(0.0)


def test_bracket():
  assert bracket(3.0, 4.0) == pytest.approx(np.sqrt(26.0))


def test_crossing_points(kolmogorov):
  roots = crossing_points(kolmogorov, 0.5)
  assert roots == pytest.approx([2 / 3, 10 / 3], abs=1e-10)


@pytest.mark.parametrize("kwargs", [
  {"lam": 0.0, "alpha": 0.0, "nu": 1e-3, "k": 0},
  {"lam": 0.0, "alpha": 0.0, "nu": 0.0, "k": 1},
  {"lam": 0.0, "alpha": 0.0, "nu": 0.2, "k": 1},
])
def test_spectral_point_validation(kwargs):
  with pytest.raises(ValueError):
    SpectralPoint(**kwargs)


def test_sharp_alpha_floor():
  point = SpectralPoint(lam=0.0, alpha=-0.01, nu=1e-2, k=1)
  with pytest.raises(AlphaOutOfRange):
    point.check_alpha(0.02)
  point.check_alpha(0.2)


def test_param_geometry_nondegenerate(kolmogorov):
  point = SpectralPoint(lam=0.9, alpha=0.0, nu=1e-4, k=1)
  geometry = param_geometry(kolmogorov, point, c_dagger=10.0)
  delta1 = 8 * np.sqrt(0.1 / CURVATURE)
  assert geometry.delta1 == pytest.approx(delta1, rel=1e-9)
  assert geometry.delta2 == pytest.approx(delta1 / 64, rel=1e-9)
  assert geometry.delta == pytest.approx(1.0 + delta1, rel=1e-9)
  assert geometry.regime == "nondegenerate"
  assert geometry.nearest == 0
  assert geometry.beta == pytest.approx(0.125)
  assert not geometry.degenerate


@pytest.mark.parametrize("lam,alpha,nu,regime", [
  (0.99, 0.0, 1e-4, "viscous"),
  (0.5, 0.2, 1e-4, "alpha_dominated"),
  (1.0 - 3e-4, 0.0, 1e-9, "intermediate"),
  (-0.9, 0.0, 1e-4, "nondegenerate"),
])
def test_regimes(kolmogorov, lam, alpha, nu, regime):
  point = SpectralPoint(lam=lam, alpha=alpha, nu=nu, k=1)
  assert param_geometry(kolmogorov, point).regime == regime


def test_forced_regime(kolmogorov):
  point = SpectralPoint(lam=0.5, alpha=0.0, nu=1e-3, k=1)
  assert param_geometry(kolmogorov, point, regime="viscous").regime == "viscous"


def test_weights(kolmogorov):
  grid = make_grid(16, 8.0)
  point = SpectralPoint(lam=0.9, alpha=0.0, nu=3e-4, k=3)
  geometry = param_geometry(kolmogorov, point, c_dagger=10.0)
  with pytest.raises(DeltaTooLarge):
    weights(kolmogorov, geometry, 0, grid)
  field = weights(kolmogorov, geometry, 0, grid, enforce=False)
  assert grid.nodes[5] == pytest.approx(2.5)
  assert field.rho[5] == pytest.approx(0.5 + geometry.delta)
  assert field.rho_k[5] == pytest.approx(1 / 3)
  assert field.d_jk == pytest.approx(1 / 3)
  assert field.in_interval(0.6)[5]
  assert not field.in_interval(0.4)[5]


def test_weights_with_small_delta(kolmogorov, grid64):
  point = SpectralPoint(lam=1.0 - 1e-5, alpha=1e-4, nu=1e-6, k=1)
  geometry = param_geometry(kolmogorov, point, c_dagger=1.0)
  field = weights(kolmogorov, geometry, 0, grid64)
  assert np.min(field.rho) == pytest.approx(geometry.delta, abs=1e-9)
  assert np.all(field.rho_k <= 1.0)


def test_constant_override_rejects_geometry(flat):
  point = SpectralPoint(lam=0.3, alpha=0.0, nu=1e-3, k=1)
  with pytest.raises(RegimeMismatch):
    param_geometry(flat, point)
