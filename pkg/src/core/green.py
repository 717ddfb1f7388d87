"""Green's functions of k² − ∂²_y on the periodic circle.

`StandardGreen` is the closed-form Helmholtz kernel G_k and its derived
kernel F_k. `green_modified` assembles the modified Green's function 𝒢^j_k,
i.e. the inverse of k² − ∂² + V with the truncated critical-layer potential
V, and `h_kernel` builds ℋ^j_k = [∂_z + φ0((y − y_j*)/(10δ))∂_y]𝒢.
"""
from utils.logging import get_logger
logger = get_logger(__name__)

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from constant import COLUMN_RESIDUAL_TOL, CROSSING_SNAP
from core.errors import DeltaTooLarge, RegimeMismatch
from core.grid import Factorization, Grid, periodic_distance, periodic_offset
from core.profile import ParamGeometry, ShearProfile, SpectralPoint, phi0, weights
from utils.utils import make_batch, parallel_map


######################################## Standard Green ########################################


@dataclass(frozen=True)
class StandardGreen:
  """G_k(y, z) = cosh(k(p/2 − d))/(2k sinh(kp/2)), d the periodic distance."""

  k: int
  period: float

  def G(self, y: ArrayLike, z: ArrayLike) -> NDArray[np.float64]:
    k, p = float(self.k), self.period
    d = periodic_distance(y, z, p)
    return np.cosh(k * (p / 2 - d)) / (2 * k * np.sinh(k * p / 2))

  def dG_dy(self, y: ArrayLike, z: ArrayLike) -> NDArray[np.float64]:
    k, p = float(self.k), self.period
    s = periodic_offset(y, z, p)
    return -np.sign(s) * np.sinh(k * (p / 2 - np.abs(s))) / (2 * np.sinh(k * p / 2))

  def dG_dz(self, y: ArrayLike, z: ArrayLike) -> NDArray[np.float64]:
    return -self.dG_dy(y, z)

  def mixed(self, y: ArrayLike, z: ArrayLike) -> tuple[NDArray[np.float64], float]:
    """∂_z∂_y G as (smooth kernel, delta coefficient): −k²G + 1·δ(y − z)."""
    return -float(self.k) ** 2 * self.G(y, z), 1.0

  def F(self, y: ArrayLike, z: ArrayLike) -> tuple[NDArray[np.float64], float]:
    """F_k = ∂_z∂_y G − δ as (smooth kernel, delta coefficient); the delta cancels."""
    smooth, delta = self.mixed(y, z)
    return smooth, delta - 1.0

  def dF_dy(self, y: ArrayLike, z: ArrayLike) -> NDArray[np.float64]:
    return -float(self.k) ** 2 * self.dG_dy(y, z)

  def matrix(self, grid: Grid, band_limited: bool = False) -> NDArray[np.float64]:
    """G at grid pairs; `band_limited` gives its projection on the grid's Fourier modes."""
    if not band_limited:
      return self.G(grid.nodes[:, None], grid.nodes[None, :])
    return -grid.helmholtz_inverse_matrix(self.k) / grid.h


def green_standard(k: int, p: float) -> StandardGreen:
  if k < 1:
    raise ValueError(f"k must be >= 1, got {k}")
  return StandardGreen(k=int(k), period=float(p))


def standard_bounds(green: StandardGreen, grid: Grid) -> dict[str, float]:
  """Fitted constants of the pointwise and integral bounds on G_k and F_k."""
  k = float(green.k)
  y, z = grid.nodes[:, None], grid.nodes[None, :]
  d = periodic_distance(y, z, grid.period)
  pointwise = (np.abs(green.G(y, z)) + np.abs(green.dG_dy(y, z)) / k) * k * np.exp(k * d)

  def l2(rows):
    return np.sqrt(grid.h * np.sum(np.abs(rows) ** 2, axis=1))

  g_int = max(np.max(k ** 1.5 * l2(green.G(y, z))), np.max(k ** 0.5 * l2(green.dG_dy(y, z))))
  f_smooth, _ = green.F(y, z)
  f_int = max(np.max(k ** -0.5 * l2(f_smooth)), np.max(k ** -1.5 * l2(green.dF_dy(y, z))))
  return {"pointwise": float(np.max(pointwise)), "G_integral": float(g_int), "F_integral": float(f_int)}


######################################## Modified Green ########################################


def _decay_envelope(k: float, d: NDArray, rho_y: NDArray, rho_z: NDArray) -> NDArray:
  return np.minimum(np.exp(-k * d), np.minimum(rho_y ** 2 / rho_z ** 2, rho_z / rho_y))


@dataclass(frozen=True, eq=False)
class ModifiedGreen:
  """𝒢^j_k(y_m, z_n; Λ) with the operator it inverts.

  `matrix` holds kernel values, so the integral operator is h·matrix, i.e.
  the inverse of `operator`.
  """

  matrix: NDArray[np.complex128]
  operator: NDArray[np.complex128]
  potential: NDArray[np.complex128]
  grid: Grid
  point: SpectralPoint
  j: int
  residual: float
  symmetry: float
  bound_constants: dict[str, float] = field(default_factory=dict)
  zero_potential: bool = False

  def apply(self, f: ArrayLike) -> NDArray[np.complex128]:
    return self.grid.h * (self.matrix @ np.asarray(f))

  @property
  def integral_operator(self) -> NDArray[np.complex128]:
    return self.grid.h * self.matrix

  @property
  def min_real_potential(self) -> float:
    return float(np.min(self.potential.real))


def critical_potential(profile: ShearProfile, point: SpectralPoint, geometry: ParamGeometry,
             j: int, grid: Grid, cutoff: Callable = phi0) -> NDArray[np.complex128]:
  """V = b''/(b − λ − iα)·[φ0((y − y_j*)/δ0) − φ0((y − y_j*)/δ(Λ))].

  Nodes within CROSSING_SNAP of a real crossing take V at a half-cell offset.
  """
  y = grid.nodes.copy()
  denominator = profile.b(y) - point.lam - 1j * point.alpha
  snap = np.abs(denominator) < CROSSING_SNAP
  if np.any(snap):
    logger.debug(f"{np.count_nonzero(snap)} node(s) sit on a crossing; shifting by h/2")
    y[snap] += grid.h / 2
  s = periodic_offset(y, profile.critical_points[j], grid.period)
  window = cutoff(s / profile.delta0) - cutoff(s / geometry.delta)
  return profile.b(y, 2) / (profile.b(y) - point.lam - 1j * point.alpha) * window


def _column_solve(factors: Factorization, grid: Grid, threads: Optional[int], block: int = 64):
  columns = make_batch(list(range(grid.n)), size=block)

  def solve_block(indices):
    rhs = np.zeros((grid.n, len(indices)))
    rhs[indices, np.arange(len(indices))] = 1.0 / grid.h
    return factors.solve(rhs)
  return np.concatenate(parallel_map(solve_block, columns, threads=threads), axis=1)


def green_modified(profile: ShearProfile, point: SpectralPoint, geometry: ParamGeometry,
           j: int, grid: Grid, cutoff: Callable = phi0, zero_potential: bool = False,
           threads: Optional[int] = None) -> ModifiedGreen:
  """Solve (k² − ∂² + V)𝒢(·, z_n) = δ(· − z_n) column by column.

  `zero_potential` drops V, reducing the problem to the standard Helmholtz
  Green's function.

  Raises:
    RegimeMismatch: λ outside Σ_{j,δ0}.
    DeltaTooLarge: δ(Λ) > 1/8.
    NearSingular: the assembled operator is singular.
  """
  if not zero_potential:
    if not geometry.in_sigma[j]:
      raise RegimeMismatch(f"lambda={point.lam} is outside Sigma_{j + 1}", geometry.regime)
    if geometry.delta > 1 / 8:
      raise DeltaTooLarge(geometry.delta, 1 / 8)
    potential = critical_potential(profile, point, geometry, j, grid, cutoff)
  else:
    potential = np.zeros(grid.n, dtype=complex)

  if potential.real.min() < -1e-12:
    logger.warning(f"Re V reaches {potential.real.min():.3e} < 0 at lambda={point.lam}")

  k2 = float(point.k) ** 2
  operator = k2 * np.eye(grid.n) - grid.d2 + np.diag(potential)
  factors = Factorization.from_matrix(operator, lam=point.lam)
  matrix = _column_solve(factors, grid, threads)

  residual = float(np.max(np.linalg.norm(operator @ matrix - np.eye(grid.n) / grid.h, axis=0)) * grid.h)
  if residual > COLUMN_RESIDUAL_TOL:
    logger.warning(f"modified Green column residual {residual:.2e}")
  scale = np.max(np.abs(matrix))
  symmetry = float(np.max(np.abs(matrix - matrix.T)) / scale) if scale > 0 else 0.0

  modified = ModifiedGreen(matrix=matrix, operator=operator, potential=potential, grid=grid,
                           point=point, j=j, residual=residual, symmetry=symmetry,
                           zero_potential=zero_potential)
  modified.bound_constants.update(_modified_bounds(modified, profile, geometry))
  logger.debug(f"modified Green j={j + 1} k={point.k} lambda={point.lam}: "
               f"residual={residual:.2e} symmetry={symmetry:.2e}")
  return modified


def _modified_bounds(modified: ModifiedGreen, profile: ShearProfile,
           geometry: ParamGeometry) -> dict[str, float]:
  grid = modified.grid
  wf = weights(profile, geometry, modified.j, grid, enforce=False)
  k = float(modified.point.k)
  d = periodic_distance(grid.nodes[:, None], grid.nodes[None, :], grid.period)
  env = wf.rho_k[None, :] * _decay_envelope(k, d, wf.rho[:, None], wf.rho[None, :])
  g0 = np.abs(modified.matrix)
  g1 = wf.rho_k[:, None] * np.abs(grid.d1 @ modified.matrix)
  return {"beta0": float(np.max(g0 / env)), "beta1": float(np.max(g1 / env))}


######################################## H kernel ########################################


@dataclass(frozen=True, eq=False)
class HKernel:
  matrix: NDArray[np.complex128]
  sum_derivative: NDArray[np.complex128]
  cutoff: NDArray[np.float64]
  bound_constants: dict[str, float]


def h_kernel(modified: ModifiedGreen, profile: ShearProfile, geometry: ParamGeometry) -> HKernel:
  """ℋ = ∂_z𝒢 + φ0((y − y_j*)/(10δ))·∂_y𝒢, with its bound constants."""
  grid = modified.grid
  G = modified.matrix
  dy = grid.d1 @ G
  dz = G @ grid.d1.T
  y_star = profile.critical_points[modified.j]
  cut = phi0(periodic_offset(grid.nodes, y_star, grid.period) / (10 * geometry.delta))
  H = dz + cut[:, None] * dy
  S = dy + dz

  wf = weights(profile, geometry, modified.j, grid, enforce=False)
  k = float(modified.point.k)
  d = periodic_distance(grid.nodes[:, None], grid.nodes[None, :], grid.period)
  rho_y, rho_z = wf.rho[:, None], wf.rho[None, :]
  strip = wf.in_interval(4 * geometry.delta)

  constants = {}
  env_h = _decay_envelope(k, d, rho_y, rho_z)[:, strip]
  if np.any(strip):
    constants["H_beta0"] = float(np.max(np.abs(H[:, strip]) / env_h))
    constants["H_beta1"] = float(np.max(wf.rho_k[:, None] * np.abs((grid.d1 @ H)[:, strip]) / env_h))
  rho_k_y, rho_k_z = wf.rho_k[:, None], wf.rho_k[None, :]
  env_s = np.minimum(np.exp(-k / 2 * d), np.minimum(rho_k_y / rho_z, rho_k_z / rho_y))
  constants["sum_beta0"] = float(np.max(np.abs(S) / env_s))
  constants["sum_beta1"] = float(np.max(wf.rho_k[:, None] * np.abs(grid.d1 @ S) / env_s))
  return HKernel(matrix=H, sum_derivative=S, cutoff=cut, bound_constants=constants)


def sum_derivative_bound(modified: ModifiedGreen, profile: ShearProfile, geometry: ParamGeometry) -> float:
  kernel = h_kernel(modified, profile, geometry)
  return max(kernel.bound_constants["sum_beta0"], kernel.bound_constants["sum_beta1"])
