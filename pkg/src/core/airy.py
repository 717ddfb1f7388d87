"""Generalized Airy operator A_Θ = ε∂²_y + i(λ − b(y)) − α, with ε = ν/k.

Application and inversion on the periodic grid, the fundamental-solution
matrix, the regime envelopes that bound it, the singular decomposition near
the crossings b(y) = λ and the special function W.
"""
from utils.logging import get_logger
logger = get_logger(__name__)

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import quad

from constant import COLUMN_RESIDUAL_TOL, M_VISC, SIGMA0, W_QUAD_TOL
from core.errors import AlphaOutOfRange, NearSingular, QuadratureFailure, RegimeMismatch
from core.grid import Factorization, Grid, PeriodicOperator, grid_for, periodic_distance, periodic_offset
from core.profile import (ParamGeometry, ShearProfile, SpectralPoint, bracket, crossing_points,
                          param_geometry, phi_inner, weights)
from utils.utils import make_batch, parallel_map


######################################## Operator ########################################


def airy_operator(profile: ShearProfile, point: SpectralPoint, grid: Grid,
          assembly: str = "auto") -> PeriodicOperator:
  c0 = 1j * (point.lam - profile.on(grid)) - point.alpha
  return PeriodicOperator(grid=grid, c2=np.full(grid.n, point.epsilon, dtype=complex),
                          c0=c0.astype(complex), assembly=assembly)


def airy_matrix(profile: ShearProfile, point: SpectralPoint, grid: Grid) -> NDArray[np.complex128]:
  """Dense spectral assembly of A_Θ."""
  return airy_operator(profile, point, grid, assembly="dense").matrix()


def apply_A(profile: ShearProfile, point: SpectralPoint, field: ArrayLike) -> NDArray[np.complex128]:
  """(ν/k)·∂²f + (i(λ − b) − α)·f by spectral differentiation."""
  grid = grid_for(field, profile.period)
  values = np.asarray(field, dtype=complex)
  multiplier = 1j * (point.lam - profile.on(grid)) - point.alpha
  if values.ndim > 1:
    multiplier = multiplier[:, None]
  return point.epsilon * grid.fourier_diff(values, 2) + multiplier * values


def check_alpha(point: SpectralPoint, sigma0: float = SIGMA0) -> None:
  floor = -sigma0 * np.sqrt(point.epsilon)
  if point.alpha < floor:
    raise AlphaOutOfRange(point.alpha, floor)


def airy_length(profile: ShearProfile, point: SpectralPoint,
        geometry: Optional[ParamGeometry] = None) -> float:
  """Length the A_Θ kernel varies on: ε^{1/4} in the viscous regime,
  (ε²|λ − b(y_j*)|)^{1/6} in the intermediate one, ε^{1/3} otherwise."""
  eps = point.epsilon
  if geometry is None and profile.has_critical_structure:
    geometry = param_geometry(profile, point)
  if geometry is None:
    return eps ** (1 / 3)
  if geometry.regime == "viscous":
    return eps ** 0.25
  if geometry.regime == "intermediate":
    return (eps ** 2 * geometry.distances[geometry.nearest]) ** (1 / 6)
  return eps ** (1 / 3)


def resolution_check(grid: Grid, profile: ShearProfile, point: SpectralPoint,
           geometry: Optional[ParamGeometry] = None, cells: int = 32) -> bool:
  """False (with a warning) when h exceeds airy_length/`cells`, i.e. N < cells·p/ℓ."""
  length = airy_length(profile, point, geometry)
  if grid.h > length / cells:
    logger.warning(f"grid spacing h={grid.h:.3g} under-resolves the Airy length {length:.3g} at "
                   f"lambda={point.lam:.6g} (N={grid.n}, want N >= {int(np.ceil(grid.period * cells / length))})")
    return False
  return True


def airy_factor(profile: ShearProfile, point: SpectralPoint, grid: Grid,
        sigma0: float = SIGMA0, assembly: str = "auto") -> Factorization:
  check_alpha(point, sigma0)
  return airy_operator(profile, point, grid, assembly).factorize(lam=point.lam)


def solve_A(profile: ShearProfile, point: SpectralPoint, rhs: ArrayLike,
      sigma0: float = SIGMA0, assembly: str = "auto") -> NDArray[np.complex128]:
  """A_Θ^{-1} rhs.

  Raises:
    AlphaOutOfRange: α < −σ0·ε^{1/2}.
    NearSingular: the discrete operator is numerically singular.
  """
  rhs = np.asarray(rhs, dtype=complex)
  grid = grid_for(rhs, profile.period)
  if not np.any(rhs):
    check_alpha(point, sigma0)
    return np.zeros_like(rhs)
  factors = airy_factor(profile, point, grid, sigma0, assembly)
  return factors.solve(rhs)


######################################## Kernel ########################################


@dataclass(frozen=True, eq=False)
class KernelMatrix:
  """K[m, n] ≈ k(y_m, z_n; Λ), the fundamental solution of A_Θ."""

  matrix: NDArray[np.complex128]
  grid: Grid
  point: SpectralPoint
  residual: float

  def apply(self, rhs: ArrayLike) -> NDArray[np.complex128]:
    """∫ k(y, z) rhs(z) dz by the periodic trapezoid rule."""
    return self.grid.h * (self.matrix @ np.asarray(rhs))

  def diagonal(self) -> NDArray[np.complex128]:
    return np.diag(self.matrix)


def airy_kernel(profile: ShearProfile, point: SpectralPoint, grid: Grid,
        sigma0: float = SIGMA0, threads: Optional[int] = None,
        block: int = 64) -> KernelMatrix:
  """Fundamental-solution matrix, one impulse column at a time in parallel blocks."""
  factors = airy_factor(profile, point, grid, sigma0)
  columns = make_batch(list(range(grid.n)), size=block)

  def solve_block(indices: list[int]) -> NDArray[np.complex128]:
    rhs = np.zeros((grid.n, len(indices)))
    rhs[indices, np.arange(len(indices))] = 1.0 / grid.h
    return factors.solve(rhs)

  blocks = parallel_map(solve_block, columns, threads=threads)
  matrix = np.concatenate(blocks, axis=1)

  applied = airy_matrix(profile, point, grid) @ matrix
  # relative to the impulse norm 1/h
  residual = float(np.max(np.linalg.norm(applied - np.eye(grid.n) / grid.h, axis=0)) * grid.h)
  if residual > COLUMN_RESIDUAL_TOL:
    logger.warning(f"Airy kernel column residual {residual:.2e} at lambda={point.lam}")
  logger.debug(f"Airy kernel N={grid.n} lambda={point.lam} eps={point.epsilon:.3g} residual={residual:.2e}")
  return KernelMatrix(matrix=matrix, grid=grid, point=point, residual=residual)


######################################## Envelopes ########################################


def regime_exponents(geometry: ParamGeometry) -> tuple[float, float, float]:
  """(prefactor, bracket, length) exponents of ε for the regime envelope."""
  if geometry.regime == "nondegenerate":
    beta = 0.0
  elif geometry.regime == "viscous":
    beta = 0.25
  else:
    beta = geometry.beta
  return (2 + beta) / 3, (1 + 2 * beta) / 3, (1 - beta) / 3


@dataclass(frozen=True, eq=False)
class Envelope:
  """E(y, z) = C·prefactor(z)·exp(−c0·rate(y, z))."""

  prefactor: NDArray[np.float64]
  rate: NDArray[np.float64]
  exponents: tuple[float, float, float]

  def __call__(self, C: float = 1.0, c0: float = 1.0) -> NDArray[np.float64]:
    return C * self.prefactor[None, :] * np.exp(-c0 * self.rate)


def envelope(profile: ShearProfile, point: SpectralPoint, geometry: ParamGeometry, grid: Grid) -> Envelope:
  eps = point.epsilon
  a, q, ell = regime_exponents(geometry)
  scaled_alpha = eps ** (-q) * point.alpha
  scaled_b = eps ** (-q) * (profile.on(grid) - point.lam)
  prefactor = eps ** (-a) / np.sqrt(bracket(scaled_alpha, scaled_b))
  joint = np.sqrt(bracket(scaled_alpha, scaled_b[:, None], scaled_b[None, :]))
  distance = periodic_distance(grid.nodes[:, None], grid.nodes[None, :], grid.period)
  rate = joint * distance * eps ** (-ell)
  return Envelope(prefactor=prefactor, rate=rate, exponents=(a, q, ell))


@dataclass(frozen=True)
class EnvelopeFit:
  C: float
  c0: float

  def ratio(self, kernel: KernelMatrix, env: Envelope) -> float:
    """max |K| / E over all grid pairs with these constants."""
    return float(np.max(np.abs(kernel.matrix) / env(self.C, self.c0)))


def fit_envelope(kernel: KernelMatrix, env: Envelope, bins: int = 40,
         band: float = 0.05) -> EnvelopeFit:
  """Least squares on binned maxima of log(|K|/prefactor) against the decay rate.

  c0 is the negated slope over the off-diagonal band (rate > `band` of its
  range); C is then the smallest constant making the bound hold everywhere.
  """
  log_ratio = np.log(np.abs(kernel.matrix) + 1e-300) - np.log(env.prefactor)[None, :]
  rate = env.rate
  top = float(np.max(rate))
  mask = rate > band * top
  c0 = 1e-3
  if np.count_nonzero(mask) > 2 * bins and top > 0:
    edges = np.linspace(band * top, top, bins + 1)
    index = np.digitize(rate[mask], edges) - 1
    xs, ys = [], []
    values = log_ratio[mask]
    centres = rate[mask]
    for b in range(bins):
      sel = index == b
      if np.any(sel):
        pick = np.argmax(values[sel])
        xs.append(centres[sel][pick])
        ys.append(values[sel][pick])
    if len(xs) >= 3:
      slope, _ = np.polyfit(xs, ys, 1)
      c0 = float(max(-slope, 1e-3))
  C = float(np.max(np.exp(log_ratio + c0 * rate)))
  return EnvelopeFit(C=C, c0=c0)


def diagonal_bound_ratio(kernel: KernelMatrix, profile: ShearProfile,
             geometry: ParamGeometry) -> float:
  """max_z |k(z,z)|·⟨ε^{-q}α, ε^{-q}(b(z)−λ)⟩^{1/2}/ε^{-a}."""
  point = kernel.point
  eps = point.epsilon
  a, q, _ = regime_exponents(geometry)
  brk = np.sqrt(bracket(eps ** (-q) * point.alpha, eps ** (-q) * (profile.on(kernel.grid) - point.lam)))
  return float(np.max(np.abs(kernel.diagonal()) * brk / eps ** (-a)))


######################################## Length scales ########################################


@dataclass(frozen=True, eq=False)
class AiryScale:
  j: int
  L_j: NDArray[np.float64]
  L: NDArray[np.float64]
  c0: Optional[float] = None
  sigma0: float = SIGMA0


def airy_scale(profile: ShearProfile, point: SpectralPoint, j: int, grid: Grid,
         c0: Optional[float] = None, sigma0: float = SIGMA0) -> AiryScale:
  eps = point.epsilon
  gap = abs(point.lam - profile.critical_values[j])
  shift = point.lam - profile.on(grid)
  if gap >= np.sqrt(eps):
    s = eps ** (-1 / 3) * gap ** (-1 / 3)
    L_j = eps ** (1 / 3) * gap ** (-1 / 6) / np.sqrt(bracket(s * shift, s * point.alpha))
  else:
    s = eps ** (-1 / 2)
    L_j = eps ** 0.25 / np.sqrt(bracket(s * shift, s * point.alpha))
  s = eps ** (-1 / 3)
  L = eps ** (1 / 3) / np.sqrt(bracket(s * shift, s * point.alpha))
  return AiryScale(j=j, L_j=L_j, L=L, c0=c0, sigma0=sigma0)


def combined_multiplier(profile: ShearProfile, point: SpectralPoint, j: int, grid: Grid) -> NDArray[np.complex128]:
  """i(λ−b) + |α| + ε^{1/2} + ε^{1/3}|λ − b(y_j*)|^{1/3}."""
  eps = point.epsilon
  gap = abs(point.lam - profile.critical_values[j])
  return (1j * (point.lam - profile.on(grid)) + abs(point.alpha)
          + eps ** 0.5 + eps ** (1 / 3) * gap ** (1 / 3))


def _lp(values: NDArray, p: float, h: float) -> float:
  if np.isinf(p):
    return float(np.max(np.abs(values)))
  return float((h * np.sum(np.abs(values) ** p)) ** (1 / p))


def weighted_solve_ratio(profile: ShearProfile, point: SpectralPoint, geometry: ParamGeometry,
             h: ArrayLike, j: int, sigmas: tuple[float, float, float],
             p: float = 2.0) -> float:
  """‖w·A^{-1}h‖_p / ‖w·h/m‖_p, w = ρ_j^{σ1}ρ_{j,k}^{σ2}|m|^{σ3}, m the combined multiplier."""
  h = np.asarray(h, dtype=complex)
  grid = grid_for(h, profile.period)
  wf = weights(profile, geometry, j, grid, enforce=False)
  m = combined_multiplier(profile, point, j, grid)
  s1, s2, s3 = sigmas
  w = wf.rho ** s1 * wf.rho_k ** s2 * np.abs(m) ** s3
  denominator = _lp(w * h / np.abs(m), p, grid.h)
  if denominator == 0:
    return 0.0
  return _lp(w * solve_A(profile, point, h), p, grid.h) / denominator


def verify_sigma0(profile: ShearProfile, grid: Grid, points: Sequence[SpectralPoint],
          sigma0: float = SIGMA0, attempts: int = 4) -> float:
  """Largest σ0 (halving from the configured one) with no singular solve on `points`."""
  for _ in range(attempts + 1):
    try:
      for point in points:
        if point.alpha >= -sigma0 * np.sqrt(point.epsilon):
          airy_factor(profile, point, grid, sigma0)
      return sigma0
    except NearSingular as exc:
      logger.warning(f"Airy solve singular at lambda={exc.lam}; shrinking sigma0 {sigma0} -> {sigma0 / 2}")
      sigma0 /= 2
  return sigma0


######################################## W function ########################################


@dataclass(frozen=True, eq=False)
class WFunction:
  c: float
  y: NDArray[np.float64]
  values: NDArray[np.complex128]
  errors: NDArray[np.float64]
  w0: complex

  def residual_constant(self) -> float:
    """max (1+y²)·|W(y) − 1/(1−iy)| over the samples."""
    y = self.y
    return float(np.max((1 + y ** 2) * np.abs(self.values - 1 / (1 - 1j * y))))


def _w_truncation(c: float) -> float:
  return max(20.0, 4 / np.sqrt(abs(c))) if c < 0 else 20.0


def _w_value(c: float, y: float, tol: float) -> tuple[complex, float]:
  lower = -_w_truncation(c)
  g = lambda xi: np.exp(xi ** 3 / 3 + c * xi)
  opts = dict(epsabs=tol / 10, epsrel=0.0, limit=500)
  if y == 0:
    re, err = quad(g, lower, 0.0, **opts)
    return -complex(re, 0.0), err
  re, err_re = quad(g, lower, 0.0, weight="cos", wvar=y, **opts)
  im, err_im = quad(g, lower, 0.0, weight="sin", wvar=y, **opts)
  return -complex(re, im), err_re + err_im


def w_special(c: float, y_samples: ArrayLike, sigma0: float = SIGMA0,
        tol: float = W_QUAD_TOL) -> WFunction:
  """W(y) = −∫_{−∞}^0 e^{iyξ} exp(ξ³/3 + cξ) dξ at the sample points.

  Raises:
    AlphaOutOfRange: c < −σ0.
    QuadratureFailure: an error estimate exceeds `tol`.
  """
  if c < -sigma0:
    raise AlphaOutOfRange(c, -sigma0)
  ys = np.atleast_1d(np.asarray(y_samples, dtype=float))
  values = np.empty(ys.shape, dtype=complex)
  errors = np.empty(ys.shape)
  for i, y in enumerate(ys):
    values[i], errors[i] = _w_value(c, float(y), tol)
    if errors[i] > tol:
      raise QuadratureFailure(float(y), float(errors[i]))
  w0, err0 = _w_value(c, 0.0, tol)
  if err0 > tol:
    raise QuadratureFailure(0.0, err0)
  return WFunction(c=c, y=ys, values=values, errors=errors, w0=w0)


######################################## Singular decomposition ########################################


@dataclass(frozen=True, eq=False)
class SingularDecomposition:
  w1: NDArray[np.complex128]
  w2: NDArray[np.complex128]
  crossings: tuple[float, ...]
  model: NDArray[np.complex128]
  residual: NDArray[np.float64]
  bound: NDArray[np.float64]
  case: str
  M: float = 0.0

  @property
  def residual_constant(self) -> float:
    """max |w2 − model| / bound; finite means the model bound holds with that constant."""
    mask = self.bound > 0
    if not np.any(mask):
      return 0.0
    return float(np.max(self.residual[mask] / self.bound[mask]))


def singular_decomposition(profile: ShearProfile, point: SpectralPoint, geometry: ParamGeometry,
               h: ArrayLike, j: int, m_visc: float = M_VISC,
               sigma0: float = SIGMA0) -> SingularDecomposition:
  """A_Θ^{-1}h = w1 + w2 with w2 the W-model around the crossings b = λ.

  Inside Σ_{j,δ0} the cutoff scale is |λ − b(y_j*)|^{1/2} and the regularizer
  ε^{1/3}|λ − b(y_j*)|^{1/3}; outside it both use unit scale.

  Raises:
    RegimeMismatch: λ outside b(T), or too close to the critical value.
  """
  h = np.asarray(h, dtype=complex)
  grid = grid_for(h, profile.period)
  eps = point.epsilon
  lo, hi = profile.b_range
  if not lo < point.lam < hi:
    raise RegimeMismatch(f"lambda={point.lam} has no crossing with b", geometry.regime)
  gap = abs(point.lam - profile.critical_values[j])
  if gap <= m_visc * np.sqrt(eps):
    raise RegimeMismatch(f"lambda={point.lam} is within the viscous layer of y_{j + 1}*", "viscous")

  inside = geometry.in_sigma[j]
  scale = np.sqrt(gap) if inside else 1.0
  regularizer = eps ** (1 / 3) * (gap ** (1 / 3) if inside else 1.0)
  crossings = tuple(crossing_points(profile, point.lam))

  w2 = np.zeros(grid.n, dtype=complex)
  model = np.zeros(grid.n, dtype=complex)
  bound = np.zeros(grid.n)
  if not np.any(h):
    return SingularDecomposition(w1=np.zeros_like(h), w2=w2, crossings=crossings,
                                 model=model, residual=np.zeros(grid.n), bound=bound,
                                 case="inside" if inside else "outside")

  amplitudes = grid.interpolate(h, list(crossings))
  d_jk = min(geometry.delta, 1.0 / point.k)
  # M = ‖h‖ + d_{j,k}‖∂h‖ in L²(S^j_{9δ})
  support = weights(profile, geometry, j, grid, enforce=False).in_interval(9 * geometry.delta)
  M = (np.sqrt(grid.h * np.sum(np.abs(h[support]) ** 2))
       + d_jk * np.sqrt(grid.h * np.sum(np.abs(grid.fourier_diff(h, 1)[support]) ** 2)))
  for y_dag, amp in zip(crossings, amplitudes):
    slope = float(profile.b(y_dag, 1))
    L = (eps / abs(slope)) ** (1 / 3)
    c = point.alpha * L ** 2 / eps
    s = periodic_offset(grid.nodes, y_dag, grid.period)
    cut = phi_inner(s / scale)
    active = cut > 0
    w_vals = np.zeros(grid.n, dtype=complex)
    if np.any(active):
      w_vals[active] = w_special(c, np.sign(slope) * s[active] / L, sigma0=max(sigma0, -c)).values
    w2 += (L ** 2 / eps) * amp * w_vals * cut
    # λ − b ≈ −b′(y†)(y − y†) near the crossing, so A_Θ ≈ −i b′(y†)(y − y†)
    model += amp * cut / (-1j * slope * s + regularizer)
    lorentz = eps ** (-1 / 3) * gap ** (1 / 6) / (1 + (eps ** (1 / 3) * gap ** (-1 / 6)) ** (-2) * s ** 2)
    bound += gap ** (-1 / 2) * lorentz * d_jk ** (-1 / 2) * M

  full = solve_A(profile, point, h, sigma0=sigma0)
  return SingularDecomposition(w1=full - w2, w2=w2, crossings=crossings, model=model,
                               residual=np.abs(w2 - model), bound=bound,
                               case="inside" if inside else "outside", M=float(M))
