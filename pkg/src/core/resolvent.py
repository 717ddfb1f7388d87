"""Orr–Sommerfeld spectral density and the limiting-absorption operator T_Θ.

The density ω_{k,ν}(·, λ + iα) solves A_Θω + i b''Δ_k^{-1}ω = ω_{0k}; T_Θ is
the compact perturbation of the identity whose lower bound κ (measured in the
weighted X norms) controls the density uniformly in λ. Also here: the good
λ-derivative D_λ and the embedded-eigenvalue scan of the inviscid problem.
"""
from utils.logging import get_logger
logger = get_logger(__name__)

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Literal, Optional, Sequence, Union

import numpy as np
import scipy.linalg as sla
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import trapezoid
from scipy.optimize import minimize

from constant import (C_DAGGER, GAMMA, KAPPA_MIN, NEAR_SINGULAR_RCOND, SIGMA0,
                      SIGMA_SHARP, SOLVE_RESIDUAL_TOL)
from core.airy import airy_matrix, apply_A, check_alpha
from core.errors import CalibrationFailure, DeltaTooLarge, NearSingular, StencilOutOfRange
from core.green import ModifiedGreen, green_modified
from core.grid import Factorization, Grid, grid_for, periodic_distance, periodic_offset
from core.profile import (ParamGeometry, ShearProfile, SpectralPoint, WeightField, bracket,
                          crossing_points, param_geometry, phi0, weights)
from utils.utils import parallel_map

# 4th-order centered differences on offsets -2..2
_FIRST = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_SECOND = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


######################################## Operators ########################################


def assemble_Lk(profile: ShearProfile, k: int, grid: Grid,
        nu: Optional[float] = None) -> NDArray[np.complex128]:
  """Dense L_{k,ν} = (ν/k)∂² − i b + i b''Δ_k^{-1}, or the inviscid L_k = b − b''Δ_k^{-1} when ν is None."""
  helm = grid.helmholtz_inverse_matrix(k)
  b = profile.on(grid)
  b2 = profile.on(grid, 2)
  if nu is None:
    return np.diag(b).astype(complex) - b2[:, None] * helm
  return (nu / k) * grid.d2 - 1j * np.diag(b) + 1j * b2[:, None] * helm


def semigroup_generator(profile: ShearProfile, k: int, nu: float, grid: Grid) -> NDArray[np.complex128]:
  """Right-hand side of ∂_tω_k = −ν(k² − ∂²)ω_k − ikbω_k + ikb''Δ_k^{-1}ω_k."""
  return k * assemble_Lk(profile, k, grid, nu) - nu * k ** 2 * np.eye(grid.n)


######################################## Spectral density ########################################


@dataclass(frozen=True, eq=False)
class SpectralDensity:
  point: SpectralPoint
  omega: NDArray[np.complex128]
  psi: NDArray[np.complex128]
  psi_star: NDArray[np.complex128]
  omega_star: NDArray[np.complex128]
  f0k: NDArray[np.complex128]
  M_k: float
  residual: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class DensitySolver:
  """Complex Schur form of L_{k,ν} − α; each λ then costs one triangular solve."""

  grid: Grid
  k: int
  nu: float
  alpha: float
  triangular: NDArray[np.complex128] = field(repr=False)
  unitary: NDArray[np.complex128] = field(repr=False)

  @classmethod
  def build(cls, profile: ShearProfile, grid: Grid, k: int, nu: float, alpha: float,
        sigma: float = SIGMA_SHARP) -> "DensitySolver":
    SpectralPoint(lam=0.0, alpha=alpha, nu=nu, k=k).check_alpha(sigma)
    generator = assemble_Lk(profile, k, grid, nu) - alpha * np.eye(grid.n)
    triangular, unitary = sla.schur(generator, output="complex")
    logger.debug(f"density solver N={grid.n} k={k} nu={nu} alpha={alpha:.3g}")
    return cls(grid=grid, k=k, nu=nu, alpha=alpha, triangular=triangular, unitary=unitary)

  def project(self, omega0: ArrayLike) -> NDArray[np.complex128]:
    return self.unitary.conj().T @ np.asarray(omega0, dtype=complex)

  def omega(self, lam: float, projected: NDArray[np.complex128]) -> NDArray[np.complex128]:
    """ω with (L − α + iλ)ω = ω_{0k}, given the projected datum Q^H ω_{0k}."""
    shifted = self.triangular + 1j * lam * np.eye(self.grid.n)
    trcon, = sla.get_lapack_funcs(("trcon",), (shifted,))
    rcond, info = trcon(shifted, norm="1", uplo="U", diag="N")
    if info != 0 or not np.isfinite(rcond) or rcond < NEAR_SINGULAR_RCOND:
      raise NearSingular(float(rcond), lam)
    return self.unitary @ sla.solve_triangular(shifted, projected, lower=False)

  def solve(self, lam: float, omega0: ArrayLike) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
    omega = self.omega(lam, self.project(omega0))
    return omega, self.grid.invert_helmholtz(omega, self.k)


def _critical_cutoff(profile: ShearProfile, grid: Grid) -> NDArray[np.float64]:
  """Σ_j φ0((y − y_j*)/δ0)."""
  total = np.zeros(grid.n)
  for y_star in profile.critical_points:
    total += phi0(periodic_offset(grid.nodes, y_star, grid.period) / profile.delta0)
  return total


def spectral_density(profile: ShearProfile,
           point: SpectralPoint,
           omega0k: ArrayLike,
           solver: Optional[DensitySolver] = None,
           sigma: float = SIGMA_SHARP) -> SpectralDensity:
  """ω_{k,ν}, ψ_{k,ν}, the modified ψ* and its forcing f_{0k}.

  Raises:
    AlphaOutOfRange: α < −σ♯ε^{1/2}.
    NearSingular: iλ − α is numerically an eigenvalue of −L_{k,ν}; `lam` names it.
  """
  point.check_alpha(sigma)
  omega0 = np.asarray(omega0k, dtype=complex)
  grid = grid_for(omega0, profile.period)
  k = point.k
  b2 = profile.on(grid, 2)

  if not np.any(omega0):
    zeros = np.zeros(grid.n, dtype=complex)
    return SpectralDensity(point=point, omega=zeros, psi=zeros, psi_star=zeros,
                           omega_star=zeros, f0k=zeros, M_k=0.0,
                           residual={"helmholtz": 0.0, "coupled": 0.0})

  if solver is not None:
    if (solver.k, solver.nu, solver.alpha) != (k, point.nu, point.alpha):
      raise ValueError("density solver was built for another (k, nu, alpha)")
    omega, psi = solver.solve(point.lam, omega0)
  else:
    coupled = airy_matrix(profile, point, grid) + 1j * b2[:, None] * grid.helmholtz_inverse_matrix(k)
    omega = Factorization.from_matrix(coupled, lam=point.lam).solve(omega0)
    psi = grid.invert_helmholtz(omega, k)

  if profile.has_critical_structure:
    cut = _critical_cutoff(profile, grid)
    correction = np.divide(cut * omega0, 1j * b2, out=np.zeros(grid.n, dtype=complex),
                           where=cut > 0)
  else:
    cut = np.zeros(grid.n)
    correction = np.zeros(grid.n, dtype=complex)
  psi_star = psi - correction
  lifted = grid.apply_helmholtz(correction, k)
  omega_star = omega - lifted
  f0k = omega0 - cut * omega0 - apply_A(profile, point, lifted)

  scale = np.linalg.norm(omega0)
  residual = {
    "helmholtz": float(np.linalg.norm(grid.apply_helmholtz(psi, k) - omega) / max(np.linalg.norm(omega), 1e-300)),
    "coupled": float(np.linalg.norm(apply_A(profile, point, omega) + 1j * b2 * psi - omega0) / scale),
  }
  if residual["coupled"] > SOLVE_RESIDUAL_TOL:
    logger.warning(f"spectral density residual {residual['coupled']:.2e} at lambda={point.lam}")

  return SpectralDensity(point=point, omega=omega, psi=psi, psi_star=psi_star,
                         omega_star=omega_star, f0k=f0k, M_k=grid.hmk_norm(omega0, k, 3),
                         residual=residual)


def density_bound_ratio(density: SpectralDensity, grid: Grid) -> float:
  """‖ψ‖_{H¹_k}·k^{5/2}⟨λ⟩ / M_k, bounded uniformly outside both Σ sets."""
  if density.M_k == 0:
    return 0.0
  k = density.point.k
  return float(grid.hmk_norm(density.psi, k, 1) * k ** 2.5 * bracket(density.point.lam) / density.M_k)


@dataclass(frozen=True, eq=False)
class SingularityResidual:
  residual: NDArray[np.float64]
  envelope: NDArray[np.float64]
  mask: NDArray[np.bool_]
  constant: float


def refined_singularity_residual(density: SpectralDensity, profile: ShearProfile,
                 geometry: Optional[ParamGeometry] = None,
                 gamma: float = GAMMA, separation: float = 0.1) -> SingularityResidual:
  """|ω + i b''ψ*/(i(λ − b) + ε^{1/3}|y − y_j*|^{2/3})| against its Lorentzian envelope.

  The constant is fitted over nodes with |λ − b| < `separation`·|b − b(y_j*)|.
  """
  profile.require_critical()
  point = density.point
  grid = grid_for(density.omega, profile.period)
  geometry = geometry or param_geometry(profile, point)
  eps = point.epsilon
  y, b = grid.nodes, profile.on(grid)
  b2 = profile.on(grid, 2)

  distances = np.stack([periodic_distance(y, y_star, grid.period) for y_star in profile.critical_points])
  j = np.argmin(distances, axis=0)
  dist = distances[j, np.arange(grid.n)]
  critical = np.asarray(profile.critical_values)[j]
  fields = [weights(profile, geometry, i, grid, enforce=False) for i in range(2)]
  rho_k = np.where(j == 0, fields[0].rho_k, fields[1].rho_k)

  layer = eps ** (1 / 3) * dist ** (2 / 3)
  model = 1j * (point.lam - b) + layer
  ratio = np.divide(1j * b2 * density.psi_star, model, out=np.zeros(grid.n, dtype=complex),
                    where=np.abs(model) > 0)
  residual = np.abs(density.omega + ratio)

  with np.errstate(divide="ignore", invalid="ignore"):
    lorentz = 1.0 + np.abs(point.lam - b) ** 2 / layer ** 2
    envelope = (rho_k ** (gamma - 0.5) * dist ** (-0.5) * eps ** (-1 / 3) * dist ** (1 / 3)
                / lorentz * point.k ** (-0.5) * density.M_k)
  mask = (dist > 0) & (np.abs(point.lam - b) < separation * np.abs(b - critical)) & np.isfinite(envelope)
  mask &= envelope > 0
  constant = float(np.max(residual[mask] / envelope[mask])) if np.any(mask) else float("nan")
  return SingularityResidual(residual=residual, envelope=np.where(np.isfinite(envelope), envelope, np.inf),
                             mask=mask, constant=constant)


######################################## T operator ########################################


@dataclass(frozen=True, eq=False)
class TOperator:
  """Dense T_Θ with its regime and, when degenerate, the four pieces I1, I2, v1, v2."""

  matrix: NDArray[np.complex128]
  regime: str
  degenerate: bool
  geometry: Optional[ParamGeometry]
  j: Optional[int] = None
  pieces: dict[str, NDArray[np.complex128]] = field(default_factory=dict)
  theta: Optional[float] = None
  localizer: Optional[NDArray[np.float64]] = None
  identity_error: float = 0.0

  def apply(self, h: ArrayLike) -> NDArray[np.complex128]:
    return self.matrix @ np.asarray(h)

  def recombined(self) -> NDArray[np.complex128]:
    """−iT_I1 − iT_I2 − iT_v1 − T_v2."""
    p = self.pieces
    return -1j * p["I1"] - 1j * p["I2"] - 1j * p["v1"] - p["v2"]


def _airy_inverse(profile: ShearProfile, point: SpectralPoint, grid: Grid, sigma0: float) -> NDArray[np.complex128]:
  check_alpha(point, sigma0)
  factors = Factorization.from_matrix(airy_matrix(profile, point, grid), lam=point.lam)
  return factors.solve(np.eye(grid.n, dtype=complex))


def _relative(a: NDArray, b: NDArray) -> float:
  scale = np.max(np.abs(b))
  return float(np.max(np.abs(a - b)) / scale) if scale > 0 else float(np.max(np.abs(a)))


def assemble_T(profile: ShearProfile,
         point: SpectralPoint,
         grid: Grid,
         geometry: Optional[ParamGeometry] = None,
         greens: Optional[ModifiedGreen] = None,
         c_dagger: float = C_DAGGER,
         sigma0: float = SIGMA0,
         threads: Optional[int] = None) -> TOperator:
  """T_Θ in its nondegenerate form Δ_k^{-1}A^{-1}(ib''·) or, for λ in Σ_{j,δ0}
  with α < δ0, the modified-Green form −𝒢[A^{-1}(ib''·) + V·].

  Raises:
    AlphaOutOfRange: α < −σ0·ε^{1/2}.
    NearSingular: A_Θ or the modified Green operator is singular.
    DeltaTooLarge: the viscous pieces need 2δ(Λ)/3 <= δ0.
  """
  b2 = profile.on(grid, 2)
  a_inv = _airy_inverse(profile, point, grid, sigma0)
  coupling = a_inv * (1j * b2)[None, :]

  if profile.has_critical_structure:
    geometry = geometry or param_geometry(profile, point, c_dagger=c_dagger)
  else:
    geometry = None

  if geometry is None or not geometry.degenerate:
    helm = grid.helmholtz_inverse_matrix(point.k)
    matrix = helm @ coupling
    check = airy_matrix(profile, point, grid) @ grid.apply_helmholtz(matrix, point.k)
    error = _relative(check, np.diag(1j * b2)) if np.any(b2) else float(np.max(np.abs(matrix)))
    return TOperator(matrix=matrix, regime=geometry.regime if geometry else "nondegenerate",
                     degenerate=False, geometry=geometry, identity_error=error)

  j = geometry.nearest if geometry.in_sigma[geometry.nearest] else geometry.in_sigma.index(True)
  delta = geometry.delta
  if 2 * delta / 3 > profile.delta0:
    raise DeltaTooLarge(delta, 1.5 * profile.delta0)
  greens = greens or green_modified(profile, point, geometry, j, grid, threads=threads)
  g_op = greens.integral_operator
  matrix = -g_op @ (coupling + np.diag(greens.potential))

  s = periodic_offset(grid.nodes, profile.critical_points[j], grid.period)
  inner = phi0(s / profile.delta0)
  outer = phi0(s / delta)
  localizer = inner - outer
  theta = delta / 3
  chi = phi0(s / theta)
  shifted = profile.on(grid) - point.lam - 1j * point.alpha

  viscous = a_inv * (localizer * b2)[None, :]
  v2_weight = np.divide(1.0 - chi, shifted, out=np.zeros(grid.n, dtype=complex), where=chi < 1.0)
  pieces = {
    "I1": g_op @ (a_inv * ((1.0 - inner) * b2)[None, :]),
    "I2": g_op @ (a_inv * (outer * b2)[None, :]),
    "v1": g_op @ (chi[:, None] * viscous),
    "v2": g_op @ (v2_weight[:, None] * (point.epsilon * grid.d2 @ viscous)),
  }
  t_op = TOperator(matrix=matrix, regime=geometry.regime, degenerate=True, geometry=geometry,
                   j=j, pieces=pieces, theta=theta, localizer=localizer)
  error = _relative(t_op.recombined(), matrix)
  logger.debug(f"T operator lambda={point.lam} j={j + 1} regime={geometry.regime}: "
               f"decomposition error {error:.2e}")
  return dataclasses.replace(t_op, identity_error=error)


######################################## Weighted norms ########################################


def admissible_pairs(gamma: float = GAMMA) -> list[tuple[float, float]]:
  """(σ1, σ2) pairs of the three weighted spaces used with D_λ^0, D_λ^1, D_λ^2."""
  return [(0.0, -gamma), (1.0, -gamma + 1.0), (1.0 - 2.0 * (2.0 - gamma), -gamma + 2.0)]


@dataclass(frozen=True)
class WeightedNormSpec:
  """Norm selector: `X` is the mixed L²/L^∞ space X^{σ1,σ2}, `H1k` the H¹_k norm."""

  sigma1: float = 0.0
  sigma2: float = -GAMMA
  j: int = 0
  gamma: float = GAMMA
  kind: Literal["X", "H1k"] = "X"
  k: Optional[int] = None
  strict: bool = True

  def __post_init__(self):
    if self.kind not in ("X", "H1k"):
      raise ValueError(f"unknown norm kind '{self.kind}'")
    if not 15 / 8 <= self.gamma < 2:
      raise ValueError(f"gamma must lie in [15/8, 2), got {self.gamma}")
    if self.kind == "X" and self.strict:
      pairs = admissible_pairs(self.gamma)
      if not any(np.isclose(self.sigma1, a) and np.isclose(self.sigma2, b) for a, b in pairs):
        raise ValueError(f"(sigma1, sigma2)=({self.sigma1}, {self.sigma2}) is not admissible for gamma={self.gamma}")

  @classmethod
  def level(cls, order: int, j: int = 0, gamma: float = GAMMA) -> "WeightedNormSpec":
    sigma1, sigma2 = admissible_pairs(gamma)[order]
    return cls(sigma1=sigma1, sigma2=sigma2, j=j, gamma=gamma)

  @classmethod
  def h1k(cls, k: Optional[int] = None) -> "WeightedNormSpec":
    return cls(kind="H1k", k=k)

  @property
  def label(self) -> str:
    if self.kind == "H1k":
      return "H1k"
    return f"X^({self.sigma1:g},{self.sigma2:g})_j{self.j + 1}"


@dataclass(frozen=True, eq=False)
class NormOperator:
  """Evaluates one weighted norm on a fixed grid and weight field."""

  spec: WeightedNormSpec
  grid: Grid
  k: int
  weight_field: Optional[WeightField] = None

  @classmethod
  def build(cls, spec: WeightedNormSpec, grid: Grid,
        weight_field: Optional[WeightField] = None, k: Optional[int] = None) -> "NormOperator":
    if spec.kind == "X" and weight_field is None:
      raise ValueError("the X norm needs a weight field")
    k = spec.k or k or (weight_field.k if weight_field is not None else None)
    if k is None:
      raise ValueError("the wavenumber k is required")
    return cls(spec=spec, grid=grid, k=int(k), weight_field=weight_field)

  @property
  def kind(self) -> str:
    return self.spec.kind

  @cached_property
  def _layout(self):
    wf = self.weight_field
    inside = wf.in_interval()
    s = periodic_offset(self.grid.nodes[inside], wf.y_star, self.grid.period)
    order = np.argsort(s)
    xs = np.concatenate([[-wf.delta], s[order], [wf.delta]])
    ends = self.grid.interpolation_weights([wf.y_star - wf.delta, wf.y_star + wf.delta])
    return inside, np.flatnonzero(inside)[order], xs, ends

  def _scales(self, beta: int) -> tuple[float, NDArray[np.float64]]:
    wf, spec = self.weight_field, self.spec
    l2 = wf.delta ** (-0.5 + spec.sigma1) * wf.d_jk ** (spec.sigma2 + beta)
    sup = wf.rho ** spec.sigma1 * wf.rho_k ** (spec.sigma2 + beta)
    return float(l2), sup

  def _blocks(self, g: NDArray, p: Optional[float]) -> float:
    inside, ordered, xs, ends = self._layout
    outside = ~inside
    total = 0.0
    for beta in (0, 1):
      f = g if beta == 0 else self.grid.fourier_diff(g, 1)
      l2_scale, sup_weight = self._scales(beta)
      values = np.concatenate([[ends[0] @ f], f[ordered], [ends[1] @ f]])
      total += l2_scale * np.sqrt(trapezoid(np.abs(values) ** 2, xs))
      if np.any(outside):
        weighted = sup_weight[outside] * np.abs(f[outside])
        if p is None:
          total += float(np.max(weighted))
        else:
          top = float(np.max(weighted))
          total += top * float(np.sum((weighted / top) ** p) ** (1 / p)) if top > 0 else 0.0
    return float(total)

  def mixed(self, g: ArrayLike) -> float:
    g = np.asarray(g, dtype=complex)
    if self.kind == "H1k":
      return self.grid.hmk_norm(g, self.k, 1)
    return self._blocks(g, None)

  def smoothed(self, g: ArrayLike, p: float = 16.0) -> float:
    """Same norm with the L^∞ block replaced by an ℓ^p sum."""
    g = np.asarray(g, dtype=complex)
    if self.kind == "H1k":
      return self.grid.hmk_norm(g, self.k, 1)
    return self._blocks(g, p)

  def gram(self) -> NDArray[np.complex128]:
    """Hermitian positive Q with g^H Q g a quadratic stand-in for the squared norm."""
    grid = self.grid
    if self.kind == "H1k":
      return grid.h * (self.k ** 2 * np.eye(grid.n) + grid.d1.T @ grid.d1)
    inside = self.weight_field.in_interval()
    outside = ~inside
    n_out = max(int(np.count_nonzero(outside)), 1)
    q = np.zeros((grid.n, grid.n), dtype=complex)
    for beta in (0, 1):
      l2_scale, sup_weight = self._scales(beta)
      diag = np.where(inside, grid.h * l2_scale ** 2, sup_weight ** 2 / n_out)
      op = np.eye(grid.n) if beta == 0 else grid.d1
      q += op.T @ (diag[:, None] * op)
    return 0.5 * (q + q.conj().T)


def weighted_norm(g: ArrayLike, spec: WeightedNormSpec,
          weight_field: Optional[WeightField] = None, grid: Optional[Grid] = None) -> float:
  """X^{σ1,σ2} norm (L² block on S^j_δ plus weighted sup outside), or H¹_k."""
  g = np.asarray(g, dtype=complex)
  if grid is None:
    if weight_field is None:
      raise ValueError("either a weight field or a grid is required")
    grid = weight_field.grid
  if not np.any(g):
    return 0.0
  return NormOperator.build(spec, grid, weight_field).mixed(g)


def operator_norm(matrix: ArrayLike, norm: NormOperator) -> float:
  """Operator norm in the quadratic surrogate of `norm`."""
  matrix = np.asarray(matrix, dtype=complex)
  if not np.any(matrix):
    return 0.0
  q = norm.gram()
  top = sla.eigh(_hermitian(matrix.conj().T @ q @ matrix), q, eigvals_only=True)[-1]
  return float(np.sqrt(max(top, 0.0)))


def _hermitian(m: NDArray) -> NDArray:
  return 0.5 * (m + m.conj().T)


######################################## LAP ########################################


@dataclass(frozen=True)
class LapRow:
  lam: float
  regime: str
  kappa2: float
  kappa_mixed: float
  t_norm: float
  pieces: dict[str, float]
  identity_error: float
  norm: str = ""

  def to_dict(self) -> dict[str, Any]:
    return {"lambda": self.lam, "regime": self.regime, "norm": self.norm, "kappa2": self.kappa2,
            "kappa_mixed": self.kappa_mixed, "Tnorm": self.t_norm, "pieces": dict(self.pieces),
            "identity_error": self.identity_error}


@dataclass(frozen=True)
class LapReport:
  rows: list[LapRow]
  norm: str
  sigma_sharp: float = SIGMA_SHARP
  kappa_min: float = KAPPA_MIN

  @property
  def kappa(self) -> float:
    return min((r.kappa_mixed for r in self.rows), default=float("nan"))

  @property
  def kappa2(self) -> float:
    return min((r.kappa2 for r in self.rows), default=float("nan"))

  @property
  def passed(self) -> bool:
    return bool(self.rows) and self.kappa > self.kappa_min

  def table(self) -> list[dict[str, Any]]:
    return [row.to_dict() for row in self.rows]


def lap_kappa(matrix: ArrayLike, norm: NormOperator, candidates: int = 4,
        p: float = 16.0) -> tuple[float, float]:
  """(κ₂, κ_mixed) for I + T.

  κ₂ is the smallest generalized singular value in the quadratic surrogate.
  κ_mixed evaluates the true mixed norm ratio on the lowest surrogate
  singular vectors, refined by minimizing the ℓ^p-smoothed ratio over their span.
  """
  matrix = np.asarray(matrix, dtype=complex)
  n = matrix.shape[0]
  shifted = np.eye(n) + matrix
  q = norm.gram()
  values, vectors = sla.eigh(_hermitian(shifted.conj().T @ q @ shifted), q)
  kappa2 = float(np.sqrt(max(values[0], 0.0)))
  if norm.kind == "H1k":
    return kappa2, kappa2

  def ratio(h: NDArray, smooth: bool = False) -> float:
    evaluate = (lambda g: norm.smoothed(g, p)) if smooth else norm.mixed
    denominator = evaluate(h)
    return evaluate(shifted @ h) / denominator if denominator > 0 else np.inf

  basis = vectors[:, :min(candidates, n)]
  ratios = [ratio(basis[:, i]) for i in range(basis.shape[1])]
  best = int(np.argmin(ratios))
  m = basis.shape[1]

  def objective(x: NDArray) -> float:
    coeffs = x[:m] + 1j * x[m:]
    return ratio(basis @ coeffs, smooth=True)

  start = np.zeros(2 * m)
  start[best] = 1.0
  result = minimize(objective, start, method="Nelder-Mead",
                    options={"maxiter": 400 * m, "xatol": 1e-6, "fatol": 1e-9})
  refined = ratio(basis @ (result.x[:m] + 1j * result.x[m:]))
  return kappa2, float(min(min(ratios), refined))


def _norm_for(spec: WeightedNormSpec, profile: ShearProfile, geometry: Optional[ParamGeometry],
        grid: Grid, k: int) -> NormOperator:
  if spec.kind == "H1k":
    return NormOperator.build(spec, grid, k=k)
  if geometry is None:
    raise ValueError("the X norm needs the parameter geometry")
  return NormOperator.build(spec, grid, weights(profile, geometry, spec.j, grid, enforce=False))


def lap_constant(profile: ShearProfile,
         point: SpectralPoint,
         spec: WeightedNormSpec,
         grid: Grid,
         T: Union[TOperator, NDArray, None] = None,
         geometry: Optional[ParamGeometry] = None,
         c_dagger: float = C_DAGGER,
         kappa_min: float = KAPPA_MIN,
         sigma_sharp: float = SIGMA_SHARP,
         threads: Optional[int] = None) -> LapReport:
  """Lower bound κ of ‖h + T_Θh‖ / ‖h‖ at one spectral point."""
  if geometry is None and profile.has_critical_structure:
    geometry = param_geometry(profile, point, c_dagger=c_dagger)
  if T is None:
    T = assemble_T(profile, point, grid, geometry=geometry, c_dagger=c_dagger, threads=threads)
  operator = T if isinstance(T, TOperator) else None
  matrix = operator.matrix if operator is not None else np.asarray(T, dtype=complex)

  norm = _norm_for(spec, profile, geometry, grid, point.k)
  kappa2, kappa_mixed = lap_kappa(matrix, norm)
  pieces = {}
  if operator is not None and operator.pieces:
    pieces = {name: operator_norm(piece, norm) for name, piece in operator.pieces.items()}
  regime = operator.regime if operator is not None else (geometry.regime if geometry else "synthetic")
  row = LapRow(lam=point.lam, regime=regime, kappa2=kappa2, kappa_mixed=kappa_mixed,
               t_norm=operator_norm(matrix, norm), pieces=pieces,
               identity_error=operator.identity_error if operator is not None else 0.0, norm=spec.label)
  logger.debug(f"LAP lambda={point.lam}: kappa2={kappa2:.4g} kappa_mixed={kappa_mixed:.4g}")
  return LapReport(rows=[row], norm=spec.label, sigma_sharp=sigma_sharp, kappa_min=kappa_min)


def lambda_grid(profile: ShearProfile,
        k: int,
        nu: float,
        coarse_spacing: Optional[float] = None,
        refined_spacing: Optional[float] = None,
        span: Optional[tuple[float, float]] = None) -> NDArray[np.float64]:
  """Coarse grid of spacing δ0²/8 over the range of b joined with grids of
  spacing ε^{1/2}/8 inside each Σ_{j,δ0}."""
  profile.require_critical()
  eps = nu / k
  coarse_spacing = coarse_spacing or profile.delta0 ** 2 / 8
  refined_spacing = refined_spacing or np.sqrt(eps) / 8
  lo, hi = span or profile.b_range
  parts = [np.arange(lo, hi + coarse_spacing / 2, coarse_spacing)]
  for j, value in enumerate(profile.critical_values):
    half = profile.sigma_halfwidth(j)
    count = int(np.floor(half / refined_spacing))
    parts.append(value + refined_spacing * np.arange(-count, count + 1))
  return np.unique(np.round(np.concatenate(parts), 14))


def lap_scan(profile: ShearProfile,
       grid: Grid,
       k: int,
       nu: float,
       alpha: float,
       lambdas: Sequence[float],
       spec: WeightedNormSpec,
       c_dagger: float = C_DAGGER,
       kappa_min: float = KAPPA_MIN,
       sigma_sharp: float = SIGMA_SHARP,
       threads: Optional[int] = None,
       progress: bool = False) -> LapReport:
  """lap_constant over a λ grid.

  `spec` applies inside Σ_{j,δ0}, the X norm following the nearest critical
  point. Points outside both Σ_{j,δ0}, or with α ≥ δ0, are measured in H¹_k.
  The report's `norm` joins the row labels in order of appearance.
  """

  def one(lam: float) -> LapRow:
    point = SpectralPoint(lam=float(lam), alpha=alpha, nu=nu, k=k)
    geometry = param_geometry(profile, point, c_dagger=c_dagger)
    if not geometry.degenerate:
      local = WeightedNormSpec.h1k(k)
    elif spec.kind == "X":
      local = dataclasses.replace(spec, j=geometry.nearest)
    else:
      local = spec
    report = lap_constant(profile, point, local, grid, geometry=geometry, c_dagger=c_dagger,
                          kappa_min=kappa_min, sigma_sharp=sigma_sharp, threads=1)
    return report.rows[0]

  lambdas = list(lambdas)
  logger.info(f"LAP scan over {len(lambdas)} lambda values (k={k}, nu={nu}, alpha={alpha:.3g})")
  rows = parallel_map(one, lambdas, threads=threads, desc="lap scan", progress=progress)
  label = "+".join(dict.fromkeys(row.norm for row in rows)) or spec.label
  report = LapReport(rows=rows, norm=label, sigma_sharp=sigma_sharp, kappa_min=kappa_min)
  if rows:
    logger.info(f"LAP scan done: kappa={report.kappa:.4g} passed={report.passed}")
  return report


def calibrate_c_dagger(profile: ShearProfile,
             grid: Grid,
             points: Sequence[SpectralPoint],
             gamma: float = GAMMA,
             start: float = C_DAGGER,
             growth: float = 1.5,
             target: float = 0.5,
             max_steps: int = 40) -> tuple[float, float]:
  """Smallest C† on the ×`growth` ladder with ‖T_v1‖ + ‖T_v2‖ <= `target` on X^{0,−γ}.

  Returns (C†, worst piece norm). The ladder starts at `start`, clipped to
  the largest value keeping δ(Λ) admissible at every point.

  Raises:
    CalibrationFailure: δ(Λ) leaves its admissible range before the target is met.
  """
  profile.require_critical()
  limit = min(1 / 8, 1.5 * profile.delta0)
  ceiling = np.inf
  for point in points:
    base = param_geometry(profile, point, c_dagger=0.0)
    if base.degenerate:
      ceiling = min(ceiling, (limit - base.delta) / point.epsilon ** 0.25)
  if not ceiling > 0:
    raise CalibrationFailure(start, float("inf"))

  c_dagger = min(start, ceiling)
  worst = 0.0
  for _ in range(max_steps):
    worst = 0.0
    for point in points:
      geometry = param_geometry(profile, point, c_dagger=c_dagger)
      if not geometry.degenerate:
        continue
      operator = assemble_T(profile, point, grid, geometry=geometry, c_dagger=c_dagger)
      spec = WeightedNormSpec.level(0, j=operator.j, gamma=gamma)
      norm = _norm_for(spec, profile, geometry, grid, point.k)
      worst = max(worst, operator_norm(operator.pieces["v1"], norm) + operator_norm(operator.pieces["v2"], norm))
    logger.debug(f"C_dagger={c_dagger:.4g}: viscous pieces {worst:.4g}")
    if worst <= target:
      logger.info(f"Calibrated C_dagger={c_dagger:.4g} (viscous pieces {worst:.4g})")
      return float(c_dagger), float(worst)
    c_dagger *= growth
    if c_dagger > ceiling:
      raise CalibrationFailure(c_dagger / growth, worst)
  raise CalibrationFailure(c_dagger, worst)


######################################## Good derivative ########################################


@dataclass(frozen=True, eq=False)
class LambdaDerivative:
  lam: float
  coefficient: NDArray[np.float64]
  active: bool
  first: NDArray[np.complex128]
  second: NDArray[np.complex128]


def derivative_coefficient(profile: ShearProfile, lam: float, epsilon: float,
               grid: Grid) -> NDArray[np.float64]:
  """a(y, λ) = Π_j [1 − φ0((y − y_j*)/δ2(λ))] / b'(y)."""
  profile.require_critical()
  delta1 = 8 * min(np.sqrt(abs(lam - v) / abs(c)) for v, c in zip(profile.critical_values, profile.curvatures))
  delta2 = delta1 / 64
  product = np.ones(grid.n)
  if delta2 == 0:
    return np.zeros(grid.n)
  for y_star in profile.critical_points:
    product *= 1.0 - phi0(periodic_offset(grid.nodes, y_star, grid.period) / delta2)
  return np.divide(product, profile.on(grid, 1), out=np.zeros(grid.n), where=product > 0)


def derivative_active(profile: ShearProfile, lam: float, epsilon: float) -> bool:
  """D_λ carries the a∂_y term only for λ inside b(𝕋) at distance >= 10ε^{1/2} from both critical values."""
  lo, hi = profile.b_range
  gap = min(abs(lam - v) for v in profile.critical_values)
  return bool(lo < lam < hi and gap >= 10 * np.sqrt(epsilon))


def good_derivative(samples: ArrayLike,
          lambdas: ArrayLike,
          profile: ShearProfile,
          point: SpectralPoint,
          index: int) -> LambdaDerivative:
  """D_λ f and D²_λ f at `lambdas[index]` from samples f(·, λ_i) (rows).

  Raises:
    StencilOutOfRange: fewer than two λ nodes on either side of `index`.
  """
  samples = np.asarray(samples, dtype=complex)
  lambdas = np.asarray(lambdas, dtype=float)
  count = len(lambdas)
  if index < 2 or index + 2 >= count:
    raise StencilOutOfRange(index, count)
  steps = np.diff(lambdas[index - 2:index + 3])
  dl = steps[0]
  if not np.allclose(steps, dl, rtol=1e-6, atol=0.0):
    raise ValueError("good_derivative needs a uniform lambda stencil")

  grid = grid_for(samples[index], profile.period)
  eps = point.epsilon
  lam = float(lambdas[index])
  stencil = samples[index - 2:index + 3]
  f_l = _FIRST @ stencil / dl
  f_ll = _SECOND @ stencil / dl ** 2

  active = derivative_active(profile, lam, eps)
  if not active:
    return LambdaDerivative(lam=lam, coefficient=np.zeros(grid.n), active=False, first=f_l, second=f_ll)

  coeffs = np.stack([derivative_coefficient(profile, float(l), eps, grid) for l in lambdas[index - 2:index + 3]])
  a = coeffs[2]
  a_l = _FIRST @ coeffs / dl
  a_y = grid.fourier_diff(a, 1).real
  f = stencil[2]
  f_y = grid.fourier_diff(f, 1)
  f_yy = grid.fourier_diff(f, 2)
  f_ly = grid.fourier_diff(f_l, 1)

  first = f_l + a * f_y
  second = f_ll + a_l * f_y + 2 * a * f_ly + a * a_y * f_y + a ** 2 * f_yy
  return LambdaDerivative(lam=lam, coefficient=a, active=True, first=first, second=second)


######################################## Embedded eigenvalues ########################################


@dataclass(frozen=True, eq=False)
class EmbeddedScan:
  lambdas: NDArray[np.float64]
  smallest_singular: NDArray[np.float64]
  roots: list[list[float]]
  discrete: NDArray[np.complex128]

  @property
  def floor(self) -> float:
    return float(np.min(self.smallest_singular)) if len(self.smallest_singular) else float("nan")

  def table(self) -> list[dict[str, Any]]:
    return [{"lambda": float(l), "smallest_singular": float(s), "roots": r}
            for l, s, r in zip(self.lambdas, self.smallest_singular, self.roots)]


def _roots(profile: ShearProfile, lam: float) -> list[float]:
  if profile.has_critical_structure:
    return crossing_points(profile, lam)
  return []


def rayleigh_operator(profile: ShearProfile, k: int, lam: float, grid: Grid) -> NDArray[np.complex128]:
  """(k² − ∂²) + P.V. b''/(b − λ) + iπ Σ_{b(z)=λ} b''(z)/|b'(z)| δ(y − z).

  The principal value drops nodes within one cell of each root; the delta
  is an impulse of height 1/h at the nearest node acting on ψ(z).
  """
  b = profile.on(grid)
  b2 = profile.on(grid, 2)
  roots = _roots(profile, lam)
  excluded = np.zeros(grid.n, dtype=bool)
  for z in roots:
    excluded |= periodic_distance(grid.nodes, z, grid.period) < grid.h
  potential = np.divide(b2, b - lam, out=np.zeros(grid.n), where=~excluded & (b != lam))
  matrix = (k ** 2 * np.eye(grid.n) - grid.d2 + np.diag(potential)).astype(complex)
  for z in roots:
    slope = abs(float(profile.b(z, 1)))
    if slope == 0:
      continue
    row = grid.nearest_node(z)
    matrix[row] += 1j * np.pi * float(profile.b(z, 2)) / slope / grid.h * grid.interpolation_weights(z)[0]
  return matrix


def embedded_eigenvalue_scan(profile: ShearProfile,
               k: int,
               lambdas: Sequence[float],
               grid: Grid,
               exclusion: float = 0.0,
               tolerance: float = 1e-6,
               threads: Optional[int] = None,
               progress: bool = False) -> EmbeddedScan:
  """Smallest singular value of the principal-value Rayleigh operator per λ,
  plus the eigenvalues of the inviscid L_k off the band [min b, max b]."""
  values = np.asarray([l for l in lambdas
                       if not profile.has_critical_structure
                       or min(abs(l - v) for v in profile.critical_values) > exclusion], dtype=float)
  if len(values) < len(lambdas):
    logger.info(f"embedded scan: {len(lambdas) - len(values)} lambda value(s) inside the exclusion radius dropped")

  def one(lam: float) -> float:
    return float(sla.svdvals(rayleigh_operator(profile, k, lam, grid))[-1])

  smallest = np.asarray(parallel_map(one, values, threads=threads, desc="embedded scan", progress=progress))
  eigenvalues = sla.eigvals(assemble_Lk(profile, k, grid))
  lo, hi = profile.b_range
  off = (np.abs(eigenvalues.imag) > tolerance) | (eigenvalues.real < lo - tolerance) | (eigenvalues.real > hi + tolerance)
  discrete = eigenvalues[off]
  discrete = discrete[np.argsort(np.abs(discrete.imag))]
  if len(discrete):
    logger.warning(f"inviscid L_{k} has {len(discrete)} eigenvalue(s) off the band")
  return EmbeddedScan(lambdas=values, smallest_singular=smallest,
                      roots=[_roots(profile, l) for l in values], discrete=discrete)
