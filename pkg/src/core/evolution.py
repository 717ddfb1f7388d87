"""Time evolution of one x-Fourier mode.

Two independent routes: the direct route integrates
∂_tω_k = −ν(k² − ∂²)ω_k − ikbω_k + ikb''Δ_k^{-1}ω_k with the dense matrix
exponential (or BDF stepping on large grids); the contour route synthesizes
ω_k(t) from spectral densities sampled on the line λ + iα.
"""
from utils.logging import get_logger
logger = get_logger(__name__)

from dataclasses import dataclass, field
from math import factorial
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import solve_ivp

from constant import (C_SPLIT, EXPM_MAX_N, EXPM_TOL, LAMBDA_MARGIN, SIGMA_SHARP,
                      SUBTRACTION_ORDER, TAIL_TOL)
from core.errors import NearSingular, NodeFailure, StepRejection, TailTooLarge
from core.grid import Grid, grid_for
from core.profile import ShearProfile
from core.resolvent import DensitySolver, assemble_Lk, semigroup_generator
from utils.utils import make_batch, parallel_map


######################################## State ########################################


@dataclass(frozen=True, eq=False)
class EvolutionState:
  """ω_k(t, y) and ψ_k(t, y) on a time grid, rows indexed by time."""

  k: int
  nu: float
  grid: Grid
  times: NDArray[np.float64]
  omega: NDArray[np.complex128]
  psi: NDArray[np.complex128]
  route: str
  splits: dict[str, NDArray[np.complex128]] = field(default_factory=dict)
  error_estimate: Optional[NDArray[np.float64]] = None
  tail: Optional[NDArray[np.float64]] = None

  @property
  def ux(self) -> NDArray[np.complex128]:
    """u^x_k = −∂_yψ_k."""
    return -self.grid.fourier_diff(self.psi, 1, axis=1)

  @property
  def uy(self) -> NDArray[np.complex128]:
    """u^y_k = ikψ_k."""
    return 1j * self.k * self.psi

  def helmholtz_residual(self) -> float:
    applied = self.grid.apply_helmholtz(self.psi, self.k, axis=1)
    scale = max(float(np.max(np.abs(self.omega))), 1e-300)
    return float(np.max(np.abs(applied - self.omega)) / scale)

  def norms(self) -> NDArray[np.float64]:
    """‖ω_k(t)‖_{L²} per stored time."""
    return np.sqrt(self.grid.h * np.sum(np.abs(self.omega) ** 2, axis=1))


def _state(grid: Grid, k: int, nu: float, times: NDArray, omega: NDArray, route: str, **extra) -> EvolutionState:
  psi = grid.invert_helmholtz(omega, k, axis=1)
  return EvolutionState(k=k, nu=nu, grid=grid, times=times, omega=omega, psi=psi, route=route, **extra)


######################################## Direct route ########################################


def evolve_direct(profile: ShearProfile,
          k: int,
          nu: float,
          omega0k: ArrayLike,
          t_grid: Sequence[float],
          method: str = "auto",
          tol: float = EXPM_TOL) -> EvolutionState:
  """ω_k(t) = exp(t·G)ω_{0k} with G the linearized generator.

  `method` is "expm" (dense scaling-and-squaring, one exponential per distinct
  time step), "implicit" (BDF) or "auto" (expm up to EXPM_MAX_N points).

  Raises:
    StepRejection: the implicit integrator failed.
  """
  omega0 = np.asarray(omega0k, dtype=complex)
  grid = grid_for(omega0, profile.period)
  times = np.asarray(t_grid, dtype=float)
  if np.any(times < 0):
    raise ValueError("times must be non-negative")
  generator = semigroup_generator(profile, k, nu, grid)
  if method == "auto":
    method = "expm" if grid.n <= EXPM_MAX_N else "implicit"
  logger.debug(f"direct evolution k={k} nu={nu} N={grid.n} method={method} steps={len(times)}")

  omega = np.empty((len(times), grid.n), dtype=complex)
  if method == "expm":
    order = np.argsort(times, kind="stable")
    steps: dict[float, NDArray] = {}
    current, t_prev = omega0.copy(), 0.0
    for i in order:
      dt = float(times[i] - t_prev)
      if dt > 0:
        key = round(dt, 12)
        if key not in steps:
          steps[key] = sla.expm(dt * generator)
        current = steps[key] @ current
        t_prev = float(times[i])
      omega[i] = omega0 if times[i] == 0 else current
  elif method == "implicit":
    result = solve_ivp(lambda t, y: generator @ y, (0.0, float(times.max(initial=0.0))), omega0,
                       method="BDF", t_eval=np.sort(times), jac=generator,
                       rtol=tol, atol=tol * max(np.linalg.norm(omega0), 1e-300))
    if not result.success or not np.all(np.isfinite(result.y)):
      raise StepRejection(result.message)
    omega[np.argsort(times, kind="stable")] = result.y.T
  else:
    raise ValueError(f"unknown method '{method}'")
  return _state(grid, k, nu, times, omega, route="direct")


######################################## Contour route ########################################


@dataclass(frozen=True)
class ContourPlan:
  """Trapezoid on [−λ_max, λ_max] at `spacing`, refined once by halving.

  The synthesis subtracts `order` terms of the large-|λ| expansion of the
  resolvent around c = α − 1 and adds their exact time-domain values back.
  """

  k: int
  nu: float
  alpha: float
  spacing: float
  lambda_max: float
  t_max: float
  order: int = SUBTRACTION_ORDER
  tail_tol: float = TAIL_TOL

  @property
  def shift(self) -> float:
    return self.alpha - 1.0

  def nodes(self, level: int = 1) -> NDArray[np.float64]:
    step = self.spacing / 2 ** level
    count = int(round(2 * self.lambda_max / step))
    return -self.lambda_max + step * np.arange(count + 1)

  def weights(self, level: int = 1) -> NDArray[np.float64]:
    step = self.spacing / 2 ** level
    w = np.full(len(self.nodes(level)), step)
    w[0] = w[-1] = step / 2
    return w


def contour_plan(profile: ShearProfile,
         k: int,
         nu: float,
         t_max: float,
         alpha: Optional[float] = None,
         margin: float = LAMBDA_MARGIN,
         horizon: Optional[float] = None,
         order: int = SUBTRACTION_ORDER,
         tail_tol: float = TAIL_TOL,
         sigma_sharp: float = SIGMA_SHARP) -> ContourPlan:
  """Node spacing min(π/(8kt_max), 2π/(k·horizon)) and λ_max >= max|b| + margin.

  The trapezoid sum aliases the solution at time t + 2π/(kΔλ), damped by
  e^{−2πα/Δλ}; `horizon` pushes that alias past the decay time when α <= 0.
  """
  eps = nu / k
  if alpha is None:
    alpha = -sigma_sharp * np.sqrt(eps)
  if alpha < -sigma_sharp * np.sqrt(eps):
    raise ValueError(f"alpha={alpha} is below -sigma_sharp*sqrt(nu/k)")
  t_max = max(float(t_max), 1e-12)
  spacing = np.pi / (8 * k * t_max)
  if horizon is not None:
    spacing = min(spacing, 2 * np.pi / (k * horizon))
  b_max = max(abs(v) for v in profile.b_range) if profile.has_critical_structure else abs(float(profile.b(0.0)))
  half = int(np.ceil((b_max + margin) / spacing))
  return ContourPlan(k=k, nu=nu, alpha=float(alpha), spacing=float(spacing),
                     lambda_max=float(half * spacing), t_max=t_max, order=order, tail_tol=tail_tol)


@dataclass(frozen=True, eq=False)
class ContourData:
  """Densities R(λ_n) = (iλ_n − α + L)^{-1}ω_{0k} at every fine node."""

  plan: ContourPlan
  grid: Grid
  nodes: NDArray[np.float64]
  densities: NDArray[np.complex128]
  expansion: NDArray[np.complex128]


def sample_density(profile: ShearProfile,
           grid: Grid,
           k: int,
           nu: float,
           omega0k: ArrayLike,
           plan: ContourPlan,
           threads: Optional[int] = None,
           progress: bool = False,
           block: int = 64) -> ContourData:
  """Spectral densities on the fine node set, one Schur factorization shared by all nodes.

  Raises:
    NodeFailure: the resolvent is singular at a node.
  """
  omega0 = np.asarray(omega0k, dtype=complex)
  solver = DensitySolver.build(profile, grid, k, nu, plan.alpha, sigma=np.inf)
  projected = solver.project(omega0)
  nodes = plan.nodes(level=1)

  def solve_block(indices: list[int]) -> NDArray[np.complex128]:
    out = np.empty((len(indices), grid.n), dtype=complex)
    for row, i in enumerate(indices):
      try:
        out[row] = solver.omega(float(nodes[i]), projected)
      except NearSingular as e:
        raise NodeFailure(float(nodes[i]), e) from e
    return out

  blocks = parallel_map(solve_block, make_batch(list(range(len(nodes))), size=block),
                        threads=threads, desc="contour nodes", progress=progress)
  densities = np.concatenate(blocks, axis=0)

  shifted = assemble_Lk(profile, k, grid, nu) - plan.shift * np.eye(grid.n)
  expansion = [omega0]
  for _ in range(plan.order - 1):
    expansion.append(shifted @ expansion[-1])
  logger.debug(f"sampled {len(nodes)} contour nodes on [-{plan.lambda_max:.3g}, {plan.lambda_max:.3g}]")
  return ContourData(plan=plan, grid=grid, nodes=nodes, densities=densities, expansion=np.array(expansion))


def _remainder(data: ContourData) -> NDArray[np.complex128]:
  """Q(λ) = −R(λ) − Σ_m g_m/(α − iλ − c)^{m+1}."""
  plan = data.plan
  denominator = (plan.alpha - 1j * data.nodes - plan.shift)[:, None]
  q = -data.densities.copy()
  for m, g in enumerate(data.expansion):
    q -= g[None, :] / denominator ** (m + 1)
  return q


def _synthesize(data: ContourData, remainder: NDArray, t: float) -> tuple[NDArray, float, float]:
  """e^{sL}ω_{0k} at s = kt, with the halving difference and the tail bound."""
  plan = data.plan
  s = plan.k * t
  if s == 0:
    return data.expansion[0].copy(), 0.0, 0.0
  phase = np.exp(-1j * data.nodes * s)
  fine = plan.weights(level=1) * phase
  coarse_weights = np.zeros(len(data.nodes))
  coarse_weights[::2] = plan.weights(level=0)
  coarse = coarse_weights * phase

  exact = sum(np.exp(plan.shift * s) * s ** m / factorial(m) * g for m, g in enumerate(data.expansion))
  scale = np.exp(plan.alpha * s) / (2 * np.pi)
  value = exact + scale * (fine @ remainder)
  other = exact + scale * (coarse @ remainder)

  norm = max(float(np.linalg.norm(value)), 1e-300)
  error = float(np.linalg.norm(value - other)) / norm
  reach = min(plan.lambda_max / plan.order, 1.0 / s)
  tail = scale * reach * (np.abs(remainder[0]) + np.abs(remainder[-1]))
  return value, error, float(np.linalg.norm(tail)) / norm


def evolve_contour(profile: ShearProfile,
           k: int,
           nu: float,
           omega0k: ArrayLike,
           plan: ContourPlan,
           t_grid: Sequence[float],
           data: Optional[ContourData] = None,
           threads: Optional[int] = None,
           progress: bool = False) -> EvolutionState:
  """ω_k(t) = −(1/2π)e^{αkt}e^{−νk²t}∫e^{−ikλt}ω_{k,ν}(·, λ + iα)dλ.

  Raises:
    NodeFailure: resolvent failure at a node.
    TailTooLarge: the truncation tail exceeds `plan.tail_tol` of the result.
  """
  omega0 = np.asarray(omega0k, dtype=complex)
  grid = grid_for(omega0, profile.period)
  times = np.asarray(t_grid, dtype=float)
  if data is None:
    data = sample_density(profile, grid, k, nu, omega0, plan, threads=threads, progress=progress)
  remainder = _remainder(data)

  omega = np.empty((len(times), grid.n), dtype=complex)
  errors = np.zeros(len(times))
  tails = np.zeros(len(times))
  for i, t in enumerate(times):
    value, errors[i], tails[i] = _synthesize(data, remainder, float(t))
    if tails[i] > plan.tail_tol:
      raise TailTooLarge(tails[i], plan.tail_tol)
    omega[i] = np.exp(-nu * k ** 2 * t) * value
  worst = float(errors.max(initial=0.0))
  if worst > 1e-3:
    logger.warning(f"contour quadrature under-resolved: halving changes the result by {worst:.2e}")
  return _state(grid, k, nu, times, omega, route="contour", error_estimate=errors, tail=tails)


######################################## Splits ########################################


def local_window(profile: ShearProfile, grid: Grid, k: int, nu: float,
         c_split: float = C_SPLIT) -> NDArray[np.float64]:
  """Half-width c_split·(min_j|b(y) − b(y_j*)| + (ν/k)^{1/2}) of the local λ-window per node."""
  b = profile.on(grid)
  if profile.has_critical_structure:
    gap = np.min([np.abs(b - v) for v in profile.critical_values], axis=0)
  else:
    gap = np.zeros(grid.n)
  return c_split * (gap + np.sqrt(nu / k))


def split_local_nonlocal(data: ContourData, profile: ShearProfile, t: float,
             c_split: float = C_SPLIT) -> dict[str, NDArray[np.complex128]]:
  """Partition the raw density quadrature at time t by |λ − b(y)| < window(y).

  Returns omega/psi fields `*_loc`, `*_nloc` and `*_full` with loc + nloc = full.
  """
  plan, grid = data.plan, data.grid
  k, nu = plan.k, plan.nu
  s = k * t
  window = local_window(profile, grid, k, nu, c_split)
  local = np.abs(data.nodes[:, None] - profile.on(grid)[None, :]) < window[None, :]
  weights = plan.weights(level=1) * np.exp(-1j * data.nodes * s)
  factor = -np.exp(plan.alpha * s - nu * k ** 2 * t) / (2 * np.pi)
  streams = grid.invert_helmholtz(data.densities, k, axis=1)

  out = {}
  for name, values in (("omega", data.densities), ("psi", streams)):
    loc = factor * np.einsum("n,nm->m", weights, np.where(local, values, 0.0))
    nloc = factor * np.einsum("n,nm->m", weights, np.where(local, 0.0, values))
    out[f"{name}_loc"] = loc
    out[f"{name}_nloc"] = nloc
    out[f"{name}_full"] = loc + nloc
  return out


######################################## Physical space ########################################


@dataclass(frozen=True, eq=False)
class PhysicalFields:
  times: NDArray[np.float64]
  x: NDArray[np.float64]
  y: NDArray[np.float64]
  omega: NDArray[np.float64]
  psi: NDArray[np.float64]
  ux: NDArray[np.float64]
  uy: NDArray[np.float64]


def synthesize_xy(modes: Sequence[EvolutionState], x_grid: ArrayLike) -> PhysicalFields:
  """ω(t, x, y) = 2Re Σ_k e^{ikx}ω_k(t, y), with u = (−∂_yψ, ∂_xψ). Arrays are (time, x, y)."""
  if not modes:
    raise ValueError("at least one mode is required")
  x = np.asarray(x_grid, dtype=float)
  first = modes[0]
  for mode in modes[1:]:
    if mode.grid != first.grid or not np.array_equal(mode.times, first.times):
      raise ValueError("modes must share the y grid and the time grid")

  shape = (len(first.times), len(x), first.grid.n)
  omega, psi, ux, uy = (np.zeros(shape) for _ in range(4))
  for mode in modes:
    wave = np.exp(1j * mode.k * x)[None, :, None]
    omega += 2 * np.real(wave * mode.omega[:, None, :])
    psi += 2 * np.real(wave * mode.psi[:, None, :])
    ux += 2 * np.real(wave * mode.ux[:, None, :])
    uy += 2 * np.real(wave * mode.uy[:, None, :])
  return PhysicalFields(times=first.times, x=x, y=first.grid.nodes, omega=omega, psi=psi, ux=ux, uy=uy)
