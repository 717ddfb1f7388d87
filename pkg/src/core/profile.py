"""Background shear flow b(y), its critical structure and parameter geometry.

A profile is built once from a descriptor (`{"family": "kolmogorov",
"period": 8.0}` or `{"family": "table", "path": ..., "period": ...}`) and is
immutable afterwards. The geometry helpers turn a spectral point
(λ, α, ν, k) into the length scales δ(Λ), δ1, δ2, the regime tag and the
weights ρ_j, ρ_{j,k} used by every weighted estimate.
"""
from utils.logging import get_logger
logger = get_logger(__name__)

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Literal, Mapping, Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.interpolate import make_interp_spline
from scipy.optimize import brentq

from constant import C_DAGGER, DELTA0_SAFETY, M_VISC, ROOT_TOL, SIGMA_SHARP
from core.errors import (AlphaOutOfRange, DeltaTooLarge, DegenerateCritical,
                         PeriodTooSmall, RegimeMismatch, WrongCriticalCount)
from core.grid import Grid, periodic_distance

Regime = Literal["nondegenerate", "alpha_dominated", "intermediate", "viscous"]

KAPPA_FLOOR = 1e-3
_SAMPLES = 4096


######################################## Cutoffs ########################################


def _smooth_step(t: NDArray) -> NDArray:
  """C^∞ step: 1 for t <= 0, 0 for t >= 1."""
  t = np.clip(t, 0.0, 1.0)
  with np.errstate(divide="ignore", over="ignore"):
    left = np.where(t < 1.0, np.exp(-1.0 / np.where(t < 1.0, 1.0 - t, 1.0)), 0.0)
    right = np.where(t > 0.0, np.exp(-1.0 / np.where(t > 0.0, t, 1.0)), 0.0)
  return left / (left + right)


def phi0(s: ArrayLike) -> NDArray[np.float64]:
  """Smooth cutoff: 1 on |s| <= 1, 0 on |s| >= 2."""
  a = np.abs(np.asarray(s, dtype=float))
  return _smooth_step(a - 1.0)


def phi_inner(s: ArrayLike) -> NDArray[np.float64]:
  """Cutoff supported in (-1, 1), equal to 1 on |s| <= 1/2."""
  return phi0(2.0 * np.asarray(s, dtype=float))


def bracket(*values: ArrayLike) -> NDArray[np.float64]:
  """Japanese bracket ⟨a, b, ...⟩ = (1 + a² + b² + ...)^{1/2}."""
  total = 1.0
  for v in values:
    total = total + np.abs(np.asarray(v)) ** 2
  return np.sqrt(total)


######################################## Profile ########################################


@dataclass(frozen=True, eq=False)
class ShearProfile:
  """Periodic shear flow with exactly two non-degenerate critical points."""

  family: str
  period: float
  _derivative: Callable[[NDArray, int], NDArray] = field(repr=False)
  critical_points: tuple[float, ...] = ()
  critical_values: tuple[float, ...] = ()
  curvatures: tuple[float, ...] = ()
  kappa: float = 0.0
  delta0: float = 0.0
  sup_norms: tuple[float, ...] = ()
  descriptor: Mapping[str, Any] = field(default_factory=dict)

  def b(self, y: ArrayLike, m: int = 0) -> NDArray[np.float64]:
    """m-th derivative of b at y (y taken modulo the period)."""
    return self._derivative(np.mod(np.asarray(y, dtype=float), self.period), m)

  def on(self, grid: Grid, m: int = 0) -> NDArray[np.float64]:
    return self.b(grid.nodes, m)

  @property
  def has_critical_structure(self) -> bool:
    return len(self.critical_points) == 2

  def require_critical(self) -> None:
    if not self.has_critical_structure:
      raise RegimeMismatch(f"profile '{self.family}' has no critical structure")

  def sigma_halfwidth(self, j: int) -> float:
    """Half-width |b''(y_j*)|·δ0²/16 of Σ_{j,δ0}."""
    self.require_critical()
    return abs(self.curvatures[j]) * self.delta0 ** 2 / 16

  def in_sigma(self, lam: float, j: int) -> bool:
    return abs(lam - self.critical_values[j]) <= self.sigma_halfwidth(j)

  @property
  def b_range(self) -> tuple[float, float]:
    if self.has_critical_structure:
      return (min(self.critical_values), max(self.critical_values))
    value = float(self.b(0.0))
    return (value, value)

  @classmethod
  def constant(cls, value: float, period: float) -> "ShearProfile":
    """b ≡ value; a test override without critical structure."""
    def derivative(y, m):
      y = np.asarray(y, dtype=float)
      return np.full(y.shape, value if m == 0 else 0.0)
    return cls(family="constant", period=float(period), _derivative=derivative,
               descriptor={"family": "constant", "value": value, "period": period})


######################################## Builders ########################################


def _kolmogorov(period: float) -> Callable[[NDArray, int], NDArray]:
  w = 2 * np.pi / period

  def derivative(y, m):
    return w ** m * np.sin(w * y + m * np.pi / 2)
  return derivative


def _table(path: Union[str, Path], period: float, order: int) -> Callable[[NDArray, int], NDArray]:
  data = np.genfromtxt(path, delimiter=",", comments="#")
  data = data[~np.isnan(data).any(axis=1)]
  y, b = data[:, 0], data[:, 1]
  keep = y < period
  y = np.append(y[keep], period)
  b = np.append(b[keep], b[keep][0])
  spline = make_interp_spline(y, b, k=order, bc_type="periodic")
  derivatives = {m: spline.derivative(m) if m else spline for m in range(order)}

  def derivative(values, m):
    if m >= order:
      raise ValueError(f"derivative {m} not available from an order-{order} spline")
    return derivatives[m](values)
  return derivative


def _find_critical_points(derivative, period: float) -> list[float]:
  xs = (np.arange(_SAMPLES) + 0.5) * period / _SAMPLES
  slope = derivative(xs, 1)
  roots = []
  for i in range(_SAMPLES):
    a, b = xs[i], xs[i + 1] if i + 1 < _SAMPLES else xs[0] + period
    fa, fb = slope[i], slope[(i + 1) % _SAMPLES]
    if fa == 0 or fa * fb > 0:
      continue
    f = lambda x: float(derivative(np.mod(np.array([x]), period), 1)[0])
    root = brentq(f, a, b, xtol=ROOT_TOL, rtol=4 * np.finfo(float).eps)
    for _ in range(2):
      curvature = float(derivative(np.mod(np.array([root]), period), 2)[0])
      if curvature == 0:
        break
      root -= f(root) / curvature
    roots.append(float(np.mod(root, period)))
  unique = []
  for r in sorted(roots):
    if not unique or periodic_distance(r, unique[-1], period) > 1e-9:
      unique.append(r)
  if len(unique) > 1 and periodic_distance(unique[0], unique[-1], period) <= 1e-9:
    unique.pop()
  return unique


def _admissible_delta0(derivative, points, curvatures, period: float) -> float:
  """Largest δ0 <= 1/8 meeting the separation and third-derivative conditions."""
  separation = float(periodic_distance(points[0], points[1], period))
  upper = min(1 / 8, separation / 10)

  def violates(delta):
    for y_star, curv in zip(points, curvatures):
      ys = y_star + np.linspace(-4 * delta, 4 * delta, 801)
      if np.max(np.abs(derivative(np.mod(ys, period), 3))) * delta >= abs(curv) / 10:
        return True
    return False

  if not violates(upper):
    return upper
  lo, hi = 0.0, upper
  for _ in range(60):
    mid = 0.5 * (lo + hi)
    lo, hi = (lo, mid) if violates(mid) else (mid, hi)
  return lo


def build_profile(spec: Union[Mapping[str, Any], "ShearProfile"]) -> ShearProfile:
  """Build a profile from its descriptor.

  Args:
    spec: mapping with `family` ("kolmogorov" or "table") and `period`;
      tables also take `path` and `order` (default 5).

  Raises:
    PeriodTooSmall: period <= 2π.
    WrongCriticalCount: the profile does not have exactly two critical points.
    DegenerateCritical: |b''(y*)| below the floor.
  """
  if isinstance(spec, ShearProfile):
    return spec
  family = str(spec.get("family", "kolmogorov")).lower()
  period = float(spec["period"])
  if period <= 2 * np.pi:
    raise PeriodTooSmall(period)

  if family == "kolmogorov":
    derivative = _kolmogorov(period)
  elif family == "table":
    derivative = _table(spec["path"], period, int(spec.get("order", 5)))
  else:
    raise ValueError(f"unknown profile family '{family}'")

  points = _find_critical_points(derivative, period)
  if len(points) != 2:
    raise WrongCriticalCount(len(points))

  values = tuple(float(derivative(np.array([p]), 0)[0]) for p in points)
  curvatures = tuple(float(derivative(np.array([p]), 2)[0]) for p in points)
  for p, c in zip(points, curvatures):
    if abs(c) < KAPPA_FLOOR:
      raise DegenerateCritical(p, c)

  xs = np.arange(_SAMPLES) * period / _SAMPLES
  max_order = 5 if family == "kolmogorov" else min(int(spec.get("order", 5)), 5)
  sup_norms = tuple(float(np.max(np.abs(derivative(xs, m)))) for m in range(max_order))
  curv = [abs(c) for c in curvatures]
  bound = min(min(curv), 1 / max(curv), 1 / max(sup_norms))
  kappa = np.floor(20 * bound) / 20 if bound >= 0.05 else bound
  kappa = float(min(kappa, 0.95))

  delta0 = DELTA0_SAFETY * _admissible_delta0(derivative, points, curvatures, period)

  profile = ShearProfile(
    family=family,
    period=period,
    _derivative=derivative,
    critical_points=tuple(points),
    critical_values=values,
    curvatures=curvatures,
    kappa=kappa,
    delta0=float(delta0),
    sup_norms=sup_norms,
    descriptor=dict(spec),
  )
  logger.info(
    f"Built {family} profile p={period}: y*={tuple(round(p, 12) for p in points)}, "
    f"kappa={kappa}, delta0={delta0:.4g}"
  )
  return profile


def profile_hash(profile: ShearProfile) -> str:
  digest = hashlib.sha256()
  digest.update(f"{profile.family}:{profile.period!r}".encode())
  xs = np.arange(256) * profile.period / 256
  digest.update(np.ascontiguousarray(profile.b(xs), dtype="<f8").tobytes())
  return digest.hexdigest()


def crossing_points(profile: ShearProfile, lam: float) -> list[float]:
  """Roots of b(y) = λ, one per monotone branch between the critical points."""
  profile.require_critical()
  y1, y2 = profile.critical_points
  branches = [(y1, y2), (y2, y1 + profile.period)]
  roots = []
  for a, b in branches:
    fa = float(profile.b(a)) - lam
    fb = float(profile.b(b)) - lam
    if fa == 0.0:
      roots.append(a)
      continue
    if fa * fb > 0:
      continue
    if fb == 0.0:
      continue
    root = brentq(lambda x: float(profile.b(x)) - lam, a, b, xtol=ROOT_TOL)
    roots.append(float(np.mod(root, profile.period)))
  return sorted(roots)


######################################## Spectral point ########################################


@dataclass(frozen=True)
class SpectralPoint:
  """Θ = (λ, α, ν, k) with ε = ν/k."""

  lam: float
  alpha: float
  nu: float
  k: int
  iota: int = 1

  def __post_init__(self):
    if int(self.k) != self.k or self.k < 1:
      raise ValueError(f"k must be a positive integer, got {self.k}")
    if not 0 < self.nu < 1:
      raise ValueError(f"nu must lie in (0, 1), got {self.nu}")
    if not self.epsilon < 1 / 8:
      raise ValueError(f"epsilon = nu/k must be below 1/8, got {self.epsilon}")

  @property
  def epsilon(self) -> float:
    return self.nu / self.k

  def check_alpha(self, sigma: float = SIGMA_SHARP) -> None:
    floor = -sigma * np.sqrt(self.epsilon)
    if self.alpha < floor:
      raise AlphaOutOfRange(self.alpha, floor)


######################################## Geometry ########################################


@dataclass(frozen=True)
class ParamGeometry:
  point: SpectralPoint
  delta: float
  delta1: float
  delta2: float
  c_dagger: float
  in_sigma: tuple[bool, ...]
  regime: Regime
  beta: float
  nearest: int
  distances: tuple[float, ...]
  delta0: float

  @property
  def degenerate(self) -> bool:
    """True when T_Θ takes its modified-Green form."""
    return self.regime != "alpha_dominated" and any(self.in_sigma)


def param_geometry(profile: ShearProfile,
          point: SpectralPoint,
          c_dagger: float = C_DAGGER,
          m_visc: float = M_VISC,
          alpha_threshold: Optional[float] = None,
          regime: Optional[Regime] = None) -> ParamGeometry:
  """δ(Λ), δ1, δ2, β, Σ-membership and the regime of a spectral point.

  `regime` forces the classification; `alpha_threshold` defaults to δ0.
  """
  profile.require_critical()
  eps = point.epsilon
  distances = tuple(abs(point.lam - v) for v in profile.critical_values)
  scaled = [np.sqrt(d / abs(c)) for d, c in zip(distances, profile.curvatures)]
  delta1 = 8 * min(scaled)
  delta2 = delta1 / 64
  delta = abs(point.alpha) ** 0.5 + c_dagger * eps ** 0.25 + delta1

  nearest = int(np.argmin(distances))
  gap = distances[nearest]
  if gap == 0:
    beta = 0.25
  else:
    beta = float(np.clip(np.log(gap) / (2 * np.log(eps)), 0.0, 0.25))

  in_sigma = tuple(profile.in_sigma(point.lam, j) for j in range(2))
  threshold = profile.delta0 if alpha_threshold is None else alpha_threshold
  if regime is None:
    if point.alpha >= threshold:
      regime = "alpha_dominated"
    elif gap <= m_visc * np.sqrt(eps):
      regime = "viscous"
    elif in_sigma[nearest]:
      regime = "intermediate"
    else:
      regime = "nondegenerate"

  return ParamGeometry(point=point, delta=float(delta), delta1=float(delta1),
                       delta2=float(delta2), c_dagger=float(c_dagger),
                       in_sigma=in_sigma, regime=regime, beta=beta,
                       nearest=nearest, distances=distances,
                       delta0=profile.delta0)


@dataclass(frozen=True, eq=False)
class WeightField:
  j: int
  k: int
  delta: float
  y_star: float
  rho: NDArray[np.float64]
  rho_k: NDArray[np.float64]
  d_jk: float
  interval: tuple[float, float]
  grid: Grid

  def in_interval(self, d: Optional[float] = None) -> NDArray[np.bool_]:
    """Mask of grid nodes inside S^j_d (default d = δ(Λ))."""
    radius = self.delta if d is None else d
    return periodic_distance(self.grid.nodes, self.y_star, self.grid.period) <= radius


def weights(profile: ShearProfile,
      geometry: ParamGeometry,
      j: int,
      grid: Grid,
      enforce: bool = True) -> WeightField:
  """ρ_j = |y − y_j*| + δ(Λ), ρ_{j,k} = min(ρ_j, 1/k), d_{j,k} = min(δ, 1/k).

  Raises:
    DeltaTooLarge: δ(Λ) > p/8 unless `enforce` is False.
  """
  profile.require_critical()
  delta = geometry.delta
  if enforce and delta > profile.period / 8:
    raise DeltaTooLarge(delta, profile.period / 8)
  k = geometry.point.k
  y_star = profile.critical_points[j]
  rho = periodic_distance(grid.nodes, y_star, grid.period) + delta
  rho_k = np.minimum(rho, 1.0 / k)
  return WeightField(j=j, k=k, delta=delta, y_star=y_star, rho=rho, rho_k=rho_k,
                     d_jk=float(min(delta, 1.0 / k)),
                     interval=(y_star - delta, y_star + delta), grid=grid)
