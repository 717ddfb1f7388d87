"""Rate extraction, vorticity-depletion profiling and the run manifest."""
from utils.logging import get_logger
logger = get_logger(__name__)

from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from constant import BOOTSTRAP, GAMMA, PLATEAU_SPREAD, SIGMA_SHARP, T_MIN, VERSION
from core.errors import NoPlateaus, WindowTooShort
from core.evolution import EvolutionState
from core.grid import periodic_distance
from core.profile import ShearProfile


######################################## Fits ########################################


@dataclass(frozen=True)
class RateFit:
  """Fitted power-law exponent or exponential rate with its 95% bootstrap band."""

  quantity: str
  kind: str
  window: tuple[float, float]
  value: float
  band: tuple[float, float]
  r2: float
  points: int
  residual: float
  target: Optional[float] = None

  @property
  def deviation(self) -> Optional[float]:
    return None if self.target is None else self.value - self.target

  def to_dict(self) -> dict[str, Any]:
    out = asdict(self)
    out["deviation"] = self.deviation
    return out


def _window(t: NDArray, values: NDArray, window: tuple[float, Optional[float]]) -> NDArray[np.bool_]:
  lo, hi = window
  hi = np.inf if hi is None else hi
  mask = (t >= lo) & (t <= hi) & np.isfinite(values) & (values > 0)
  count = int(np.count_nonzero(mask))
  if count < 3:
    raise WindowTooShort(count, (lo, hi))
  return mask


def _linear_fit(x: NDArray, y: NDArray, seed: Optional[int], resamples: int) -> tuple[float, tuple[float, float], float, float]:
  slope, intercept = np.polyfit(x, y, 1)
  predicted = slope * x + intercept
  total = float(np.sum((y - y.mean()) ** 2))
  residual = float(np.sum((y - predicted) ** 2))
  r2 = 1.0 - residual / total if total > 0 else 1.0

  rng = np.random.default_rng(seed)
  slopes = []
  n = len(x)
  for _ in range(resamples):
    index = rng.integers(0, n, n)
    if np.unique(x[index]).size < 2:
      continue
    slopes.append(np.polyfit(x[index], y[index], 1)[0])
  if slopes:
    band = (float(np.percentile(slopes, 2.5)), float(np.percentile(slopes, 97.5)))
  else:
    band = (float(slope), float(slope))
  return float(slope), band, r2, float(np.sqrt(residual / n))


def fit_power_law(t: ArrayLike, values: ArrayLike,
          window: tuple[float, Optional[float]] = (T_MIN, None),
          quantity: str = "",
          target: Optional[float] = None,
          seed: Optional[int] = None,
          resamples: int = BOOTSTRAP) -> RateFit:
  """Exponent p of values ≈ A·t^p by log-log least squares.

  Raises:
    WindowTooShort: fewer than three positive samples inside the window.
  """
  t, values = np.asarray(t, dtype=float), np.asarray(values, dtype=float)
  mask = _window(t, values, window) & (t > 0)
  slope, band, r2, residual = _linear_fit(np.log(t[mask]), np.log(values[mask]), seed, resamples)
  return RateFit(quantity=quantity, kind="power", window=(float(t[mask].min()), float(t[mask].max())),
                 value=slope, band=band, r2=r2, points=int(mask.sum()), residual=residual, target=target)


def fit_exponential(t: ArrayLike, values: ArrayLike,
          window: tuple[float, Optional[float]] = (T_MIN, None),
          quantity: str = "",
          target: Optional[float] = None,
          seed: Optional[int] = None,
          resamples: int = BOOTSTRAP) -> RateFit:
  """Decay rate r of values ≈ A·e^{−rt} by semilog least squares."""
  t, values = np.asarray(t, dtype=float), np.asarray(values, dtype=float)
  mask = _window(t, values, window)
  slope, band, r2, residual = _linear_fit(t[mask], np.log(values[mask]), seed, resamples)
  return RateFit(quantity=quantity, kind="exponential", window=(float(t[mask].min()), float(t[mask].max())),
                 value=-slope, band=(-band[1], -band[0]), r2=r2, points=int(mask.sum()),
                 residual=residual, target=target)


def critical_weight(profile: ShearProfile, y: ArrayLike, gamma: float = GAMMA) -> NDArray[np.float64]:
  """1 / (|y − y_1*|^{γ−2} + |y − y_2*|^{γ−2}), vanishing at the critical points."""
  with np.errstate(divide="ignore"):
    total = sum(periodic_distance(y, y_star, profile.period) ** (gamma - 2) for y_star in profile.critical_points)
  return np.where(np.isfinite(total), 1.0 / total, 0.0)


def fit_rates(state: EvolutionState,
        profile: ShearProfile,
        window: tuple[float, Optional[float]] = (T_MIN, None),
        gamma: float = GAMMA,
        sigma_sharp: float = SIGMA_SHARP,
        seed: Optional[int] = None,
        resamples: int = BOOTSTRAP) -> list[RateFit]:
  """Damping exponents of the weighted sup|ψ_k|, sup|u^y_k| and sup|u^x_k|, and
  the enhanced-dissipation rate of e^{νk²t}‖ω_k(t)‖₂."""
  t = state.times
  weight = critical_weight(profile, state.grid.nodes, gamma)[None, :]
  common = dict(window=window, seed=seed, resamples=resamples)
  fits = [
    fit_power_law(t, np.max(weight * np.abs(state.psi), axis=1), quantity="psi_weighted_sup", target=-2.0, **common),
    fit_power_law(t, np.max(weight * np.abs(state.uy), axis=1), quantity="uy_weighted_sup", target=-2.0, **common),
    fit_power_law(t, np.max(np.abs(state.ux), axis=1), quantity="ux_sup", target=-1.0, **common),
    fit_exponential(t, np.exp(state.nu * state.k ** 2 * t) * state.norms(), quantity="enhanced_dissipation",
                    target=sigma_sharp * np.sqrt(state.nu), **common),
  ]
  for fit in fits:
    logger.info(f"{fit.quantity}: {fit.kind} {fit.value:.4g} [{fit.band[0]:.4g}, {fit.band[1]:.4g}] R2={fit.r2:.3f}")
  return fits


######################################## Depletion ########################################


@dataclass(frozen=True)
class DepletionProfile:
  nus: tuple[float, ...]
  plateaus: tuple[float, ...]
  spreads: tuple[float, ...]
  reference: tuple[float, ...]
  slope: float
  reference_slope: float
  gamma: float
  point: float
  j: int

  def to_dict(self) -> dict[str, Any]:
    return asdict(self)


def plateau(t: NDArray, series: NDArray, fraction: float = 0.25) -> tuple[float, float]:
  """Median over the last `fraction` of the run and the relative spread of its two halves."""
  start = t[-1] - fraction * (t[-1] - t[0])
  tail = series[t >= start]
  if len(tail) < 2:
    return float(np.median(tail)), 0.0
  half = len(tail) // 2
  first, second = float(np.median(tail[:half])), float(np.median(tail[half:]))
  top = max(first, second)
  return float(np.median(tail)), (abs(first - second) / top if top > 0 else 0.0)


def depletion_profile(runs: Mapping[float, EvolutionState],
            profile: ShearProfile,
            j: int = 0,
            gamma: float = GAMMA,
            offset: float = 0.0,
            spread: float = PLATEAU_SPREAD,
            fraction: float = 0.25) -> DepletionProfile:
  """Late-time plateau of |ω_k(t, y_j* + offset)|/‖ω_{0k}‖_{H³_k} per ν, regressed
  against ν in log-log next to the comparison curve (|y − y_j*| + ν^{1/4})^γ.

  Raises:
    NoPlateaus: a run is still transient (half medians differ by more than `spread`).
  """
  profile.require_critical()
  y = profile.critical_points[j] + offset
  distance = float(periodic_distance(y, profile.critical_points[j], profile.period))
  nus, plateaus, spreads, reference = [], [], [], []
  for nu in sorted(runs, reverse=True):
    state = runs[nu]
    series = np.abs(state.grid.interpolate(state.omega.T, [y])[0]) if state.omega.size else np.array([])
    scale = state.grid.hmk_norm(state.omega[0], state.k, 3)
    value, drift = plateau(state.times, series / scale, fraction)
    if drift > spread:
      raise NoPlateaus(nu, drift)
    nus.append(float(nu))
    plateaus.append(value)
    spreads.append(drift)
    reference.append((distance + nu ** 0.25) ** gamma)

  slope = reference_slope = float("nan")
  if len(nus) >= 2:
    logs = np.log(nus)
    slope = float(np.polyfit(logs, np.log(plateaus), 1)[0])
    reference_slope = float(np.polyfit(logs, np.log(reference), 1)[0])
  logger.info(f"depletion at y={y:.4g}: slope {slope:.3g} (comparison {reference_slope:.3g}) over {len(nus)} runs")
  return DepletionProfile(nus=tuple(nus), plateaus=tuple(plateaus), spreads=tuple(spreads),
                          reference=tuple(reference), slope=slope, reference_slope=reference_slope,
                          gamma=gamma, point=float(y), j=j)


######################################## Manifest ########################################


@dataclass(kw_only=True)
class RunManifest:
  """Everything needed to reproduce a run and to check its artifacts."""

  config: dict[str, Any] = field(default_factory=dict)
  profile_hash: str = ""
  grid: dict[str, Any] = field(default_factory=dict)
  constants: dict[str, Any] = field(default_factory=dict)
  version: str = VERSION
  started: str = ""
  wall_clock: float = 0.0
  status: str = "pending"
  error: Optional[str] = None
  artifacts: list[dict[str, str]] = field(default_factory=list)

  def to_dict(self) -> dict[str, Any]:
    return asdict(self)
