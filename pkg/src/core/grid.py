"""Periodic spectral grid on the circle of circumference p.

Spectral differentiation, the Helmholtz inverse Δ_k^{-1} = (∂²_y − k²)^{-1},
trigonometric interpolation and the shared periodic solver backend used by
the Airy, Green and resolvent modules.
"""
from utils.logging import get_logger
logger = get_logger(__name__)

import warnings
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Literal, Optional

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import ArrayLike, NDArray

from constant import DENSE_MAX_N, NEAR_SINGULAR_RCOND, PERIODIC_RESIDUAL_TOL
from core.errors import NearSingular, ZeroMode

ComplexField = NDArray[np.complex128]

# 6th-order centered second difference, offsets -3..3
_STENCIL6 = np.array([1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90])


def periodic_distance(y: ArrayLike, z: ArrayLike, period: float) -> NDArray[np.float64]:
  """Geodesic distance between y and z on the circle of circumference `period`."""
  d = np.mod(np.asarray(y, dtype=float) - np.asarray(z, dtype=float) + period / 2, period)
  return np.abs(d - period / 2)


def periodic_offset(y: ArrayLike, z: ArrayLike, period: float) -> NDArray[np.float64]:
  """Signed offset y - z wrapped into [-p/2, p/2)."""
  return np.mod(np.asarray(y, dtype=float) - np.asarray(z, dtype=float) + period / 2, period) - period / 2


######################################## Grid ########################################


@dataclass(frozen=True)
class Grid:
  """Uniform periodic grid y_m = m·h, m = 0..N-1, with h·N = p."""

  n: int
  period: float

  def __post_init__(self):
    if self.n < 4 or self.n % 2:
      raise ValueError(f"grid size must be even and >= 4, got {self.n}")
    if not self.period > 0:
      raise ValueError(f"period must be positive, got {self.period}")

  @property
  def h(self) -> float:
    return self.period / self.n

  @cached_property
  def nodes(self) -> NDArray[np.float64]:
    return np.arange(self.n) * self.h

  @cached_property
  def wavenumbers(self) -> NDArray[np.float64]:
    return 2 * np.pi * sfft.fftfreq(self.n, d=self.h)

  def _symbol(self, order: int) -> NDArray[np.complex128]:
    symbol = (1j * self.wavenumbers) ** order
    if order % 2:
      symbol[self.n // 2] = 0.0
    return symbol

  ########## transforms ##########

  def fourier_diff(self, field: ArrayLike, order: int = 1, axis: int = 0) -> NDArray:
    """Spectral derivative of `field` along `axis`; exact for band-limited input."""
    if order == 0:
      return np.asarray(field)
    values = np.asarray(field)
    shape = [1] * values.ndim
    shape[axis] = self.n
    symbol = self._symbol(order).reshape(shape)
    return sfft.ifft(symbol * sfft.fft(values, axis=axis), axis=axis)

  def derivative_matrix(self, order: int) -> NDArray[np.float64]:
    """Dense real circulant matrix of the spectral derivative."""
    if order == 1:
      return self.d1
    if order == 2:
      return self.d2
    return self._dense(self._symbol(order))

  def _dense(self, symbol: NDArray) -> NDArray[np.float64]:
    eye = np.eye(self.n)
    return sfft.ifft(symbol[:, None] * sfft.fft(eye, axis=0), axis=0).real

  @cached_property
  def d1(self) -> NDArray[np.float64]:
    return self._dense(self._symbol(1))

  @cached_property
  def d2(self) -> NDArray[np.float64]:
    return self._dense(self._symbol(2))

  ########## Helmholtz ##########

  def invert_helmholtz(self, omega: ArrayLike, k: int, axis: int = 0) -> NDArray:
    """ψ with (∂²_y − k²)ψ = ω, diagonal in Fourier space: ψ̂ = −ω̂/(ℓ² + k²)."""
    if k == 0:
      raise ZeroMode()
    values = np.asarray(omega)
    shape = [1] * values.ndim
    shape[axis] = self.n
    symbol = (-1.0 / (self.wavenumbers ** 2 + float(k) ** 2)).reshape(shape)
    return sfft.ifft(symbol * sfft.fft(values, axis=axis), axis=axis)

  def apply_helmholtz(self, psi: ArrayLike, k: int, axis: int = 0) -> NDArray:
    """(∂²_y − k²)ψ."""
    return self.fourier_diff(psi, 2, axis=axis) - float(k) ** 2 * np.asarray(psi)

  def helmholtz_inverse_matrix(self, k: int) -> NDArray[np.float64]:
    """Dense Δ_k^{-1}, real symmetric circulant."""
    if k == 0:
      raise ZeroMode()
    return self._dense(-1.0 / (self.wavenumbers ** 2 + float(k) ** 2))

  ########## sampling ##########

  def interpolation_weights(self, points: ArrayLike) -> NDArray[np.complex128]:
    """Rows w with w @ f equal to the trigonometric interpolant of f at `points`."""
    points = np.atleast_1d(np.asarray(points, dtype=float))
    phases = np.exp(1j * np.outer(points, self.wavenumbers))
    phases[:, self.n // 2] = np.cos(points * self.wavenumbers[self.n // 2])
    dft = sfft.fft(np.eye(self.n), axis=0)
    return (phases @ dft) / self.n

  def interpolate(self, field: ArrayLike, points: ArrayLike) -> NDArray:
    points = np.atleast_1d(np.asarray(points, dtype=float))
    coeffs = sfft.fft(np.asarray(field), axis=0) / self.n
    phases = np.exp(1j * np.outer(points, self.wavenumbers))
    phases[:, self.n // 2] = np.cos(points * self.wavenumbers[self.n // 2])
    return phases @ coeffs

  def nearest_node(self, point: float) -> int:
    return int(np.round(np.mod(point, self.period) / self.h)) % self.n

  def impulse(self, index: int) -> NDArray[np.float64]:
    """Unit impulse of height 1/h at node `index`."""
    e = np.zeros(self.n)
    e[index] = 1.0 / self.h
    return e

  def distance(self, y: ArrayLike, z: ArrayLike) -> NDArray[np.float64]:
    return periodic_distance(y, z, self.period)

  ########## norms ##########

  def l2_norm(self, field: ArrayLike) -> float:
    values = np.asarray(field)
    return float(np.sqrt(self.h * np.sum(np.abs(values) ** 2)))

  def hmk_norm(self, field: ArrayLike, k: int, m: int = 1) -> float:
    """H^m_k norm: (Σ_{j≤m} k^{2(m−j)}‖∂^j h‖²)^{1/2}."""
    total = 0.0
    for j in range(m + 1):
      total += float(k) ** (2 * (m - j)) * self.l2_norm(self.fourier_diff(field, j)) ** 2
    return float(np.sqrt(total))


@lru_cache(maxsize=16)
def make_grid(n: int, period: float) -> Grid:
  """Shared grid instance so cached derivative matrices are reused."""
  return Grid(n=int(n), period=float(period))


def grid_for(field: ArrayLike, period: float) -> Grid:
  return make_grid(np.shape(field)[0], period)


######################################## Periodic operators ########################################


@dataclass(frozen=True, eq=False)
class PeriodicOperator:
  """c2(y)·∂²_y + c0(y) on a periodic grid.

  `assembly` picks the dense spectral matrix or the cyclic-banded 6th-order
  stencil; "auto" uses dense up to DENSE_MAX_N points.
  """

  grid: Grid
  c2: NDArray
  c0: NDArray
  assembly: Literal["dense", "banded", "auto"] = "auto"

  @classmethod
  def from_constants(cls, grid: Grid, c2: complex, c0: complex, assembly: str = "auto") -> "PeriodicOperator":
    return cls(grid=grid,
               c2=np.full(grid.n, c2, dtype=complex),
               c0=np.full(grid.n, c0, dtype=complex),
               assembly=assembly)

  @property
  def kind(self) -> str:
    if self.assembly == "auto":
      return "dense" if self.grid.n <= DENSE_MAX_N else "banded"
    return self.assembly

  def apply(self, field: ArrayLike) -> NDArray[np.complex128]:
    values = np.asarray(field)
    c2 = np.asarray(self.c2).reshape((-1,) + (1,) * (values.ndim - 1))
    c0 = np.asarray(self.c0).reshape((-1,) + (1,) * (values.ndim - 1))
    if self.kind == "banded":
      return c2 * (self._stencil() @ values) + c0 * values
    return c2 * self.grid.fourier_diff(values, 2) + c0 * values

  def matrix(self) -> NDArray[np.complex128]:
    """Dense spectral assembly."""
    return np.asarray(self.c2)[:, None] * self.grid.d2 + np.diag(np.asarray(self.c0, dtype=complex))

  def _stencil(self) -> sp.csr_matrix:
    n, h = self.grid.n, self.grid.h
    if n < 8:
      raise ValueError("the cyclic 7-point stencil needs at least 8 nodes")
    offsets, diagonals = [], []
    for shift, weight in zip(range(-3, 4), _STENCIL6):
      wrapped = [shift, shift - int(np.sign(shift)) * n] if shift else [0]
      offsets.extend(wrapped)
      diagonals.extend([weight / h ** 2] * len(wrapped))
    return sp.diags(diagonals, offsets, shape=(n, n), format="csr")

  def banded(self) -> sp.csc_matrix:
    """Cyclic-banded stencil assembly."""
    c2 = sp.diags(np.asarray(self.c2, dtype=complex))
    c0 = sp.diags(np.asarray(self.c0, dtype=complex))
    return (c2 @ self._stencil() + c0).tocsc()

  def factorize(self, lam: Optional[float] = None) -> "Factorization":
    return Factorization.build(self, lam=lam)


@dataclass(eq=False)
class Factorization:
  """LU factors of a periodic operator with a reciprocal-condition estimate."""

  kind: str
  rcond: float
  _lu: object = field(repr=False)

  @classmethod
  def build(cls, op: PeriodicOperator, lam: Optional[float] = None) -> "Factorization":
    if op.kind == "banded":
      return cls._banded(op.banded(), lam)
    return cls.from_matrix(op.matrix(), lam)

  @classmethod
  def from_matrix(cls, matrix: NDArray, lam: Optional[float] = None) -> "Factorization":
    with warnings.catch_warnings():
      warnings.simplefilter("ignore", sla.LinAlgWarning)
      lu, piv = sla.lu_factor(matrix, check_finite=True)
    gecon, = sla.get_lapack_funcs(("gecon",), (lu,))
    anorm = np.linalg.norm(matrix, 1)
    if anorm == 0:
      raise NearSingular(0.0, lam)
    rcond, info = gecon(lu, anorm, norm="1")
    if info != 0 or not np.isfinite(rcond) or rcond < NEAR_SINGULAR_RCOND:
      logger.debug(f"dense factorization rejected, rcond={rcond:.3e}")
      raise NearSingular(float(rcond), lam)
    return cls(kind="dense", rcond=float(rcond), _lu=(lu, piv))

  @classmethod
  def _banded(cls, matrix: sp.csc_matrix, lam: Optional[float]) -> "Factorization":
    try:
      lu = spla.splu(matrix)
    except RuntimeError:
      raise NearSingular(0.0, lam)
    n = matrix.shape[0]
    inverse = spla.LinearOperator(
      (n, n),
      matvec=lambda x: lu.solve(np.asarray(x, dtype=complex)),
      rmatvec=lambda x: lu.solve(np.asarray(x, dtype=complex), trans="H"),
      dtype=complex,
    )
    anorm = spla.norm(matrix, 1)
    inv_norm = spla.onenormest(inverse)
    rcond = 1.0 / (anorm * inv_norm) if anorm * inv_norm > 0 else 0.0
    if not np.isfinite(rcond) or rcond < NEAR_SINGULAR_RCOND:
      raise NearSingular(float(rcond), lam)
    return cls(kind="banded", rcond=float(rcond), _lu=lu)

  def solve(self, rhs: ArrayLike) -> NDArray[np.complex128]:
    rhs = np.asarray(rhs, dtype=complex)
    if self.kind == "banded":
      return self._lu.solve(rhs)
    return sla.lu_solve(self._lu, rhs)


def solve_periodic(op: PeriodicOperator, rhs: ArrayLike, lam: Optional[float] = None,
           tol: float = PERIODIC_RESIDUAL_TOL) -> NDArray[np.complex128]:
  """Solve op·x = rhs, pivoted dense or cyclic-banded depending on the assembly.

  Raises:
    NearSingular: reciprocal condition estimate below 1e-14, or a relative
      residual ‖op·x − rhs‖/‖rhs‖ above `tol`.
  """
  rhs = np.asarray(rhs, dtype=complex)
  factors = op.factorize(lam=lam)
  x = factors.solve(rhs)
  scale = np.linalg.norm(rhs)
  if scale > 0:
    applied = op.banded() @ x if factors.kind == "banded" else op.matrix() @ x
    residual = float(np.linalg.norm(applied - rhs) / scale)
    if residual > tol:
      logger.debug(f"periodic solve residual {residual:.2e} (rcond {factors.rcond:.2e})")
      raise NearSingular(factors.rcond, lam, residual=residual)
  return x
