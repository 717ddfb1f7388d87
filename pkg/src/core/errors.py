"""Exceptions raised by the oscar modules.

All errors derive from :class:`OscarError` so callers can catch the whole
family at once. Each error keeps the offending quantities as attributes.
"""
from typing import Optional


class OscarError(Exception):
  """Base class of every oscar error."""


######################################## profile ########################################


class PeriodTooSmall(OscarError):

  def __init__(self, period: float):
    self.period = period
    super().__init__(f"period {period!r} must exceed 2*pi")


class DegenerateCritical(OscarError):

  def __init__(self, position: float, curvature: float):
    self.position = position
    self.curvature = curvature
    super().__init__(
      f"critical point y*={position:.12g} is degenerate (|b''|={abs(curvature):.3e})"
    )


class WrongCriticalCount(OscarError):

  def __init__(self, count: int):
    self.count = count
    super().__init__(f"expected exactly 2 critical points on the period, found {count}")


class DeltaTooLarge(OscarError):

  def __init__(self, delta: float, limit: float):
    self.delta = delta
    self.limit = limit
    super().__init__(f"delta(Lambda)={delta:.6g} exceeds the admissible bound {limit:.6g}")


######################################## solvers ########################################


class ZeroMode(OscarError):

  def __init__(self):
    super().__init__("k=0 is excluded: the x-mean of the vorticity vanishes")


class NearSingular(OscarError):
  """Raised when a discrete operator is numerically singular.

  The resolvent reports it as a spectral-assumption violation, in which case
  `lam` is the offending spectral parameter. `residual` is set when the
  factorization passed but the solve missed its residual tolerance.
  """

  def __init__(self, rcond: float, lam: Optional[float] = None, residual: Optional[float] = None):
    self.rcond = rcond
    self.lam = lam
    self.residual = residual
    where = f" at lambda={lam:.12g}" if lam is not None else ""
    detail = f", residual={residual:.3e}" if residual is not None else ""
    super().__init__(f"operator is near singular{where} (rcond={rcond:.3e}{detail})")


class AlphaOutOfRange(OscarError):

  def __init__(self, alpha: float, floor: float):
    self.alpha = alpha
    self.floor = floor
    super().__init__(f"alpha={alpha:.6g} is below the admissible shift {floor:.6g}")


class RegimeMismatch(OscarError):

  def __init__(self, message: str, regime: Optional[str] = None):
    self.regime = regime
    super().__init__(message)


class QuadratureFailure(OscarError):

  def __init__(self, y: float, error: float):
    self.y = y
    self.error = error
    super().__init__(f"quadrature for W({y:.6g}) did not reach tolerance (error {error:.3e})")


class StencilOutOfRange(OscarError):

  def __init__(self, index: int, size: int):
    self.index = index
    self.size = size
    super().__init__(
      f"centered lambda stencil at node {index} needs two neighbours on each side of {size} nodes"
    )


class CalibrationFailure(OscarError):

  def __init__(self, c_dagger: float, pieces_norm: float):
    self.c_dagger = c_dagger
    self.pieces_norm = pieces_norm
    super().__init__(
      f"C_dagger calibration stopped at {c_dagger:.6g} with ||T_v1||+||T_v2||={pieces_norm:.4g}"
    )


######################################## evolution ########################################


class StepRejection(OscarError):

  def __init__(self, message: str):
    super().__init__(f"implicit integrator failed: {message}")


class NodeFailure(OscarError):

  def __init__(self, lam: float, cause: Exception):
    self.lam = lam
    self.cause = cause
    super().__init__(f"resolvent solve failed at contour node lambda={lam:.12g}: {cause}")


class TailTooLarge(OscarError):

  def __init__(self, tail: float, tolerance: float):
    self.tail = tail
    self.tolerance = tolerance
    super().__init__(f"estimated truncation tail {tail:.3e} exceeds {tolerance:.1e} of the synthesis")


######################################## diagnostics ########################################


class WindowTooShort(OscarError):

  def __init__(self, points: int, window: tuple[float, float]):
    self.points = points
    self.window = window
    super().__init__(f"fit window {window} holds only {points} samples")


class NoPlateaus(OscarError):

  def __init__(self, nu: float, spread: float):
    self.nu = nu
    self.spread = spread
    super().__init__(f"run nu={nu:.3g} has no late-time plateau (half-window spread {spread:.1%})")


class ConfigInvalid(OscarError):

  def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
    self.field = field
    self.line = line
    where = []
    if field:
      where.append(field)
    if line is not None:
      where.append(f"line {line}")
    prefix = f"[{', '.join(where)}] " if where else ""
    super().__init__(f"{prefix}{message}")
