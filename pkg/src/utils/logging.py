import logging
import time
from contextlib import contextmanager
from typing import Iterator, Optional


_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(level: str = "INFO",
          format_string: Optional[str] = None) -> None:
  """
  Setup global logging configuration for oscar runs.

  Args:
    level (str): Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
    format_string (str, optional): Custom format string for log messages
  """
  logging.basicConfig(
    level=getattr(logging, level.upper()),
    format=format_string or _FORMAT,
    datefmt='%Y-%m-%d %H:%M:%S',
    force=True
  )
  for noisy in ("asyncio", "langsmith"):
    logging.getLogger(noisy).setLevel(logging.WARNING)


def get_logger(name: str) -> logging.Logger:
  """
  Get a logger instance for the specified module.

  Args:
    name (str): Name for the logger (typically __name__)

  Returns:
    logging.Logger: Configured logger instance
  """
  return logging.getLogger(name)


@contextmanager
def log_elapsed(logger: logging.Logger, label: str) -> Iterator[None]:
  """Log the wall-clock time spent in a block at DEBUG level."""
  start = time.perf_counter()
  try:
    yield
  finally:
    logger.debug(f"{label} took {time.perf_counter() - start:.3f}s")
