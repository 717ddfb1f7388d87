"""oscar command line.

  oscar profile  --config run.cfg
  oscar airy     --k 1 --nu 1e-3 --lambda 0.5 [--regime viscous] [--dump-kernel k.bin]
  oscar green    --k 1 [--modified --j 0 --nu 1e-3 --lambda 0.99] [--dump g.bin]
  oscar lap      --k 1 --nu 1e-3 --lambda 0.9 0.95 [--grid] --gamma 1.875 --out report.json
  oscar evolve   --route direct|contour|both --k 1 --nu 1e-3 --t 0:0.25:20 [--ic ic.csv] --out run/
  oscar rates    --run run/ [--window 5 50]
  oscar run      --config run.cfg
  oscar bench
  oscar report   --run run/
"""
from utils.logging import get_logger, setup_logging
logger = get_logger(__name__)

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from constant import CONFIG_DIR, LOG_LEVEL, THREADS_ENV
from core.airy import airy_kernel, envelope, fit_envelope
from core.configuration import Configuration, load_config
from core.diagnostics import fit_rates
from core.errors import ConfigInvalid, OscarError
from core.evolution import EvolutionState, contour_plan, evolve_contour, evolve_direct
from core.graphs.experiment_graph import initial_condition, run_experiment
from core.green import green_modified, green_standard, standard_bounds
from core.grid import make_grid
from core.profile import SpectralPoint, build_profile, param_geometry, profile_hash
from core.resolvent import WeightedNormSpec, lambda_grid, lap_scan
from utils.converter import render_report
from utils.io import RunWriter, read_block, read_json, read_mode_csv, write_block, write_json
from utils.utils import to_jsonable

BENCH_CONFIG = Path(CONFIG_DIR) / "bench_kolmogorov.cfg"


################################## Helpers ##################################


def _emit(payload: Any, out: Optional[str]) -> None:
  """Print JSON to stdout, or write it to `out`."""
  if out:
    write_json(out, payload)
    logger.info(f"Wrote {out}")
  else:
    json.dump(to_jsonable(payload), sys.stdout, indent=2)
    sys.stdout.write("\n")


def _time_grid(spec: str) -> list[float]:
  try:
    start, step, stop = (float(v) for v in spec.split(":"))
  except ValueError:
    raise ConfigInvalid(f"time grid must read start:step:stop, got '{spec}'", field="--t")
  if step <= 0:
    raise ConfigInvalid("time step must be positive", field="--t")
  count = int(round((stop - start) / step))
  return [start + i * step for i in range(count + 1)]


def _configuration(args: argparse.Namespace) -> Configuration:
  configuration = load_config(args.config)
  overrides = {"threads": args.threads, "seed": args.seed, "n": args.n, "output_dir": getattr(args, "out", None)}
  values = configuration.asdict()
  values.update({k: v for k, v in overrides.items() if v is not None})
  return Configuration(**values)


def _point(args: argparse.Namespace) -> SpectralPoint:
  return SpectralPoint(lam=args.lam, alpha=args.alpha, nu=args.nu, k=args.k)


################################## Commands ##################################


def cmd_profile(args: argparse.Namespace) -> int:
  configuration = _configuration(args)
  profile = build_profile(configuration.profile)
  _emit({
    "family": profile.family, "period": profile.period, "hash": profile_hash(profile),
    "critical_points": profile.critical_points, "critical_values": profile.critical_values,
    "curvatures": profile.curvatures, "kappa": profile.kappa, "delta0": profile.delta0,
  }, args.json)
  return 0


def cmd_airy(args: argparse.Namespace) -> int:
  configuration = _configuration(args)
  profile = build_profile(configuration.profile)
  grid = make_grid(configuration.n, profile.period)
  point = _point(args)
  geometry = param_geometry(profile, point, configuration.c_dagger, configuration.m_visc, regime=args.regime)
  kernel = airy_kernel(profile, point, grid, configuration.sigma0, threads=configuration.threads)
  fit = fit_envelope(kernel, envelope(profile, point, geometry, grid))
  if args.dump_kernel:
    write_block(args.dump_kernel, kernel.matrix)
    write_json(f"{args.dump_kernel}.json", {"shape": kernel.matrix.shape, "period": grid.period,
                                             "lambda": point.lam, "alpha": point.alpha, "nu": point.nu,
                                             "k": point.k, "C": fit.C, "c0": fit.c0})
  _emit({"regime": geometry.regime, "delta": geometry.delta, "C": fit.C, "c0": fit.c0,
         "residual": kernel.residual}, None)
  return 0


def cmd_green(args: argparse.Namespace) -> int:
  configuration = _configuration(args)
  profile = build_profile(configuration.profile)
  grid = make_grid(configuration.n, profile.period)
  if not args.modified:
    green = green_standard(args.k, profile.period)
    bounds = standard_bounds(green, grid)
    if args.dump:
      write_block(args.dump, green.matrix(grid))
      write_json(f"{args.dump}.json", {"shape": [grid.n, grid.n], "k": args.k, **bounds})
    _emit(bounds, None)
    return 0

  point = _point(args)
  geometry = param_geometry(profile, point, configuration.c_dagger, configuration.m_visc)
  modified = green_modified(profile, point, geometry, args.j, grid, threads=configuration.threads)
  payload = {"regime": geometry.regime, "residual": modified.residual,
             "symmetry": modified.symmetry, **modified.bound_constants}
  if args.dump:
    write_block(args.dump, modified.matrix)
    write_json(f"{args.dump}.json", {"shape": modified.matrix.shape, "j": args.j, **payload})
  _emit(payload, None)
  return 0


def cmd_lap(args: argparse.Namespace) -> int:
  configuration = _configuration(args)
  profile = build_profile(configuration.profile)
  grid = make_grid(configuration.n, profile.period)
  lambdas = lambda_grid(profile, args.k, args.nu) if args.grid else np.asarray(args.lam, dtype=float)
  spec = WeightedNormSpec.h1k(args.k) if args.norm == "H1k" else WeightedNormSpec.level(0, 0, args.gamma)
  report = lap_scan(profile, grid, args.k, args.nu, args.alpha, lambdas, spec,
                    c_dagger=configuration.c_dagger, kappa_min=configuration.kappa_min,
                    sigma_sharp=configuration.sigma_sharp, threads=configuration.threads, progress=True)
  _emit(report.table(), args.out)
  logger.info(f"kappa_mixed={report.kappa:.4g} kappa2={report.kappa2:.4g} passed={report.passed}")
  return 0 if report.passed else 1


def cmd_evolve(args: argparse.Namespace) -> int:
  configuration = _configuration(args)
  profile = build_profile(configuration.profile)
  grid = make_grid(configuration.n, profile.period)
  t_grid = _time_grid(args.t) if args.t else configuration.time_grid
  if args.ic:
    y, omega0 = read_mode_csv(args.ic)
    grid = make_grid(len(y), profile.period)
  else:
    omega0 = initial_condition(configuration, profile, grid)

  writer = RunWriter(args.out or configuration.output_dir)
  routes = ["direct", "contour"] if args.route == "both" else [args.route]
  runs = {}
  for route in routes:
    if route == "direct":
      run = evolve_direct(profile, args.k, args.nu, omega0, t_grid)
    else:
      plan = contour_plan(profile, args.k, args.nu, max(t_grid), alpha=configuration.contour_alpha,
                          margin=configuration.contour_margin, horizon=configuration.contour_horizon,
                          order=configuration.contour_order, tail_tol=configuration.tail_tol,
                          sigma_sharp=configuration.sigma_sharp)
      run = evolve_contour(profile, args.k, args.nu, omega0, plan, t_grid,
                           threads=configuration.threads, progress=True)
    runs[route] = run
    name = f"k{args.k}_nu{args.nu:g}_{route}"
    writer.block(f"{name}_omega.bin", run.omega)
    writer.json(f"{name}.json", {"k": args.k, "nu": args.nu, "route": route, "shape": run.omega.shape,
                                 "times": run.times, "y": run.grid.nodes, "period": run.grid.period,
                                 "helmholtz_residual": run.helmholtz_residual()})
  summary = {"profile_hash": profile_hash(profile), "artifacts": writer.records}
  if len(runs) == 2:
    direct, contour = runs["direct"].omega, runs["contour"].omega
    mask = runs["direct"].times > 0
    if np.any(mask):
      difference = np.linalg.norm(direct[mask] - contour[mask], axis=1) / np.linalg.norm(direct[mask], axis=1)
      summary["route_difference"] = float(np.max(difference))
  writer.json("manifest.json", summary)
  return 0


def _load_runs(run_dir: Path) -> list[EvolutionState]:
  """Rebuild EvolutionStates from `<name>.json` sidecars and `<name>_omega.bin` blocks."""
  runs = []
  for sidecar in sorted(run_dir.rglob("*.json")):
    meta = read_json(sidecar)
    block = sidecar.with_name(f"{sidecar.stem}_omega.bin")
    if not isinstance(meta, dict) or "route" not in meta or not block.is_file():
      continue
    y = np.asarray(meta["y"], dtype=float)
    period = float(meta.get("period", len(y) * (y[1] - y[0])))
    grid = make_grid(len(y), period)
    omega = read_block(block, complex_values=True).reshape(meta["shape"])
    psi = grid.invert_helmholtz(omega, int(meta["k"]), axis=1)
    runs.append(EvolutionState(k=int(meta["k"]), nu=float(meta["nu"]), grid=grid,
                               times=np.asarray(meta["times"], dtype=float), omega=omega, psi=psi,
                               route=str(meta["route"])))
  return runs


def cmd_rates(args: argparse.Namespace) -> int:
  configuration = _configuration(args)
  profile = build_profile(configuration.profile)
  window = tuple(args.window) if args.window else tuple(configuration.fit_window)
  rows = []
  for run in _load_runs(Path(args.run)):
    for fit in fit_rates(run, profile, window, configuration.gamma, configuration.sigma_sharp,
                         seed=configuration.seed):
      rows.append({"k": run.k, "nu": run.nu, "route": run.route, **fit.to_dict()})
  if not rows:
    logger.warning(f"No evolution runs found in {args.run}")
  _emit(rows, args.json)
  return 0


def cmd_run(args: argparse.Namespace) -> int:
  manifest = run_experiment(_configuration(args))
  logger.info(f"Run {manifest.status}: {len(manifest.artifacts)} artifacts, {manifest.wall_clock:.1f}s")
  return 0


def cmd_bench(args: argparse.Namespace) -> int:
  args.config = args.config or str(BENCH_CONFIG)
  return cmd_run(args)


def cmd_report(args: argparse.Namespace) -> int:
  path = render_report(args.run)
  logger.info(f"Report written to {path}")
  return 0


################################## Parser ##################################


def _add_point(parser: argparse.ArgumentParser, lam: bool = True) -> None:
  parser.add_argument("--k", type=int, default=1)
  parser.add_argument("--nu", type=float, default=1e-3)
  parser.add_argument("--alpha", type=float, default=0.0)
  if lam:
    parser.add_argument("--lambda", dest="lam", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
  common = argparse.ArgumentParser(add_help=False)
  common.add_argument("--config", help="TOML run file (.cfg)")
  common.add_argument("--threads", type=int, help=f"worker threads (fallback: ${THREADS_ENV}, then CPU count)")
  common.add_argument("--seed", type=int, help="bootstrap seed")
  common.add_argument("--n", type=int, help="grid size override")
  common.add_argument("--log-level", default=LOG_LEVEL)

  parser = argparse.ArgumentParser(prog="oscar", description="Linearized Navier-Stokes around periodic shear flows.")
  sub = parser.add_subparsers(dest="command", required=True)

  p = sub.add_parser("profile", parents=[common], help="build a profile and print its geometry")
  p.add_argument("--json", help="write the summary here instead of stdout")
  p.set_defaults(func=cmd_profile)

  p = sub.add_parser("airy", parents=[common], help="Airy kernel and envelope fit")
  _add_point(p)
  p.add_argument("--regime", choices=["nondegenerate", "intermediate", "viscous", "alpha_dominated"])
  p.add_argument("--dump-kernel", help="write the kernel matrix as a binary block")
  p.set_defaults(func=cmd_airy)

  p = sub.add_parser("green", parents=[common], help="standard or modified Green's function")
  _add_point(p)
  p.add_argument("--modified", action="store_true")
  p.add_argument("--j", type=int, default=0)
  p.add_argument("--dump", help="write the matrix as a binary block with a JSON sidecar")
  p.set_defaults(func=cmd_green)

  p = sub.add_parser("lap", parents=[common], help="limiting absorption scan")
  _add_point(p, lam=False)
  p.add_argument("--lambda", dest="lam", type=float, nargs="*", default=[])
  p.add_argument("--grid", action="store_true", help="scan the coarse + refined lambda grid")
  p.add_argument("--gamma", type=float, default=15 / 8)
  p.add_argument("--norm", choices=["X", "H1k"], default="X")
  p.add_argument("--out", help="report JSON path")
  p.set_defaults(func=cmd_lap)

  p = sub.add_parser("evolve", parents=[common], help="evolve one mode")
  _add_point(p, lam=False)
  p.add_argument("--route", choices=["direct", "contour", "both"], default="direct")
  p.add_argument("--t", help="time grid start:step:stop")
  p.add_argument("--ic", help="initial condition CSV (y,re,im)")
  p.add_argument("--out", help="run directory")
  p.set_defaults(func=cmd_evolve)

  p = sub.add_parser("rates", parents=[common], help="fit damping and dissipation rates of stored runs")
  p.add_argument("--run", required=True, help="run directory")
  p.add_argument("--window", type=float, nargs=2)
  p.add_argument("--json", help="write the fits here instead of stdout")
  p.set_defaults(func=cmd_rates)

  p = sub.add_parser("run", parents=[common], help="run the pipeline of a run file")
  p.add_argument("--out", help="run directory")
  p.set_defaults(func=cmd_run)

  p = sub.add_parser("bench", parents=[common], help="run the shipped Kolmogorov benchmark")
  p.add_argument("--out", help="run directory")
  p.set_defaults(func=cmd_bench)

  p = sub.add_parser("report", parents=[common], help="render a run manifest to PDF")
  p.add_argument("--run", required=True, help="run directory")
  p.set_defaults(func=cmd_report)

  return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
  args = build_parser().parse_args(argv)
  setup_logging(args.log_level)
  try:
    return args.func(args)
  except ConfigInvalid as e:
    logger.error(f"Invalid configuration: {e}")
    return 2
  except OscarError as e:
    logger.error(f"{type(e).__name__}: {e}")
    return 1


if __name__ == "__main__":
  sys.exit(main())
