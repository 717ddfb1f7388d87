from utils.logging import get_logger, log_elapsed
# Configure logger
logger = get_logger(__name__)

import time
from collections import defaultdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from numpy.typing import NDArray
from langchain_core.runnables import RunnableConfig
from langgraph.graph import StateGraph, END
from langgraph.graph.state import CompiledStateGraph

from constant import VERSION
from core.airy import (airy_kernel, airy_length, airy_scale, check_alpha, envelope, fit_envelope,
                       resolution_check, verify_sigma0)
from core.configuration import Configuration, load_config
from core.diagnostics import RunManifest, depletion_profile, fit_rates
from core.errors import AlphaOutOfRange, ConfigInvalid, NoPlateaus, WindowTooShort
from core.evolution import (EvolutionState, contour_plan, evolve_contour, evolve_direct,
                            sample_density, split_local_nonlocal, synthesize_xy)
from core.green import green_standard, standard_bounds
from core.grid import Grid, make_grid, periodic_offset
from core.profile import (ShearProfile, SpectralPoint, build_profile, param_geometry,
                          phi0, profile_hash)
from core.resolvent import (WeightedNormSpec, calibrate_c_dagger, embedded_eigenvalue_scan,
                            lambda_grid, lap_scan)
from core.states import ExperimentState, InputExperimentState
from utils.converter import manifest_to_pdf
from utils.io import RunWriter, read_mode_csv


def _writer(config: Optional[RunnableConfig], run_dir: str) -> RunWriter:
  """The run's shared writer, or a fresh one when the graph is invoked directly."""
  configurable = (config or {}).get("configurable") or {}
  writer = configurable.get("writer")
  return writer if isinstance(writer, RunWriter) else RunWriter(run_dir)


def _tag(k: int, nu: float) -> str:
  return f"k{k}_nu{nu:g}"


######################################## Initial data ########################################


def initial_condition(configuration: Configuration, profile: ShearProfile, grid: Grid) -> NDArray[np.complex128]:
  """ω_{0k} on the grid: a smooth bump (`kind = "bump"`) or a `y,re,im` CSV (`kind = "file"`)."""
  spec = configuration.initial
  kind = str(spec.get("kind", "bump"))
  if kind == "bump":
    center = float(spec.get("center", 0.0))
    width = float(spec.get("width", 0.5))
    amplitude = float(spec.get("amplitude", 1.0))
    if width <= 0:
      raise ConfigInvalid(f"bump width must be positive, got {width}", field="initial.width")
    offset = periodic_offset(grid.nodes, center, grid.period)
    return amplitude * phi0(2 * offset / width).astype(complex)
  if kind == "file":
    if "path" not in spec:
      raise ConfigInvalid("file initial data needs a path", field="initial.path")
    y, values = read_mode_csv(spec["path"])
    if len(values) != grid.n or not np.allclose(y, grid.nodes, atol=1e-12 * grid.period):
      raise ConfigInvalid(f"initial data must sit on the {grid.n}-point grid of period {grid.period}",
                          field="initial.path")
    return values
  raise ConfigInvalid(f"unknown initial kind '{kind}'", field="initial.kind")


######################################## Geometry node ########################################


def build_geometry(
  state: InputExperimentState, *, config: Optional[RunnableConfig] = None
) -> dict[str, Any]:

  logger.info(f"Building profile and geometry for run in {state.run_dir}")

  try:

    configuration = Configuration.from_runnable_config(config)
    profile = build_profile(configuration.profile)
    grid = make_grid(configuration.n, profile.period)
    constants = {
      "profile_hash": profile_hash(profile),
      "kappa": profile.kappa,
      "delta0": profile.delta0,
      "critical_points": list(profile.critical_points),
      "critical_values": list(profile.critical_values),
      "curvatures": list(profile.curvatures),
      "c_dagger": configuration.c_dagger,
      "sigma_sharp": configuration.sigma_sharp,
      "sigma0": configuration.sigma0,
    }

    sweep = configuration.sweep
    if not sweep or "geometry" not in configuration.stages:
      return {"profile": profile, "grid": grid, "constants": constants}

    writer = _writer(config, state.run_dir)
    artifacts = [writer.table("geometry/profile.csv", [
      {"y": y, "b": b, "b1": b1, "b2": b2}
      for y, b, b1, b2 in zip(grid.nodes, profile.on(grid), profile.on(grid, 1), profile.on(grid, 2))
    ])]

    rows = []
    for k, nu in sweep:
      for lam in configuration.lambdas:
        point = SpectralPoint(lam=lam, alpha=configuration.alpha, nu=nu, k=k)
        geometry = param_geometry(profile, point, configuration.c_dagger, configuration.m_visc)
        resolved = resolution_check(grid, profile, point, geometry)
        rows.append({
          "k": k, "nu": nu, "lambda": lam, "alpha": point.alpha, "regime": geometry.regime,
          "delta": geometry.delta, "delta1": geometry.delta1, "delta2": geometry.delta2,
          "beta": geometry.beta, "nearest": geometry.nearest, "in_sigma": list(geometry.in_sigma),
          "airy_length": airy_length(profile, point, geometry), "resolved": resolved,
        })
    if rows:
      artifacts.append(writer.table("geometry/points.csv", rows))

    logger.info(f"Geometry done: {len(rows)} spectral points")
    return {"profile": profile, "grid": grid, "constants": constants, "artifacts": artifacts}

  except Exception as e:
    logger.error(f"Error in build_geometry: {str(e)}")
    raise


######################################## Kernels node ########################################


def compute_kernels(
  state: ExperimentState, *, config: Optional[RunnableConfig] = None
) -> dict[str, Any]:

  logger.info("Starting kernel stage")

  try:

    configuration = Configuration.from_runnable_config(config)
    if "kernels" not in configuration.stages:
      logger.info("Kernel stage disabled")
      return {}

    profile, grid = state.profile, state.grid
    writer = _writer(config, state.run_dir)
    points = [SpectralPoint(lam=lam, alpha=configuration.alpha, nu=nu, k=k)
              for k, nu in configuration.sweep for lam in configuration.lambdas]

    sigma0 = verify_sigma0(profile, grid, points, configuration.sigma0)
    rows = []
    for point in points:
      try:
        check_alpha(point, sigma0)
      except AlphaOutOfRange as e:
        logger.warning(f"Skipping kernel at lambda={point.lam}: {e}")
        continue
      geometry = param_geometry(profile, point, configuration.c_dagger, configuration.m_visc)
      kernel = airy_kernel(profile, point, grid, sigma0, threads=configuration.threads)
      fit = fit_envelope(kernel, envelope(profile, point, geometry, grid))
      scale = airy_scale(profile, point, geometry.nearest, grid, c0=fit.c0, sigma0=sigma0)
      rows.append({"k": point.k, "nu": point.nu, "lambda": point.lam, "regime": geometry.regime,
                   "C": fit.C, "c0": fit.c0, "residual": kernel.residual,
                   "airy_length": float(scale.L.min()), "branch_length": float(scale.L_j.min())})

    greens = []
    for k in configuration.ks:
      bounds = standard_bounds(green_standard(k, profile.period), grid)
      greens.append({"k": k, **bounds})

    artifacts = []
    if rows:
      artifacts.append(writer.table("kernels/envelopes.csv", rows))
    if greens:
      artifacts.append(writer.table("kernels/green_standard.csv", greens))
    if rows or greens:
      artifacts.append(writer.json("kernels/summary.json", {"envelopes": rows, "green_standard": greens}))

    logger.info(f"Kernel stage done: {len(rows)} kernels, sigma0={sigma0}")
    return {"constants": {"sigma0": sigma0, "envelope_fits": rows}, "artifacts": artifacts}

  except Exception as e:
    logger.error(f"Error in compute_kernels: {str(e)}")
    raise


######################################## LAP node ########################################


def run_lap(
  state: ExperimentState, *, config: Optional[RunnableConfig] = None
) -> dict[str, Any]:

  logger.info("Starting LAP stage")

  try:

    configuration = Configuration.from_runnable_config(config)
    if "lap" not in configuration.stages:
      logger.info("LAP stage disabled")
      return {}

    profile, grid = state.profile, state.grid
    writer = _writer(config, state.run_dir)
    c_dagger = state.constants.get("c_dagger", configuration.c_dagger)
    artifacts, summary = [], {}

    if configuration.calibrate and configuration.lambdas:
      points = [SpectralPoint(lam=lam, alpha=configuration.alpha, nu=nu, k=k)
                for k, nu in configuration.sweep for lam in configuration.lambdas]
      c_dagger, worst = calibrate_c_dagger(profile, grid, points, configuration.gamma, start=c_dagger)
      logger.info(f"Calibrated C-dagger={c_dagger:.4g} (pieces norm {worst:.3g})")

    for k, nu in configuration.sweep:
      lambdas = (lambda_grid(profile, k, nu) if configuration.lap_grid
                 else np.asarray(configuration.lambdas, dtype=float))
      if len(lambdas) == 0:
        continue
      spec = (WeightedNormSpec.h1k(k) if configuration.norm == "H1k"
              else WeightedNormSpec.level(0, 0, configuration.gamma))
      report = lap_scan(profile, grid, k, nu, configuration.alpha, lambdas, spec,
                        c_dagger=c_dagger, kappa_min=configuration.kappa_min,
                        sigma_sharp=configuration.sigma_sharp, threads=configuration.threads,
                        progress=True)
      tag = _tag(k, nu)
      table = report.table()
      artifacts.append(writer.table(f"lap/{tag}.csv", table))
      summary[tag] = {"norm": report.norm, "kappa": report.kappa, "kappa2": report.kappa2, "passed": report.passed}
      logger.info(f"LAP {tag}: kappa_mixed={report.kappa:.4g} passed={report.passed}")

    embedded = []
    if configuration.embedded_lambdas:
      for k in configuration.ks:
        scan = embedded_eigenvalue_scan(profile, k, configuration.embedded_lambdas, grid,
                                        threads=configuration.threads, progress=True)
        artifacts.append(writer.table(f"lap/embedded_k{k}.csv", scan.table()))
        embedded.append({"k": k, "floor": scan.floor, "discrete": [complex(z) for z in scan.discrete]})

    if summary or embedded:
      artifacts.append(writer.json("lap/summary.json", {
        "lap": [{"run": tag, **values} for tag, values in summary.items()],
        "embedded": embedded,
      }))
    return {"constants": {"c_dagger": c_dagger, "lap": summary}, "artifacts": artifacts}

  except Exception as e:
    logger.error(f"Error in run_lap: {str(e)}")
    raise


######################################## Evolution node ########################################


def _relative_difference(a: EvolutionState, b: EvolutionState) -> float:
  """max over t > 0 of ‖ω_a − ω_b‖₂ / ‖ω_a‖₂."""
  mask = a.times > 0
  if not np.any(mask):
    return 0.0
  num = np.linalg.norm(a.omega[mask] - b.omega[mask], axis=1)
  den = np.maximum(np.linalg.norm(a.omega[mask], axis=1), 1e-300)
  return float(np.max(num / den))


def run_evolution(
  state: ExperimentState, *, config: Optional[RunnableConfig] = None
) -> dict[str, Any]:

  logger.info("Starting evolution stage")

  try:

    configuration = Configuration.from_runnable_config(config)
    if "evolution" not in configuration.stages:
      logger.info("Evolution stage disabled")
      return {}

    profile, grid = state.profile, state.grid
    writer = _writer(config, state.run_dir)
    t_grid = configuration.time_grid
    omega0 = initial_condition(configuration, profile, grid)
    artifacts = [writer.mode_csv("evolution/initial.csv", grid.nodes, omega0)]
    evolutions: dict[str, EvolutionState] = {}
    differences = {}

    for k, nu in configuration.sweep:
      tag = _tag(k, nu)
      runs = {}
      for route in configuration.routes:
        with log_elapsed(logger, f"{tag} {route} evolution"):
          if route == "direct":
            run = evolve_direct(profile, k, nu, omega0, t_grid)
          else:
            plan = contour_plan(profile, k, nu, max(t_grid), alpha=configuration.contour_alpha,
                                margin=configuration.contour_margin, horizon=configuration.contour_horizon,
                                order=configuration.contour_order, tail_tol=configuration.tail_tol,
                                sigma_sharp=configuration.sigma_sharp)
            data = sample_density(profile, grid, k, nu, omega0, plan, threads=configuration.threads, progress=True)
            run = evolve_contour(profile, k, nu, omega0, plan, t_grid, data=data, threads=configuration.threads)
        if route == "contour":
          split = split_local_nonlocal(data, profile, max(t_grid), configuration.c_split)
          for name in ("omega_loc", "omega_nloc", "psi_loc", "psi_nloc"):
            artifacts.append(writer.mode_csv(f"evolution/{tag}_contour_{name}.csv", grid.nodes, split[name]))
        runs[route] = run
        evolutions[f"{tag}_{route}"] = run
        artifacts.append(writer.block(f"evolution/{tag}_{route}_omega.bin", run.omega))
        artifacts.append(writer.json(f"evolution/{tag}_{route}.json", {
          "k": k, "nu": nu, "route": route, "shape": list(run.omega.shape),
          "times": run.times, "y": grid.nodes, "period": grid.period, "helmholtz_residual": run.helmholtz_residual(),
        }))
        artifacts.append(writer.table(f"evolution/{tag}_{route}_series.csv", [
          {"t": t, "l2": l2, "ux_sup": ux, "psi_sup": ps}
          for t, l2, ux, ps in zip(run.times, run.norms(), np.max(np.abs(run.ux), axis=1),
                                   np.max(np.abs(run.psi), axis=1))
        ]))
      if {"direct", "contour"} <= set(runs):
        differences[tag] = _relative_difference(runs["direct"], runs["contour"])
        logger.info(f"Route difference {tag}: {differences[tag]:.3e}")

    # Physical-space snapshot at the final time, one per ν and route
    by_nu = defaultdict(list)
    for run in evolutions.values():
      by_nu[(run.nu, run.route)].append(run)
    x = np.linspace(0.0, 2 * np.pi / min(configuration.ks), 64, endpoint=False) if configuration.ks else []
    for (nu, route), modes in by_nu.items():
      fields = synthesize_xy(modes, x)
      artifacts.append(writer.block(f"evolution/nu{nu:g}_{route}_xy_final.bin",
                                    np.stack([fields.omega[-1], fields.ux[-1], fields.uy[-1]])))

    return {"evolutions": evolutions, "constants": {"route_difference": differences}, "artifacts": artifacts}

  except Exception as e:
    logger.error(f"Error in run_evolution: {str(e)}")
    raise


######################################## Fits node ########################################


def fit_trajectories(
  state: ExperimentState, *, config: Optional[RunnableConfig] = None
) -> dict[str, Any]:

  logger.info("Starting fit stage")

  try:

    configuration = Configuration.from_runnable_config(config)
    if "fits" not in configuration.stages or not state.evolutions:
      logger.info("Fit stage skipped")
      return {}

    writer = _writer(config, state.run_dir)
    window = tuple(configuration.fit_window)
    rows, depletion = [], []
    for name, run in state.evolutions.items():
      try:
        fits = fit_rates(run, state.profile, window, configuration.gamma,
                         configuration.sigma_sharp, seed=configuration.seed)
      except WindowTooShort as e:
        logger.warning(f"No rate fits for {name}: {e}")
        continue
      rows.extend({"run": name, **fit.to_dict()} for fit in fits)

    grouped = defaultdict(dict)
    for run in state.evolutions.values():
      grouped[(run.k, run.route)][run.nu] = run
    for (k, route), runs in grouped.items():
      for j in range(len(state.profile.critical_points)):
        try:
          result = depletion_profile(runs, state.profile, j, configuration.gamma, configuration.depletion_offset)
        except NoPlateaus as e:
          logger.warning(f"No depletion profile for k={k} {route} j={j}: {e}")
          continue
        depletion.append({"k": k, "route": route, **result.to_dict()})

    artifacts = []
    if rows:
      artifacts.append(writer.table("fits/rates.csv", rows))
    if depletion:
      artifacts.append(writer.table("fits/depletion.csv", depletion))
    if rows or depletion:
      artifacts.append(writer.json("fits/summary.json", {"rates": rows, "depletion": depletion}))
    logger.info(f"Fit stage done: {len(rows)} rate fits, {len(depletion)} depletion profiles")
    return {"artifacts": artifacts}

  except Exception as e:
    logger.error(f"Error in fit_trajectories: {str(e)}")
    raise


######################################## Manifest node ########################################


def build_manifest(configuration: Configuration, constants: dict[str, Any],
                   artifacts: list[dict[str, str]], started: float, status: str,
                   error: Optional[str] = None) -> RunManifest:
  n = configuration.n
  period = float(configuration.profile.get("period", float("nan")))
  return RunManifest(
    config=configuration.asdict(),
    profile_hash=str(constants.get("profile_hash", "")),
    grid={"n": n, "period": period, "h": period / n},
    constants={k: v for k, v in constants.items() if k != "profile_hash"},
    version=VERSION,
    started=datetime.fromtimestamp(started, tz=timezone.utc).isoformat(),
    wall_clock=time.time() - started,
    status=status,
    error=error,
    artifacts=list(artifacts),
  )


def write_manifest(
  state: ExperimentState, *, config: Optional[RunnableConfig] = None
) -> dict[str, Any]:

  logger.info("Writing run manifest")

  try:

    configuration = Configuration.from_runnable_config(config)
    configurable = (config or {}).get("configurable") or {}
    started = float(configurable.get("started", time.time()))
    writer = _writer(config, state.run_dir)

    artifacts = list(state.artifacts)
    if configuration.report:
      manifest = build_manifest(configuration, state.constants, artifacts, started, "complete")
      manifest_to_pdf(manifest.to_dict(), "report.pdf", str(writer.run_dir))
      artifacts.append(writer.file("report.pdf", "pdf"))

    manifest = build_manifest(configuration, state.constants, artifacts, started, "complete")
    # the manifest lists artifacts, it is not one
    writer.json("manifest.json", manifest.to_dict())
    logger.info(f"Run complete with {len(artifacts)} artifacts in {writer.run_dir}")
    return {"artifacts": artifacts[len(state.artifacts):], "manifest": manifest}

  except Exception as e:
    logger.error(f"Error in write_manifest: {str(e)}")
    raise


######################################## Routing ########################################


def should_continue(
  state: ExperimentState, *, config: Optional[RunnableConfig] = None
) -> str:
  """Empty sweeps go straight to the manifest."""
  configuration = Configuration.from_runnable_config(config)
  if not configuration.sweep:
    logger.info("Empty sweep, nothing to compute")
    return "write_manifest"
  return "compute_kernels"


######################################## Graph ########################################


def get_experiment_graph() -> CompiledStateGraph:
  """Build the experiment pipeline graph.

  Flow: build_geometry -> compute_kernels -> run_lap -> run_evolution
  -> fit_trajectories -> write_manifest, with empty sweeps short-circuited.
  """
  try:
    builder = StateGraph(ExperimentState, input=InputExperimentState, config_schema=Configuration)

    builder.add_node(build_geometry)
    builder.add_node(compute_kernels)
    builder.add_node(run_lap)
    builder.add_node(run_evolution)
    builder.add_node(fit_trajectories)
    builder.add_node(write_manifest)

    builder.add_edge("__start__", "build_geometry")
    builder.add_conditional_edges("build_geometry", should_continue, ["compute_kernels", "write_manifest"])
    builder.add_edge("compute_kernels", "run_lap")
    builder.add_edge("run_lap", "run_evolution")
    builder.add_edge("run_evolution", "fit_trajectories")
    builder.add_edge("fit_trajectories", "write_manifest")
    builder.add_edge("write_manifest", END)

    graph = builder.compile()
    graph.name = "ExperimentGraph"
    return graph

  except Exception as e:
    logger.error(f"Error building experiment graph: {str(e)}")
    raise


######################################## Entry point ########################################


def run_experiment(configuration: Union[str, Path, Configuration, None] = None,
                   out: Optional[str] = None,
                   threads: Optional[int] = None,
                   seed: Optional[int] = None) -> RunManifest:
  """Run the pipeline declared by a run file (or Configuration) and write its manifest.

  Any module error aborts the run after writing a `partial` manifest that lists
  the artifacts written so far; the error is then re-raised.
  """
  if not isinstance(configuration, Configuration):
    configuration = load_config(configuration)
  overrides = {"output_dir": out, "threads": threads, "seed": seed}
  values = configuration.asdict()
  values.update({k: v for k, v in overrides.items() if v is not None})
  configuration = Configuration(**values)

  run_dir = configuration.output_dir
  writer = RunWriter(run_dir)
  started = time.time()
  logger.info(f"Starting experiment in {writer.run_dir} (version {VERSION})")

  config = {"configurable": {**configuration.asdict(), "writer": writer, "started": started}}
  try:
    result = get_experiment_graph().invoke({"run_dir": str(writer.run_dir)}, config)
  except Exception as e:
    records = [r for r in writer.records if r["path"] != "manifest.json"]
    manifest = build_manifest(configuration, {}, records, started, "partial", error=f"{type(e).__name__}: {e}")
    writer.json("manifest.json", manifest.to_dict())
    logger.error(f"Run aborted, partial manifest written: {e}")
    raise

  return result["manifest"]
