"""
Command-line entry point: ``sap solve | reconstruct | eval | gradcheck | serve``.

Exit codes: 0 success, 2 configuration or input-format error, 3 compute or write failure.
Diagnostics go to standard error, results to standard output.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import uvicorn
from pydantic import ValidationError

from src.conf import messages
from src.conf.config import LOG_LEVELS, RunConfig, config, load_run_config
from src.entity.models import OrientedPointCloud
from src.repository.grids import read_grid, write_grid
from src.repository.meshes import MESH_SUFFIXES, read_mesh, write_mesh
from src.repository.point_clouds import read_point_cloud, write_point_cloud
from src.schemas.grid import GridSpec
from src.services import gradcheck
from src.services.errors import ComputeError, ConfigError, FormatError
from src.services.isosurface import marching_cubes, sample_surface
from src.services.metrics import chamfer_l1_metric, fscore, grid_mse, normal_consistency
from src.services.optimizer import normalize_input, run_reconstruction
from src.services.solver import dpsr_forward

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COMPUTE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sap", description="Differentiable Poisson surface reconstruction")
    parser.add_argument("--log-level", type=str.upper, choices=LOG_LEVELS, help="default from SAP_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser("solve", help="oriented cloud -> indicator grid and mesh (one spectral solve)")
    solve.add_argument("input", type=Path)
    solve.add_argument("--res", dest="resolution", type=int)
    solve.add_argument("--sigma", type=float)
    solve.add_argument("--mesh", dest="output", type=Path, help="write the zero level set (.obj or .ply)")
    solve.add_argument("--grid", type=Path, help="write the indicator grid (.sapg)")
    solve.add_argument("--raw", action="store_true", help="use input coordinates as-is; they must lie in [0, 1)^3")
    _add_common(solve)

    reconstruct = commands.add_parser("reconstruct", help="unoriented cloud -> mesh by optimization")
    reconstruct.add_argument("input", type=Path)
    reconstruct.add_argument("--output", "-o", type=Path)
    reconstruct.add_argument("--cloud", type=Path, help="write the optimized oriented cloud (.ply or .xyz)")
    reconstruct.add_argument("--log", type=Path, help="write the metrics log as JSON")
    reconstruct.add_argument("--ground-truth", dest="ground_truth", type=Path)
    reconstruct.add_argument("--res", dest="resolutions", type=int, nargs="+")
    reconstruct.add_argument("--iterations", type=int, nargs="+")
    reconstruct.add_argument("--sigma", dest="sigmas", type=float, nargs="+")
    reconstruct.add_argument("--lr", type=float)
    reconstruct.add_argument("--decay", type=float)
    reconstruct.add_argument("--points", dest="n_points", type=int)
    reconstruct.add_argument("--samples", dest="n_samples", type=int)
    reconstruct.add_argument("--resample-every", dest="resample_every", type=int)
    reconstruct.add_argument("--no-resample", dest="resample", action="store_false", default=None)
    reconstruct.add_argument("--preset", choices=("clean", "noisy"))
    reconstruct.add_argument("--metrics-frame", dest="metrics_frame", choices=("normalized", "input"))
    _add_common(reconstruct)

    evaluate = commands.add_parser("eval", help="compare two meshes, clouds or grids")
    evaluate.add_argument("prediction", type=Path)
    evaluate.add_argument("reference", type=Path)
    evaluate.add_argument("--tau", type=float)
    evaluate.add_argument("--samples", dest="n_samples", type=int)
    evaluate.add_argument("--metrics-frame", dest="metrics_frame", choices=("normalized", "input"))
    evaluate.add_argument("--grids", action="store_true", help="compare two .sapg grids by mean squared error")
    _add_common(evaluate)

    check = commands.add_parser("gradcheck", help="finite-difference check of every analytic gradient")
    check.add_argument("--res", dest="resolutions", type=int, nargs="+", default=[8, 16])
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--tolerance", type=float, default=gradcheck.DEFAULT_TOLERANCE)

    serve = commands.add_parser("serve", help="run the HTTP API")
    serve.add_argument("--host", default=None)
    serve.add_argument("--port", type=int, default=None)
    return parser


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat key=value file, overridden by flags")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--precision", choices=("f32", "f64"))


def _run_config(args: argparse.Namespace) -> RunConfig:
    skip = {"command", "config", "log_level", "raw", "grids", "prediction", "reference"}
    overrides = {key: value for key, value in vars(args).items() if key not in skip}
    return load_run_config(args.config, **overrides)


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload) + "\n")
    sys.stdout.flush()


def cmd_solve(args: argparse.Namespace) -> int:
    run = _run_config(args)
    points, normals = read_point_cloud(run.input)
    if normals is None:
        raise FormatError(messages.MISSING_NORMALS.format(path=run.input))
    transform = None
    if not args.raw:
        points, transform = normalize_input(points)

    cloud = OrientedPointCloud(points, normals).astype(run.dtype)
    spec = GridSpec(resolution=run.resolution)
    chi, _ = dpsr_forward(cloud, spec, run.solver_params())
    logger.info(f"Solved r={spec.resolution} sigma={run.sigma} for {len(cloud)} points")

    summary = {"resolution": spec.resolution, "sigma": run.sigma, "chi_origin": float(chi.values[0, 0, 0])}
    if run.grid is not None:
        write_grid(run.grid, chi)
    if run.output is not None:
        mesh = marching_cubes(chi)
        if transform is not None:
            mesh = mesh.transformed(transform, inverse=True)
        write_mesh(run.output, mesh)
        summary.update(vertices=len(mesh.vertices), faces=len(mesh.triangles))
    _emit(summary)
    return EXIT_OK


def _load_oriented(path: Path, n_samples: int, seed: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Meshes are area-sampled into oriented points; clouds are taken as stored."""
    if path.suffix.lower() not in MESH_SUFFIXES:
        return read_point_cloud(path)
    mesh = read_mesh(path)
    if mesh.is_empty:
        return read_point_cloud(path)
    samples = sample_surface(mesh, n_samples, rng_seed=[seed])
    return samples.points.astype(np.float64), samples.normals.astype(np.float64)


def cmd_eval(args: argparse.Namespace) -> int:
    run = _run_config(args)
    grids = args.grids or (args.prediction.suffix.lower() == ".sapg" and args.reference.suffix.lower() == ".sapg")
    if grids:
        value, _ = grid_mse(read_grid(args.prediction), read_grid(args.reference))
        _emit({"grid_mse": value})
        return EXIT_OK

    pred_points, pred_normals = _load_oriented(args.prediction, run.n_samples, run.seed)
    ref_points, ref_normals = _load_oriented(args.reference, run.n_samples, run.seed)
    if run.metrics_frame == "normalized":
        _, transform = normalize_input(ref_points)
        pred_points, ref_points = transform.forward(pred_points), transform.forward(ref_points)

    consistency = None
    if pred_normals is not None and ref_normals is not None:
        consistency = normal_consistency(pred_points, pred_normals, ref_points, ref_normals)
    _emit(
        {
            "chamfer_l1": chamfer_l1_metric(pred_points, ref_points),
            "fscore": fscore(pred_points, ref_points, run.tau),
            "normal_consistency": consistency,
            "tau": run.tau,
        }
    )
    return EXIT_OK


def cmd_reconstruct(args: argparse.Namespace) -> int:
    run = _run_config(args)
    schedule = run.to_schedule()
    target, _ = read_point_cloud(run.input)

    ground_truth = ground_truth_normals = None
    if run.ground_truth is not None:
        ground_truth, ground_truth_normals = _load_oriented(run.ground_truth, run.n_samples, run.seed)

    result = run_reconstruction(
        target,
        schedule,
        params=run.solver_params(),
        ground_truth=ground_truth,
        ground_truth_normals=ground_truth_normals,
        metrics_frame=run.metrics_frame,
        dtype=run.dtype,
    )
    if run.output is not None:
        write_mesh(run.output, result.mesh)
    if run.cloud is not None:
        write_point_cloud(run.cloud, result.cloud.positions, result.cloud.normals)
    if run.log is not None:
        run.log.write_text(result.log.model_dump_json(indent=2), encoding="utf-8")

    losses = result.log.losses
    summary = {
        "vertices": len(result.mesh.vertices),
        "faces": len(result.mesh.triangles),
        "final_loss": losses[-1] if losses else None,
        "skipped": sum(record.skipped is not None for record in result.log.iterations),
        "stages": [record.model_dump(exclude_none=True) for record in result.log.stages],
    }
    _emit(summary)
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    try:
        specs = [GridSpec(resolution=r) for r in args.resolutions]
    except ValidationError as err:
        raise ConfigError(f"invalid gradcheck resolution: {err}") from err
    results = gradcheck.run_suite(tuple(spec.resolution for spec in specs), seed=args.seed)
    worst = max(results.values())
    _emit({**results, "max": worst, "tolerance": args.tolerance})
    if worst >= args.tolerance:
        logger.error(f"Gradient check failed: max relative error {worst:.3e} >= {args.tolerance:.1e}")
        return EXIT_COMPUTE
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    uvicorn.run("main:app", host=args.host or config.API_HOST, port=args.port or config.API_PORT)
    return EXIT_OK


HANDLERS = {
    "solve": cmd_solve,
    "reconstruct": cmd_reconstruct,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level or config.LOG_LEVEL,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )
    try:
        return HANDLERS[args.command](args)
    except (ConfigError, FormatError, FileNotFoundError, IsADirectoryError) as err:
        logger.error(f"{args.command}: {err}")
        return EXIT_CONFIG
    except ValidationError as err:
        logger.error(f"{args.command}: invalid value: {err}")
        return EXIT_CONFIG
    except (ComputeError, OSError) as err:
        logger.error(f"{args.command}: {err}")
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
