"""
Optimization-based reconstruction: an oriented point cloud is fitted to an
unoriented target by descending the Chamfer loss through the differentiable
Poisson solver, coarse to fine.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from src.conf import messages
from src.entity.models import NormalizationTransform, OrientedPointCloud, ScalarGrid, TriangleMesh
from src.schemas.grid import GridSpec
from src.schemas.reconstruction import IterationRecord, MetricsLog, StageRecord
from src.schemas.schedule import Schedule, Stage
from src.schemas.solver import SolverParams
from src.services.errors import (
    ConfigError,
    DegenerateInputError,
    EmptyMeshError,
    EmptyPointSetError,
    GridSpecMismatchError,
    ReconstructionAbortedError,
    RecoverableStepError,
)
from src.services.isosurface import largest_component, marching_cubes, mesh_grad_to_grid, sample_surface
from src.services.metrics import chamfer_l1_metric, chamfer_l2, fscore, normal_consistency
from src.services.solver import dpsr_backward, dpsr_forward

logger = logging.getLogger(__name__)

WORKING_CUBE = (0.15, 0.85)
POSITION_CLAMP = (0.02, 0.98)
MAX_FAILED_WINDOWS = 3

PRESET_SIGMAS = {
    "clean": (2.0, 2.0, 3.0, 3.0),
    "noisy": (2.0, 2.0, 3.0, 5.0),
}
DEFAULT_RESOLUTIONS = (32, 64, 128, 256)
DEFAULT_ITERATIONS = (1000, 1000, 1000, 200)


@dataclass
class AdamState:
    """
    Adam moments over one joint parameter array.

    Moments are allocated lazily on the first step and dropped by :meth:`reset`.
    """

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step_count: int = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        """
        One bias-corrected Adam update.

        :param params: np.ndarray: Current parameters.
        :param grads: np.ndarray: dL/dparams, same shape.
        :return: np.ndarray: Updated parameters (the input is not modified).
        """
        if params.shape != grads.shape:
            raise ValueError(f"gradient shape {grads.shape} does not match parameters {params.shape}")
        if self.m is None or self.m.shape != params.shape:
            self.m = np.zeros(params.shape, dtype=np.float64)
            self.v = np.zeros(params.shape, dtype=np.float64)
            self.step_count = 0

        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads**2
        m_hat = self.m / (1.0 - self.beta1**self.step_count)
        v_hat = self.v / (1.0 - self.beta2**self.step_count)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def reset(self) -> None:
        self.m = None
        self.v = None
        self.step_count = 0


@dataclass(frozen=True)
class ReconstructionResult:
    """Final mesh and cloud in input coordinates, plus the run log."""

    mesh: TriangleMesh
    cloud: OrientedPointCloud
    log: MetricsLog
    transform: NormalizationTransform = field(repr=False)


def build_schedule(resolutions, iterations, sigmas, lr: float = 2e-3, decay: float = 0.7, **options) -> Schedule:
    """
    Composes a coarse-to-fine schedule; stage ``k`` runs at learning rate ``lr * decay**k``.

    :param resolutions: Sequence[int]: One grid resolution per stage.
    :param iterations: int | Sequence[int]: Iterations per stage (a single value applies to all).
    :param sigmas: float | Sequence[float]: Gaussian bandwidth per stage.
    :param options: Remaining :class:`Schedule` fields.
    :raises ConfigError: The per-stage lists differ in length.

    >>> build_schedule([32, 64], 10, [2, 3]).stages[1].lr
    0.0014
    """
    resolutions = list(resolutions)
    iterations = [iterations] * len(resolutions) if np.isscalar(iterations) else list(iterations)
    sigmas = [sigmas] * len(resolutions) if np.isscalar(sigmas) else list(sigmas)
    if not len(resolutions) == len(iterations) == len(sigmas):
        raise ConfigError(
            f"stage lists differ in length: {len(resolutions)} resolutions, "
            f"{len(iterations)} iteration counts, {len(sigmas)} sigmas"
        )
    stages = [
        Stage(resolution=r, iterations=n, sigma=s, lr=round(lr * decay**k, 12))
        for k, (r, n, s) in enumerate(zip(resolutions, iterations, sigmas))
    ]
    return Schedule(stages=stages, **options)


def default_schedule(preset: str = "clean", **options) -> Schedule:
    """
    The standard four-stage schedule 32 -> 64 -> 128 -> 256.

    :param preset: str: ``clean`` (final sigma 3) or ``noisy`` (final sigma 5).
    :raises ConfigError: Unknown preset.
    """
    if preset not in PRESET_SIGMAS:
        raise ConfigError(f"unknown preset {preset!r}, expected one of {sorted(PRESET_SIGMAS)}")
    return build_schedule(DEFAULT_RESOLUTIONS, DEFAULT_ITERATIONS, PRESET_SIGMAS[preset], **options)


def init_sphere(n: int, radius: float, center=(0.5, 0.5, 0.5), rng_seed=None) -> OrientedPointCloud:
    """
    ``n`` area-uniform points on a sphere with outward unit normals.

    :raises ConfigError: The sphere does not fit the working sub-cube.
    """
    center = np.asarray(center, dtype=np.float64)
    low, high = WORKING_CUBE
    if radius <= 0 or np.any(center - radius < low - 1e-12) or np.any(center + radius > high + 1e-12):
        raise ConfigError(messages.SPHERE_OUTSIDE.format(center=center.tolist(), radius=radius))
    if n < 1:
        raise EmptyPointSetError(messages.EMPTY_POINT_SET)

    rng = np.random.default_rng(rng_seed)
    directions = rng.standard_normal((n, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return OrientedPointCloud(center + radius * directions, directions)


def normalize_input(points) -> tuple[np.ndarray, NormalizationTransform]:
    """
    Maps the bounding box uniformly into the working sub-cube [0.15, 0.85]^3,
    centered, aspect preserved.

    :param points: array-like (N, 3): Raw target points.
    :return: (normalized points, transform back and forth)
    :raises DegenerateInputError: All points coincide.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise EmptyPointSetError(messages.EMPTY_POINT_SET)
    lower, upper = points.min(axis=0), points.max(axis=0)
    extent = float(np.max(upper - lower))
    if extent == 0.0:
        raise DegenerateInputError(messages.IDENTICAL_POINTS)

    centered = points - points.mean(axis=0)
    if len(points) < 4 or np.linalg.matrix_rank(centered, tol=1e-9 * extent) < 3:
        logger.warning(f"Target of {len(points)} points is coplanar or smaller than a tetrahedron")

    low, high = WORKING_CUBE
    scale = (high - low) / extent
    offset = 0.5 - 0.5 * (lower + upper) * scale
    transform = NormalizationTransform(scale=scale, offset=offset)
    return transform.forward(points), transform


def _joint(cloud: OrientedPointCloud) -> np.ndarray:
    return np.concatenate([cloud.positions, cloud.normals]).astype(np.float64)


def reconstruction_step(
    cloud: OrientedPointCloud,
    target: np.ndarray,
    spec: GridSpec,
    params: SolverParams,
    adam: AdamState,
    n_samples: int,
    rng_seed=None,
) -> tuple[OrientedPointCloud, float]:
    """
    One forward/backward pass and Adam update of positions and normals.

    :param cloud: OrientedPointCloud: Current estimate in normalized coordinates.
    :param target: np.ndarray (M, 3): Normalized target points.
    :param n_samples: int: Surface samples drawn for the loss.
    :param rng_seed: Seed of this iteration's surface samples.
    :return: (updated cloud, Chamfer loss before the update)
    :raises EmptyMeshError: The level set vanished; the update is skipped.
    :raises DegenerateScaleError: The solver could not normalize; the update is skipped.
    """
    chi, tape = dpsr_forward(cloud, spec, params)
    mesh = marching_cubes(chi)
    if mesh.is_empty:
        raise EmptyMeshError(messages.EMPTY_MESH)
    samples = sample_surface(mesh, n_samples, rng_seed=rng_seed)
    loss, grad_samples = chamfer_l2(samples.points, target)

    grad_chi = mesh_grad_to_grid(samples, grad_samples, spec)
    grad_chi = ScalarGrid(spec, grad_chi.values.astype(chi.dtype, copy=False))
    grad_positions, grad_normals = dpsr_backward(tape, cloud, grad_chi)

    n = len(cloud)
    updated = adam.step(_joint(cloud), np.concatenate([grad_positions, grad_normals]).astype(np.float64))
    positions = np.clip(updated[:n], *POSITION_CLAMP)
    dtype = cloud.positions.dtype
    return OrientedPointCloud(positions.astype(dtype), updated[n:].astype(dtype)), loss


def resample_cloud(
    cloud: OrientedPointCloud, chi: ScalarGrid, spec: GridSpec, n: int, rng_seed=None
) -> OrientedPointCloud:
    """
    Replaces the cloud by ``n`` area-uniform samples of the largest surface component.

    The samples carry unit face normals; the Adam state of the old points no longer applies.

    :raises EmptyMeshError: ``chi`` has no zero crossing.
    """
    if chi.spec != spec:
        raise GridSpecMismatchError(messages.SPEC_MISMATCH.format(left=spec, right=chi.spec))
    mesh = largest_component(marching_cubes(chi))
    if mesh.is_empty:
        raise EmptyMeshError(messages.EMPTY_MESH)
    samples = sample_surface(mesh, n, rng_seed=rng_seed)
    dtype = cloud.positions.dtype
    return OrientedPointCloud(samples.points.astype(dtype), samples.normals.astype(dtype))


def _stage_metrics(
    cloud: OrientedPointCloud,
    spec: GridSpec,
    params: SolverParams,
    ground_truth: np.ndarray,
    ground_truth_normals: np.ndarray | None,
    transform: NormalizationTransform,
    metrics_frame: str,
    rng_seed,
) -> dict:
    chi, _ = dpsr_forward(cloud, spec, params)
    mesh = marching_cubes(chi)
    if mesh.is_empty:
        raise EmptyMeshError(messages.EMPTY_MESH)
    samples = sample_surface(mesh, len(ground_truth), rng_seed=rng_seed)
    predicted = samples.points.astype(np.float64)
    reference = ground_truth
    if metrics_frame == "input":
        predicted, reference = transform.inverse(predicted), transform.inverse(reference)

    metrics = {
        "chamfer_l1": chamfer_l1_metric(predicted, reference),
        "fscore": fscore(predicted, reference),
    }
    if ground_truth_normals is not None:
        metrics["normal_consistency"] = normal_consistency(
            predicted, samples.normals.astype(np.float64), reference, ground_truth_normals
        )
    return metrics


def run_reconstruction(
    target,
    schedule: Schedule,
    params: SolverParams | None = None,
    ground_truth=None,
    ground_truth_normals=None,
    metrics_frame: str = "normalized",
    dtype=np.float64,
) -> ReconstructionResult:
    """
    Fits a sphere-initialized oriented cloud to ``target`` through every schedule stage.

    :param target: array-like (M, 3): Unoriented target points, any coordinates.
    :param schedule: Schedule: Stages, resampling and sampling sizes, seed.
    :param params: SolverParams | None: Normalization parameters; sigma is taken per stage.
    :param ground_truth: array-like (K, 3) | None: Points for per-stage metrics (input coordinates).
    :param ground_truth_normals: array-like (K, 3) | None: Unit normals of ``ground_truth``.
    :param metrics_frame: str: ``normalized`` or ``input`` coordinates for the metrics.
    :param dtype: Working precision of the cloud and grids.
    :return: ReconstructionResult: Mesh and cloud de-normalized to input coordinates.
    :raises ReconstructionAbortedError: More than three consecutive windows without a surface.
    """
    if metrics_frame not in ("normalized", "input"):
        raise ConfigError(f"unknown metrics frame {metrics_frame!r}")
    params = params or SolverParams()
    normalized, transform = normalize_input(target)
    if ground_truth is not None:
        ground_truth = transform.forward(np.asarray(ground_truth, dtype=np.float64))
    if ground_truth_normals is not None:
        ground_truth_normals = np.asarray(ground_truth_normals, dtype=np.float64)

    seed = schedule.seed
    cloud = init_sphere(schedule.n_points, schedule.init_radius, schedule.init_center, rng_seed=[seed]).astype(dtype)
    log = MetricsLog()
    failed_windows = 0

    for stage_index, stage in enumerate(schedule.stages):
        spec = GridSpec(resolution=stage.resolution)
        stage_params = params.model_copy(update={"sigma": stage.sigma})
        adam = AdamState(lr=stage.lr)
        window_steps = 0
        logger.info(
            f"Stage {stage_index}: r={stage.resolution}, sigma={stage.sigma}, "
            f"lr={stage.lr:.3e}, {stage.iterations} iterations"
        )

        for iteration in range(stage.iterations):
            record = IterationRecord(stage=stage_index, iteration=iteration, resolution=stage.resolution)
            try:
                cloud, loss = reconstruction_step(
                    cloud,
                    normalized,
                    spec,
                    stage_params,
                    adam,
                    schedule.n_samples,
                    rng_seed=[seed, stage_index, iteration],
                )
                record.loss = loss
                window_steps += 1
            except RecoverableStepError as err:
                logger.warning(f"Stage {stage_index} iteration {iteration} skipped: {err}")
                record.skipped = str(err)
            log.iterations.append(record)

            if (iteration + 1) % schedule.resample_every:
                continue
            window_failed = window_steps == 0
            window_steps = 0
            if schedule.resample and not window_failed:
                try:
                    chi, _ = dpsr_forward(cloud, spec, stage_params)
                    cloud = resample_cloud(
                        cloud, chi, spec, schedule.n_points, rng_seed=[seed, stage_index, iteration, 1]
                    )
                    adam.reset()
                    log.resampled.append((stage_index, iteration))
                    logger.info(f"Resampled {schedule.n_points} points at stage {stage_index} iteration {iteration}")
                except RecoverableStepError as err:
                    logger.warning(f"Resampling at stage {stage_index} iteration {iteration} failed: {err}")
                    window_failed = True
            failed_windows = failed_windows + 1 if window_failed else 0
            if failed_windows > MAX_FAILED_WINDOWS:
                raise ReconstructionAbortedError(messages.RECONSTRUCTION_ABORTED.format(windows=failed_windows))

        stage_record = StageRecord(stage=stage_index, resolution=stage.resolution, sigma=stage.sigma)
        if ground_truth is not None:
            try:
                metrics = _stage_metrics(
                    cloud,
                    spec,
                    stage_params,
                    ground_truth,
                    ground_truth_normals,
                    transform,
                    metrics_frame,
                    rng_seed=[seed, stage_index, stage.iterations, 2],
                )
                stage_record = stage_record.model_copy(update=metrics)
                logger.info(f"Stage {stage_index} metrics: {metrics}")
            except RecoverableStepError as err:
                logger.warning(f"Stage {stage_index} metrics unavailable: {err}")
        log.stages.append(stage_record)

    final = schedule.stages[-1]
    final_params = params.model_copy(update={"sigma": final.sigma})
    chi, _ = dpsr_forward(cloud, GridSpec(resolution=final.resolution), final_params)
    mesh = marching_cubes(chi)
    if mesh.is_empty:
        raise EmptyMeshError(messages.EMPTY_MESH)

    output_cloud = OrientedPointCloud(transform.inverse(cloud.positions.astype(np.float64)), cloud.normals)
    return ReconstructionResult(
        mesh=mesh.transformed(transform, inverse=True),
        cloud=output_cloud,
        log=log,
        transform=transform,
    )
