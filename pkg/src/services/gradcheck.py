"""
Finite-difference checks of every analytic gradient in the pipeline.

Each suite returns the relative error
``max|analytic - numeric| / max(max|numeric|, 1e-30)``.
"""

import logging
from collections.abc import Callable

import numpy as np

from src.entity.models import OrientedPointCloud, ScalarGrid, VectorGrid
from src.schemas.grid import GridSpec
from src.schemas.solver import SolverParams
from src.services.grid import sample_trilinear, sample_trilinear_grad
from src.services.metrics import chamfer_l2, grid_mse
from src.services.rasterizer import rasterize, rasterize_backward
from src.services.solver import dpsr_backward, dpsr_forward, solve_raw, solve_raw_adjoint, spectral_kernel

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4
FD_STEP = 1e-6


def central_difference(func: Callable[[np.ndarray], float], x: np.ndarray, eps: float = FD_STEP) -> np.ndarray:
    """
    Numerical gradient of a scalar function by central differences.

    >>> central_difference(lambda v: float((v**2).sum()), np.array([1.0, -2.0])).round(6).tolist()
    [2.0, -4.0]
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x, flat_grad = x.reshape(-1), grad.reshape(-1)
    for i in range(flat_x.size):
        original = flat_x[i]
        flat_x[i] = original + eps
        upper = func(x)
        flat_x[i] = original - eps
        lower = func(x)
        flat_x[i] = original
        flat_grad[i] = (upper - lower) / (2.0 * eps)
    return grad


def relative_error(analytic, numeric) -> float:
    analytic, numeric = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(analytic - numeric)) / max(float(np.max(np.abs(numeric))), 1e-30))


def interior_points(n: int, spec: GridSpec, rng: np.random.Generator, margin: float = 0.1) -> np.ndarray:
    """Random points kept ``margin`` (in cell units) away from every cell face."""
    r = spec.resolution
    cells = rng.integers(0, r, size=(n, 3))
    return (cells + rng.uniform(margin, 1.0 - margin, size=(n, 3))) / r


def check_trilinear(spec: GridSpec, rng: np.random.Generator, n: int = 32) -> float:
    grid = ScalarGrid(spec, rng.standard_normal(spec.shape))
    points = interior_points(n, spec, rng)
    weights = rng.standard_normal(n)
    _, analytic = sample_trilinear_grad(grid, points, weights)
    numeric = central_difference(lambda p: float(weights @ sample_trilinear(grid, p)), points)
    return relative_error(analytic, numeric)


def check_rasterizer(spec: GridSpec, rng: np.random.Generator, n: int = 32) -> float:
    positions = interior_points(n, spec, rng)
    normals = rng.standard_normal((n, 3))
    upstream = VectorGrid(spec, rng.standard_normal((3, *spec.shape)))

    def loss(p, q):
        return float(np.sum(rasterize(OrientedPointCloud(p, q), spec).values * upstream.values))

    grad_positions, grad_normals = rasterize_backward(OrientedPointCloud(positions, normals), spec, upstream)
    numeric_positions = central_difference(lambda p: loss(p, normals), positions)
    numeric_normals = central_difference(lambda q: loss(positions, q), normals)
    return max(relative_error(grad_positions, numeric_positions), relative_error(grad_normals, numeric_normals))


def check_solver_adjoint(spec: GridSpec, rng: np.random.Generator, sigma: float = 1.0) -> float:
    """Dot-product test ``<solve(v), G> = <v, solve^T(G)>`` of the raw solve."""
    v = VectorGrid(spec, rng.standard_normal((3, *spec.shape)))
    upstream = rng.standard_normal(spec.shape)
    chi = solve_raw(v, SolverParams(sigma=sigma))
    adjoint = solve_raw_adjoint(upstream, spectral_kernel(spec, float(sigma)))
    return relative_error(np.sum(v.values * adjoint), np.sum(chi.values * upstream))


def check_dpsr(spec: GridSpec, rng: np.random.Generator, n: int = 64, sigma: float = 1.0) -> float:
    """Full chain: rasterize, spectral solve and normalization, for loss ``<chi, G>``."""
    params = SolverParams(sigma=sigma)
    positions = interior_points(n, spec, rng)
    normals = rng.standard_normal((n, 3))
    upstream = ScalarGrid(spec, rng.standard_normal(spec.shape))

    def loss(p, q):
        chi, _ = dpsr_forward(OrientedPointCloud(p, q), spec, params)
        return float(np.sum(chi.values * upstream.values))

    cloud = OrientedPointCloud(positions, normals)
    _, tape = dpsr_forward(cloud, spec, params)
    grad_positions, grad_normals = dpsr_backward(tape, cloud, upstream)
    numeric_positions = central_difference(lambda p: loss(p, normals), positions)
    numeric_normals = central_difference(lambda q: loss(positions, q), normals)
    return max(relative_error(grad_positions, numeric_positions), relative_error(grad_normals, numeric_normals))


def check_chamfer(rng: np.random.Generator, n: int = 128) -> float:
    a = rng.uniform(size=(n, 3))
    b = rng.uniform(size=(n, 3))
    _, analytic = chamfer_l2(a, b)
    numeric = central_difference(lambda x: chamfer_l2(x, b)[0], a)
    return relative_error(analytic, numeric)


def check_grid_mse(spec: GridSpec, rng: np.random.Generator) -> float:
    target = ScalarGrid(spec, rng.standard_normal(spec.shape))
    pred = rng.standard_normal(spec.shape)
    _, analytic = grid_mse(ScalarGrid(spec, pred), target)
    # exact on a quadratic
    numeric = central_difference(lambda x: grid_mse(ScalarGrid(spec, x), target)[0], pred, eps=1e-3)
    return relative_error(analytic, numeric)


def run_suite(resolutions=(8, 16), seed: int = 0) -> dict[str, float]:
    """
    Runs every check and returns ``{name: relative error}``.

    Grid-dependent checks run once per resolution, named ``<check>@r<resolution>``.
    """
    rng = np.random.default_rng(seed)
    results = {"chamfer": check_chamfer(rng)}
    for resolution in resolutions:
        spec = GridSpec(resolution=resolution)
        results[f"trilinear@r{resolution}"] = check_trilinear(spec, rng)
        results[f"rasterizer@r{resolution}"] = check_rasterizer(spec, rng)
        results[f"solver_adjoint@r{resolution}"] = check_solver_adjoint(spec, rng)
        results[f"dpsr@r{resolution}"] = check_dpsr(spec, rng)
        results[f"grid_mse@r{resolution}"] = check_grid_mse(spec, rng)
    for name, error in results.items():
        logger.info(f"gradcheck {name}: {error:.3e}")
    return results
