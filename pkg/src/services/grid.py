import logging

import numpy as np

from src.conf import messages
from src.entity.models import FrequencyGrid, ScalarGrid, TrilinearStencil
from src.schemas.grid import GridSpec
from src.services.errors import NonFiniteInputError, OutOfDomainError

logger = logging.getLogger(__name__)

# corner k of a cell is offset (k & 1, k >> 1 & 1, k >> 2 & 1), x fastest
CORNER_OFFSETS = np.array([[k & 1, (k >> 1) & 1, (k >> 2) & 1] for k in range(8)], dtype=np.int64)


def wrap_points(points) -> np.ndarray:
    """
    Maps points into [0, 1)^3 with at most one periodic wrap per axis.

    :param points: array-like (N, 3) or (3,): Query points.
    :return: np.ndarray (N, 3): Wrapped points, floating dtype preserved.
    """
    points = np.asarray(points)
    if not np.issubdtype(points.dtype, np.floating):
        points = points.astype(np.float64)
    points = np.atleast_2d(points)
    if points.shape[-1] != 3:
        raise ValueError(f"points must have 3 coordinates, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise NonFiniteInputError(messages.NON_FINITE_INPUT)

    wrapped = np.where(points >= 1.0, points - 1.0, points)
    wrapped = np.where(points < 0.0, points + 1.0, wrapped)
    # tiny negatives round up to exactly 1 after the shift
    wrapped = np.where((points < 0.0) & (wrapped >= 1.0), 0.0, wrapped).astype(points.dtype, copy=False)

    outside = np.any((wrapped < 0.0) | (wrapped >= 1.0), axis=1)
    if outside.any():
        index = int(np.flatnonzero(outside)[0])
        raise OutOfDomainError(messages.OUT_OF_DOMAIN.format(index=index, point=points[index].tolist()), index)
    return wrapped


def trilinear_stencil(points, spec: GridSpec) -> TrilinearStencil:
    """
    Builds the 8-corner trilinear stencil of every point.

    Weight gradients are the one-sided derivatives inside the enclosing cell.

    :param points: array-like (N, 3): Points in the unit cube.
    :param spec: GridSpec: Target grid.
    :return: TrilinearStencil: Corners (N, 8, 3), weights (N, 8), weight gradients (N, 8, 3).
    """
    p = wrap_points(points)
    r = spec.resolution
    scaled = p * r
    base = np.minimum(np.floor(scaled).astype(np.int64), r - 1)
    frac = (scaled - base).astype(p.dtype, copy=False)

    upper = CORNER_OFFSETS[None, :, :] == 1
    factors = np.where(upper, frac[:, None, :], 1.0 - frac[:, None, :])
    slopes = np.where(CORNER_OFFSETS == 1, r, -r).astype(p.dtype)

    weights = factors.prod(axis=2)
    weight_grads = np.empty_like(factors)
    for axis in range(3):
        others = [a for a in range(3) if a != axis]
        weight_grads[..., axis] = slopes[None, :, axis] * factors[..., others[0]] * factors[..., others[1]]

    corners = (base[:, None, :] + CORNER_OFFSETS[None, :, :]) % r
    return TrilinearStencil(spec=spec, corners=corners, weights=weights, weight_grads=weight_grads)


def trilinear_weights(point, spec: GridSpec) -> list[tuple[int, float]]:
    """
    The 8 (linear voxel index, weight) pairs enclosing a single point.

    >>> trilinear_weights([0.5, 0.5, 0.5], GridSpec(resolution=4))[0]
    (42, 1.0)
    """
    stencil = trilinear_stencil(np.asarray(point, dtype=np.float64).reshape(1, 3), spec)
    return [(int(i), float(w)) for i, w in zip(stencil.linear_index[0], stencil.weights[0])]


def gather(values: np.ndarray, stencil: TrilinearStencil) -> np.ndarray:
    """
    Corner values of a grid array for every stencil entry.

    :param values: np.ndarray (r, r, r) or (C, r, r, r).
    :return: np.ndarray (N, 8) or (C, N, 8).
    """
    c = stencil.corners
    return values[..., c[..., 0], c[..., 1], c[..., 2]]


def scatter(point_values: np.ndarray, stencil: TrilinearStencil, dtype=None) -> np.ndarray:
    """
    Sums per-point scalars into the grid through the stencil weights.

    Accumulation is sequential in point order, so the result is deterministic.

    :param point_values: np.ndarray (N,): One value per point.
    :return: np.ndarray (r, r, r).
    """
    spec = stencil.spec
    contributions = stencil.weights * point_values[:, None]
    flat = np.bincount(stencil.linear_index.ravel(), weights=contributions.ravel(), minlength=spec.voxel_count)
    dtype = dtype or np.result_type(point_values.dtype, stencil.weights.dtype)
    return flat.reshape(spec.shape, order="F").astype(dtype, copy=False)


def sample_with_stencil(values: np.ndarray, stencil: TrilinearStencil) -> np.ndarray:
    return np.einsum("nk,nk->n", gather(values, stencil), stencil.weights)


def sample_grad_with_stencil(values: np.ndarray, stencil: TrilinearStencil, upstream: np.ndarray):
    """Adjoint of :func:`sample_with_stencil` w.r.t. grid values and point positions."""
    grad_grid = scatter(upstream, stencil, dtype=values.dtype)
    grad_points = np.einsum("n,nk,nka->na", upstream, gather(values, stencil), stencil.weight_grads)
    return grad_grid, grad_points


def sample_trilinear(grid: ScalarGrid, points) -> np.ndarray:
    """
    Trilinear interpolation of a scalar grid at arbitrary points.

    :param grid: ScalarGrid: Field to sample.
    :param points: array-like (N, 3): Points in the unit cube.
    :return: np.ndarray (N,): Interpolated values.
    """
    return sample_with_stencil(grid.values, trilinear_stencil(points, grid.spec))


def sample_trilinear_grad(grid: ScalarGrid, points, upstream) -> tuple[ScalarGrid, np.ndarray]:
    """
    Backward pass of :func:`sample_trilinear`.

    :param grid: ScalarGrid: The sampled field.
    :param points: array-like (N, 3): The sample locations.
    :param upstream: array-like (N,): dL/d(sample).
    :return: (dL/dgrid as ScalarGrid, dL/dpoints (N, 3))
    """
    stencil = trilinear_stencil(points, grid.spec)
    upstream = np.asarray(upstream, dtype=grid.dtype)
    if upstream.shape != (len(stencil),):
        raise ValueError(f"upstream has shape {upstream.shape}, expected ({len(stencil)},)")
    grad_grid, grad_points = sample_grad_with_stencil(grid.values, stencil, upstream)
    return ScalarGrid(grid.spec, grad_grid), grad_points


def frequency_grid(spec: GridSpec, half: bool = False) -> FrequencyGrid:
    """
    Integer wavenumbers of every voxel in DFT order.

    >>> frequency_grid(GridSpec(resolution=4)).u[:, 0, 0, 0].tolist()
    [0, 1, -2, -1]
    """
    r = spec.resolution
    full_axis = np.rint(np.fft.fftfreq(r, d=1.0 / r)).astype(np.int64)
    last_axis = np.rint(np.fft.rfftfreq(r, d=1.0 / r)).astype(np.int64) if half else full_axis
    u = np.stack(np.meshgrid(full_axis, full_axis, last_axis, indexing="ij"), axis=-1)
    return FrequencyGrid(spec=spec, u=u, sq_norm=(u**2).sum(axis=-1), half=half)
