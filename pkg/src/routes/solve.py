import logging

import numpy as np
from fastapi import APIRouter, HTTPException, status

from src.conf import messages
from src.conf.config import config
from src.entity.models import OrientedPointCloud
from src.schemas.api import SolveResponse, SolveSchema
from src.schemas.grid import GridSpec
from src.schemas.solver import SolverParams
from src.services.errors import ComputeError
from src.services.isosurface import marching_cubes
from src.services.optimizer import normalize_input
from src.services.solver import dpsr_forward

router = APIRouter(tags=["solve"])

logger = logging.getLogger(__name__)


def check_resolution(resolution: int) -> None:
    if resolution > config.API_MAX_RESOLUTION:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail=messages.RESOLUTION_GUARD.format(resolution=resolution, limit=config.API_MAX_RESOLUTION),
        )


def check_point_count(point_count: int) -> None:
    if point_count > config.API_MAX_POINTS:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail=f"{point_count} points exceed the limit of {config.API_MAX_POINTS}",
        )


@router.post("/solve", response_model=SolveResponse)
def solve(body: SolveSchema):
    """
    Runs one spectral Poisson solve on an oriented cloud and returns its zero level set.

    :param body: SolveSchema: Points, normals, resolution and sigma.
    :return: The mesh in input coordinates and the indicator value at grid node 0.
    """
    check_resolution(body.resolution)
    check_point_count(len(body.points))
    try:
        spec = GridSpec(resolution=body.resolution)
    except ValueError as err:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(err))

    logger.info(f"Solve request: {len(body.points)} points at r={body.resolution}")
    try:
        points = np.asarray(body.points, dtype=np.float64)
        transform = None
        if body.normalize:
            points, transform = normalize_input(points)
        cloud = OrientedPointCloud(points, np.asarray(body.normals, dtype=np.float64))
        chi, _ = dpsr_forward(cloud, spec, SolverParams(sigma=body.sigma))
        mesh = marching_cubes(chi)
    except ComputeError as err:
        logger.warning(f"Solve failed: {err}")
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(err))

    if transform is not None:
        mesh = mesh.transformed(transform, inverse=True)
    return SolveResponse(
        resolution=spec.resolution,
        sigma=body.sigma,
        chi_origin=float(chi.values[0, 0, 0]),
        vertices=mesh.vertices.tolist(),
        triangles=mesh.triangles.tolist(),
    )
