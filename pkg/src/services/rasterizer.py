import numpy as np

from src.conf import messages
from src.entity.models import OrientedPointCloud, TrilinearStencil, VectorGrid
from src.schemas.grid import GridSpec
from src.services.errors import GridSpecMismatchError
from src.services.grid import gather, scatter, trilinear_stencil


def rasterize(cloud: OrientedPointCloud, spec: GridSpec, stencil: TrilinearStencil | None = None) -> VectorGrid:
    """
    Splats every normal onto the 8 corners of its cell with trilinear weights.

    The per-channel grid sum equals the per-channel sum of the normals.

    :param cloud: OrientedPointCloud: Points in the unit cube.
    :param spec: GridSpec: Target grid.
    :param stencil: TrilinearStencil | None: Precomputed stencil of ``cloud.positions``.
    :return: VectorGrid: The normal field v.
    """
    if stencil is None:
        stencil = trilinear_stencil(cloud.positions, spec)
    values = np.stack([scatter(cloud.normals[:, c], stencil) for c in range(3)])
    return VectorGrid(spec, values.astype(cloud.normals.dtype, copy=False))


def rasterize_backward(
    cloud: OrientedPointCloud, spec: GridSpec, upstream: VectorGrid, stencil: TrilinearStencil | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """
    Adjoint of :func:`rasterize`.

    :param upstream: VectorGrid: dL/dv.
    :return: (dL/dpositions (N, 3), dL/dnormals (N, 3))
    """
    if upstream.spec != spec:
        raise GridSpecMismatchError(messages.SPEC_MISMATCH.format(left=spec, right=upstream.spec))
    if stencil is None:
        stencil = trilinear_stencil(cloud.positions, spec)
    corner_values = gather(upstream.values, stencil)
    grad_normals = np.einsum("cnk,nk->nc", corner_values, stencil.weights)
    projected = np.einsum("nc,cnk->nk", cloud.normals, corner_values)
    grad_positions = np.einsum("nk,nka->na", projected, stencil.weight_grads)
    return grad_positions, grad_normals
