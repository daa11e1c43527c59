import logging

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from skimage import measure

from src.conf import messages
from src.entity.models import ScalarGrid, SurfaceSamples, TriangleMesh
from src.schemas.grid import GridSpec
from src.services.errors import EmptyMeshError
from src.services.grid import sample_trilinear_grad, scatter, trilinear_stencil

logger = logging.getLogger(__name__)

# exact zeros make the MC case index ambiguous
ZERO_NUDGE = 1e-12


def _snap_to_edges(volume: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """
    Recomputes every vertex in double precision by linear interpolation along
    the grid edge it lies on.

    :param volume: np.ndarray (r, r, r): Field shifted so the level is 0.
    :param vertices: np.ndarray (V, 3): Vertices in index coordinates.
    :return: np.ndarray (V, 3): Index coordinates, float64.
    """
    vertices = vertices.astype(np.float64)
    nearest = np.rint(vertices)
    axis = np.argmax(np.abs(vertices - nearest), axis=1)
    rows = np.arange(len(vertices))

    lower = nearest.astype(np.int64)
    lower[rows, axis] = np.clip(np.floor(vertices[rows, axis]).astype(np.int64), 0, volume.shape[0] - 2)
    upper = lower.copy()
    upper[rows, axis] += 1

    v0 = volume[lower[:, 0], lower[:, 1], lower[:, 2]]
    v1 = volume[upper[:, 0], upper[:, 1], upper[:, 2]]
    crossing = np.sign(v0) != np.sign(v1)
    t = np.where(crossing, v0 / np.where(crossing, v0 - v1, 1.0), 0.0)

    snapped = vertices.copy()
    snapped[rows, axis] = np.where(crossing, lower[rows, axis] + t, vertices[rows, axis])
    return snapped


def _orient_toward_positive(field: ScalarGrid, vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Fixes the winding so area-weighted face normals ascend the field."""
    corners = vertices[triangles]
    cross = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    centroids = corners.mean(axis=1)
    _, gradient = sample_trilinear_grad(field, centroids, np.ones(len(centroids)))
    if np.einsum("fa,fa->", cross, gradient) < 0:
        return triangles[:, ::-1].copy()
    return triangles


def marching_cubes(chi: ScalarGrid, iso: float = 0.0) -> TriangleMesh:
    """
    Extracts the ``chi = iso`` level set.

    The grid is treated as a non-periodic lattice of ``r - 1`` cells per axis;
    faces are counterclockwise seen from the ``chi > iso`` side.

    :param chi: ScalarGrid: Indicator grid.
    :param iso: float: Level to extract.
    :return: TriangleMesh: Empty when the field does not cross the level.
    """
    volume = chi.values.astype(np.float64) - iso
    volume[volume == 0.0] = ZERO_NUDGE
    if volume.min() > 0 or volume.max() < 0:
        return TriangleMesh.empty(chi.dtype)

    vertices, triangles, _, _ = measure.marching_cubes(volume, level=0.0, method="lewiner", allow_degenerate=True)
    vertices = _snap_to_edges(volume, vertices) * chi.spec.voxel_size
    triangles = triangles.astype(np.int64)
    distinct = (
        (triangles[:, 0] != triangles[:, 1])
        & (triangles[:, 1] != triangles[:, 2])
        & (triangles[:, 0] != triangles[:, 2])
    )
    triangles = _orient_toward_positive(ScalarGrid(chi.spec, volume), vertices, triangles[distinct])

    mesh = TriangleMesh(vertices.astype(chi.dtype, copy=False), triangles).submesh(np.ones(len(triangles), dtype=bool))
    logger.debug(f"Marching cubes at r={chi.spec.resolution}: {len(mesh.vertices)} vertices, {len(mesh.triangles)} faces")
    return mesh


def largest_component(mesh: TriangleMesh) -> TriangleMesh:
    """
    The edge-connected component with the greatest surface area.

    :param mesh: TriangleMesh: Any mesh, possibly empty.
    :return: TriangleMesh: The selected component (empty in, empty out).
    """
    if mesh.is_empty:
        return mesh
    face_count = len(mesh.triangles)
    edges = np.sort(mesh.triangles[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1).astype(np.int64)
    keys = edges[:, 0] * len(mesh.vertices) + edges[:, 1]
    owners = np.repeat(np.arange(face_count), 3)

    order = np.argsort(keys, kind="stable")
    keys, owners = keys[order], owners[order]
    shared = keys[1:] == keys[:-1]
    adjacency = coo_matrix(
        (np.ones(shared.sum()), (owners[:-1][shared], owners[1:][shared])), shape=(face_count, face_count)
    )
    component_count, labels = connected_components(adjacency, directed=False)
    if component_count == 1:
        return mesh

    areas = np.bincount(labels, weights=mesh.face_areas, minlength=component_count)
    logger.debug(f"Keeping 1 of {component_count} components ({areas.max():.4f} of {areas.sum():.4f} area)")
    return mesh.submesh(labels == np.argmax(areas))


def sample_surface(mesh: TriangleMesh, count: int, rng_seed=None) -> SurfaceSamples:
    """
    Area-uniform random points on the mesh, each carrying its face normal.

    :param mesh: TriangleMesh: Non-empty mesh.
    :param count: int: Number of samples.
    :param rng_seed: Seed (int, sequence of ints or SeedSequence); fixed seed gives identical output.
    :return: SurfaceSamples
    :raises EmptyMeshError: The mesh has no triangles.
    """
    if mesh.is_empty:
        raise EmptyMeshError(messages.EMPTY_MESH)
    if count < 1:
        raise ValueError(f"sample count must be positive, got {count}")
    rng = np.random.default_rng(rng_seed)
    areas = mesh.face_areas.astype(np.float64)
    faces = rng.choice(len(areas), size=count, p=areas / areas.sum())

    root = np.sqrt(rng.random(count))
    second = rng.random(count)
    barycentric = np.stack([1.0 - root, root * (1.0 - second), root * second], axis=1)
    corners = mesh.vertices[mesh.triangles[faces]]
    points = np.einsum("mk,mkd->md", barycentric, corners).astype(mesh.vertices.dtype, copy=False)
    return SurfaceSamples(points=points, normals=mesh.face_normals[faces], faces=faces, barycentric=barycentric)


def mesh_grad_to_grid(samples: SurfaceSamples, dL_dpoints: np.ndarray, spec: GridSpec) -> ScalarGrid:
    """
    Carries a loss gradient on surface samples back to the indicator grid.

    A sample moves along ``-n`` when chi grows, so each sample contributes
    ``(dL/dp) . (-n)``, splatted with the trilinear weights of its position.

    :param samples: SurfaceSamples: Points and unit normals.
    :param dL_dpoints: np.ndarray (M, 3): Loss gradient per sample.
    :param spec: GridSpec: The indicator grid.
    :return: ScalarGrid: dL/dchi.
    """
    dL_dpoints = np.asarray(dL_dpoints)
    if dL_dpoints.shape != samples.points.shape:
        raise ValueError(f"gradient shape {dL_dpoints.shape} does not match samples {samples.points.shape}")
    contraction = -np.einsum("md,md->m", dL_dpoints, samples.normals)
    stencil = trilinear_stencil(samples.points, spec)
    return ScalarGrid(spec, scatter(contraction, stencil))
