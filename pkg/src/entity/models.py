from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from src.conf import messages
from src.schemas.grid import GridSpec
from src.services.errors import EmptyPointSetError, NonFiniteInputError


def _require_finite(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteInputError(messages.NON_FINITE_INPUT)


@dataclass(frozen=True)
class ScalarGrid:
    """Scalar field sampled on the grid nodes, ``values[x, y, z]``."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.spec.shape:
            raise ValueError(f"scalar grid shape {self.values.shape} does not match {self.spec.shape}")
        _require_finite(self.values)

    @classmethod
    def zeros(cls, spec: GridSpec, dtype=np.float64) -> "ScalarGrid":
        return cls(spec, np.zeros(spec.shape, dtype=dtype))

    @classmethod
    def from_flat(cls, spec: GridSpec, flat: np.ndarray) -> "ScalarGrid":
        return cls(spec, np.reshape(flat, spec.shape, order="F"))

    @property
    def flat(self) -> np.ndarray:
        """Voxel values in x-fastest linear order."""
        return self.values.ravel(order="F")

    @property
    def dtype(self):
        return self.values.dtype


@dataclass(frozen=True)
class VectorGrid:
    """Three-channel field, channel-major: ``values[c, x, y, z]``."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (3, *self.spec.shape):
            raise ValueError(f"vector grid shape {self.values.shape} does not match (3, {self.spec.shape})")
        _require_finite(self.values)

    @classmethod
    def from_flat(cls, spec: GridSpec, flat: np.ndarray) -> "VectorGrid":
        return cls(spec, np.reshape(flat, (3, *spec.shape), order="F"))

    @property
    def flat(self) -> np.ndarray:
        """Channel-major, x-fastest within each channel."""
        return np.concatenate([channel.ravel(order="F") for channel in self.values])

    @property
    def dtype(self):
        return self.values.dtype


@dataclass(frozen=True)
class FrequencyGrid:
    """
    Integer wavenumbers in DFT order, ``u[x, y, z] = (u, v, w)``.

    With ``half=True`` the last axis is truncated to the non-negative
    frequencies ``0..r/2`` as produced by a real-input FFT.
    """

    spec: GridSpec
    u: np.ndarray
    sq_norm: np.ndarray
    half: bool = False


@dataclass(frozen=True)
class TrilinearStencil:
    """Eight periodic cell corners per point with their trilinear weights and weight gradients."""

    spec: GridSpec
    corners: np.ndarray
    weights: np.ndarray
    weight_grads: np.ndarray

    @property
    def linear_index(self) -> np.ndarray:
        return self.spec.linear_index(self.corners[..., 0], self.corners[..., 1], self.corners[..., 2])

    def __len__(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class OrientedPointCloud:
    """
    Points with normals; the normal magnitude scales each point's contribution
    to the rasterized field and is not forced to unit length.
    """

    positions: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"positions must be N x 3, got {self.positions.shape}")
        if self.normals.shape != self.positions.shape:
            raise ValueError(f"normals {self.normals.shape} do not match positions {self.positions.shape}")
        if len(self.positions) == 0:
            raise EmptyPointSetError(messages.EMPTY_POINT_SET)
        _require_finite(self.positions)
        _require_finite(self.normals)

    def __len__(self):
        return self.positions.shape[0]

    def astype(self, dtype) -> "OrientedPointCloud":
        return OrientedPointCloud(self.positions.astype(dtype), self.normals.astype(dtype))


@dataclass(frozen=True)
class SpectralKernel:
    """
    Half-spectrum transfer ``g(u) / (-2 pi |u|^2)`` (zero at u = 0) and the
    per-axis derivative wavenumbers (Nyquist entries zeroed).
    """

    spec: GridSpec
    sigma: float
    transfer: np.ndarray
    wavenumbers: tuple[np.ndarray, np.ndarray, np.ndarray]

    def derivative(self, axis: int) -> np.ndarray:
        shape = [1, 1, 1]
        shape[axis] = -1
        return self.wavenumbers[axis].reshape(shape)


@dataclass(frozen=True)
class SolveTape:
    """Intermediates of one forward solve, enough to run the exact backward pass."""

    spec: GridSpec
    chi_raw: ScalarGrid
    mu: float
    a: float
    m: float
    stencil: TrilinearStencil
    positions: np.ndarray
    kernel: SpectralKernel | None = None


@dataclass(frozen=True)
class TriangleMesh:
    """
    Triangle soup with shared vertices, counterclockwise seen from the
    ``chi > 0`` side.
    """

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"vertices must be V x 3, got {self.vertices.shape}")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError(f"triangles must be F x 3, got {self.triangles.shape}")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle references a missing vertex")

    @classmethod
    def empty(cls, dtype=np.float64) -> "TriangleMesh":
        return cls(np.zeros((0, 3), dtype=dtype), np.zeros((0, 3), dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    @cached_property
    def _face_cross(self) -> np.ndarray:
        corners = self.vertices[self.triangles]
        return np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._face_cross, axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        lengths = np.linalg.norm(self._face_cross, axis=1, keepdims=True)
        return self._face_cross / np.where(lengths > 0, lengths, 1.0)

    def undirected_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """
        Unique undirected edges and the number of triangles bordering each.

        :return: (edges E x 2 with sorted endpoints, counts E)
        """
        if self.is_empty:
            return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
        edges = np.sort(self.triangles[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1).astype(np.int64)
        keys = edges[:, 0] * len(self.vertices) + edges[:, 1]
        unique_keys, counts = np.unique(keys, return_counts=True)
        unique_edges = np.stack(np.divmod(unique_keys, len(self.vertices)), axis=1)
        return unique_edges, counts

    def euler_characteristic(self) -> int:
        edges, _ = self.undirected_edges()
        return len(self.vertices) - len(edges) + len(self.triangles)

    def submesh(self, face_mask: np.ndarray) -> "TriangleMesh":
        """Keep the selected triangles and the vertices they use, preserving order."""
        triangles = self.triangles[face_mask]
        if len(triangles) == 0:
            return TriangleMesh.empty(self.vertices.dtype)
        used, remapped = np.unique(triangles.ravel(), return_inverse=True)
        return TriangleMesh(self.vertices[used], remapped.reshape(-1, 3))

    def transformed(self, transform: "NormalizationTransform", inverse: bool = False) -> "TriangleMesh":
        mapped = transform.inverse(self.vertices) if inverse else transform.forward(self.vertices)
        return TriangleMesh(mapped, self.triangles)


@dataclass(frozen=True)
class SurfaceSamples:
    points: np.ndarray
    normals: np.ndarray
    faces: np.ndarray
    barycentric: np.ndarray

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class NormalizationTransform:
    """Uniform similarity ``x -> x * scale + offset`` into the centered working sub-cube."""

    scale: float
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def forward(self, points: np.ndarray) -> np.ndarray:
        return points * self.scale + self.offset

    def inverse(self, points: np.ndarray) -> np.ndarray:
        return (points - self.offset) / self.scale
