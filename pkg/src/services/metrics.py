import logging

import numpy as np
from scipy.spatial import cKDTree

from src.conf import messages
from src.entity.models import ScalarGrid
from src.services.errors import EmptyPointSetError, GridSpecMismatchError, NonUnitNormalError

logger = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-6


def _point_set(points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise EmptyPointSetError(messages.EMPTY_POINT_SET)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"point set must be N x 3, got {points.shape}")
    return points


class NearestNeighborIndex:
    """
    Exact nearest-neighbor queries against a fixed point set.

    Ties between equidistant neighbors go to the lowest index.
    """

    def __init__(self, points):
        self._points = _point_set(points)
        self._points.setflags(write=False)
        self._tree = cKDTree(self._points)

    @property
    def points(self) -> np.ndarray:
        return self._points

    def __len__(self):
        return len(self._points)

    def query(self, queries) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        :param queries: array-like (M, 3)
        :return: (nearest points (M, 3), their indices (M,), squared distances (M,))
        """
        queries = _point_set(queries)
        if len(self._points) == 1:
            index = np.zeros(len(queries), dtype=np.int64)
        else:
            distance, candidates = self._tree.query(queries, k=2)
            tie = distance[:, 0] == distance[:, 1]
            index = np.where(tie, candidates.min(axis=1), candidates[:, 0]).astype(np.int64)
        nearest = self._points[index]
        sq_distance = np.sum((queries - nearest) ** 2, axis=1)
        return nearest, index, sq_distance


def chamfer_l2(a, b) -> tuple[float, np.ndarray]:
    """
    Bidirectional squared Chamfer distance and its gradient w.r.t. ``a``.

    ``mean_a min_b |a - b|^2 + mean_b min_a |b - a|^2``

    :param a: array-like (N, 3): Moving points.
    :param b: array-like (M, 3): Fixed target.
    :return: (value, dValue/da (N, 3))
    """
    a, b = _point_set(a), _point_set(b)
    nearest_in_b, _, forward = NearestNeighborIndex(b).query(a)
    nearest_in_a, index_in_a, backward = NearestNeighborIndex(a).query(b)
    value = float(forward.mean() + backward.mean())

    grad = 2.0 * (a - nearest_in_b) / len(a)
    np.add.at(grad, index_in_a, 2.0 * (nearest_in_a - b) / len(b))
    return value, grad


def chamfer_l1_metric(a, b) -> float:
    """
    Evaluation Chamfer distance: half the sum of the two mean unsquared
    nearest-neighbor distances.
    """
    a, b = _point_set(a), _point_set(b)
    _, _, forward = NearestNeighborIndex(b).query(a)
    _, _, backward = NearestNeighborIndex(a).query(b)
    return 0.5 * float(np.sqrt(forward).mean() + np.sqrt(backward).mean())


def fscore(pred, gt, tau: float = 0.01) -> float:
    """
    Harmonic mean of precision and recall at distance threshold ``tau``.

    >>> round(fscore([[0.0, 0.0, 0.0]], [[0.0, 0.0, 0.0]]), 6)
    1.0
    """
    pred, gt = _point_set(pred), _point_set(gt)
    _, _, to_gt = NearestNeighborIndex(gt).query(pred)
    _, _, to_pred = NearestNeighborIndex(pred).query(gt)
    precision = float(np.mean(np.sqrt(to_gt) <= tau))
    recall = float(np.mean(np.sqrt(to_pred) <= tau))
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _unit_normals(normals, count: int) -> np.ndarray:
    normals = np.asarray(normals, dtype=np.float64)
    if normals.shape != (count, 3):
        raise ValueError(f"normals must be {count} x 3, got {normals.shape}")
    if np.any(np.abs(np.linalg.norm(normals, axis=1) - 1.0) > UNIT_TOLERANCE):
        raise NonUnitNormalError(messages.NON_UNIT_NORMALS)
    return normals


def normal_consistency(points_a, normals_a, points_b, normals_b) -> float:
    """
    Symmetric mean absolute cosine between nearest-neighbor normal pairs.

    :return: float in [0, 1]; orientation flips do not count against it.
    """
    points_a, points_b = _point_set(points_a), _point_set(points_b)
    normals_a = _unit_normals(normals_a, len(points_a))
    normals_b = _unit_normals(normals_b, len(points_b))
    _, index_in_b, _ = NearestNeighborIndex(points_b).query(points_a)
    _, index_in_a, _ = NearestNeighborIndex(points_a).query(points_b)
    forward = np.abs(np.einsum("nd,nd->n", normals_a, normals_b[index_in_b])).mean()
    backward = np.abs(np.einsum("nd,nd->n", normals_b, normals_a[index_in_a])).mean()
    return float(0.5 * (forward + backward))


def grid_mse(pred: ScalarGrid, gt: ScalarGrid) -> tuple[float, np.ndarray]:
    """
    Mean squared difference of two indicator grids and its gradient w.r.t. ``pred``.

    :raises GridSpecMismatchError: The grids differ in resolution.
    """
    if pred.spec != gt.spec:
        raise GridSpecMismatchError(messages.SPEC_MISMATCH.format(left=pred.spec, right=gt.spec))
    diff = pred.values.astype(np.float64) - gt.values
    n = pred.spec.voxel_count
    return float(np.sum(diff**2) / n), 2.0 * diff / n
