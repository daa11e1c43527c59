import logging
from pathlib import Path

import numpy as np
import trimesh

from src.conf import messages
from src.repository.meshes import load_geometry
from src.services.errors import FormatError, ParseError

logger = logging.getLogger(__name__)

NORMAL_NAMES = ("nx", "ny", "nz")


def read_point_cloud(path) -> tuple[np.ndarray, np.ndarray | None]:
    """
    Reads points and, when every point has them, normals.

    ``.xyz``: one point per line, ``x y z`` or ``x y z nx ny nz``, ``#`` starts a comment.
    ``.ply``: vertex element with x, y, z and optionally nx, ny, nz.

    :param path: str | Path: Input file.
    :return: (points (N, 3) float64, normals (N, 3) float64 or None)
    :raises ParseError: Malformed file; xyz errors name the line.
    :raises FormatError: Unsupported extension.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".xyz":
        points, normals = _read_xyz(path)
    elif suffix == ".ply":
        points, normals = _read_ply_cloud(path)
    else:
        raise FormatError(messages.UNSUPPORTED_EXTENSION.format(suffix=suffix, path=path))
    logger.info(f"Read {len(points)} points{' with normals' if normals is not None else ''} from {path}")
    return points, normals


def _read_xyz(path: Path) -> tuple[np.ndarray, np.ndarray | None]:
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            content = line.split("#", 1)[0].strip()
            if not content:
                continue
            tokens = content.split()
            if len(tokens) not in (3, 6):
                raise ParseError(f"expected 3 or 6 columns, found {len(tokens)}", str(path), line=number)
            if width is not None and len(tokens) != width:
                raise ParseError(
                    f"normals present on some rows only ({len(tokens)} columns after {width})", str(path), line=number
                )
            width = len(tokens)
            try:
                rows.append([float(token) for token in tokens])
            except ValueError:
                raise ParseError(f"non-numeric value in {content!r}", str(path), line=number) from None

    data = np.asarray(rows, dtype=np.float64).reshape(-1, width or 3)
    return data[:, :3].copy(), (data[:, 3:].copy() if width == 6 else None)


def _read_ply_cloud(path: Path) -> tuple[np.ndarray, np.ndarray | None]:
    geometry = load_geometry(path)
    properties = geometry.vertex_properties
    present = [name in properties for name in NORMAL_NAMES]
    if any(present) and not all(present):
        raise ParseError("vertex element declares only some of nx, ny, nz", str(path))
    normals = None
    if all(present):
        normals = np.stack([properties[name] for name in NORMAL_NAMES], axis=1).astype(np.float64)
    return geometry.vertices, normals


def write_point_cloud(path, points: np.ndarray, normals: np.ndarray | None = None) -> None:
    """
    Writes points (and normals).

    :param path: str | Path: ``.xyz`` (text, double precision) or ``.ply`` (binary little-endian
        float32 through trimesh).
    :raises FormatError: Unsupported extension.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    points = np.asarray(points, dtype=np.float64)

    if suffix == ".xyz":
        columns = points if normals is None else np.hstack([points, np.asarray(normals, dtype=np.float64)])
        np.savetxt(path, columns, fmt="%.17g")
    elif suffix == ".ply":
        cloud = trimesh.Trimesh(
            vertices=points,
            faces=np.zeros((0, 3), dtype=np.int64),
            vertex_normals=None if normals is None else np.asarray(normals, dtype=np.float64),
            process=False,
        )
        cloud.export(str(path), file_type="ply", encoding="binary", vertex_normal=normals is not None)
    else:
        raise FormatError(messages.UNSUPPORTED_EXTENSION.format(suffix=suffix, path=path))
    logger.info(f"Wrote {len(points)} points to {path}")
