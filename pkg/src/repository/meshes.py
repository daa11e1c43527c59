import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import trimesh

from src.conf import messages
from src.entity.models import TriangleMesh
from src.services.errors import FormatError, ParseError

logger = logging.getLogger(__name__)

MESH_SUFFIXES = (".obj", ".ply")

# trimesh cannot export a geometry without vertices
EMPTY_FILES = {
    ".obj": "# empty mesh\n",
    ".ply": (
        "ply\nformat binary_little_endian 1.0\n"
        "element vertex 0\nproperty float x\nproperty float y\nproperty float z\n"
        "element face 0\nproperty list uchar int vertex_indices\nend_header\n"
    ),
}


@dataclass
class LoadedGeometry:
    """Vertices and triangles of a loaded file plus its raw PLY vertex properties, if any."""

    vertices: np.ndarray
    triangles: np.ndarray
    vertex_properties: dict[str, np.ndarray] = field(default_factory=dict)


def _suffix(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix not in MESH_SUFFIXES:
        raise FormatError(messages.UNSUPPORTED_EXTENSION.format(suffix=suffix, path=path))
    return suffix


def _as_mesh(loaded) -> trimesh.Trimesh | trimesh.PointCloud:
    if not isinstance(loaded, trimesh.Scene):
        return loaded
    meshes = [g for g in loaded.geometry.values() if isinstance(g, trimesh.Trimesh)]
    if not meshes:
        return trimesh.PointCloud(np.zeros((0, 3)))
    return trimesh.util.concatenate(
        tuple(trimesh.Trimesh(vertices=g.vertices, faces=g.faces, process=False) for g in meshes)
    )


def _ply_vertex_properties(geometry) -> dict[str, np.ndarray]:
    metadata = getattr(geometry, "metadata", None) or {}
    raw = metadata.get("_ply_raw", metadata.get("ply_raw"))
    if not raw or "vertex" not in raw:
        return {}
    vertex = raw["vertex"]
    return {name: np.asarray(vertex["data"][name]) for name in vertex["properties"]}


def load_geometry(path) -> LoadedGeometry:
    """
    Loads an ``.obj`` or ``.ply`` file with trimesh, keeping vertex order.

    :param path: str | Path: Input file.
    :return: LoadedGeometry: Triangles are empty for a bare point cloud.
    :raises ParseError: trimesh could not parse the file or a face references a missing vertex.
    :raises FormatError: Unsupported extension.
    """
    path = Path(path)
    suffix = _suffix(path)
    if not path.is_file():
        raise FileNotFoundError(f"No such file: {path}")
    options = {"maintain_order": True} if suffix == ".obj" else {}
    try:
        loaded = _as_mesh(trimesh.load(str(path), file_type=suffix[1:], process=False, **options))
    except (ValueError, IndexError, KeyError, TypeError) as err:
        raise ParseError(f"unreadable {suffix[1:].upper()} file: {err}", str(path)) from err

    vertices = np.asarray(loaded.vertices, dtype=np.float64).reshape(-1, 3)
    triangles = np.asarray(getattr(loaded, "faces", np.zeros((0, 3))), dtype=np.int64).reshape(-1, 3)
    if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
        raise ParseError("face references a missing vertex", str(path))
    properties = _ply_vertex_properties(loaded) if suffix == ".ply" else {}
    return LoadedGeometry(vertices, triangles, properties)


def write_mesh(path, mesh: TriangleMesh) -> None:
    """
    Writes a triangle mesh through trimesh.

    ``.obj``: ``v x y z`` and 1-based ``f i j k`` lines.
    ``.ply``: binary little-endian, float32 vertices, uchar-counted int32 face lists.

    :param path: str | Path: Output file; the extension selects the format.
    :param mesh: TriangleMesh: May be empty.
    :raises FormatError: Unsupported extension.
    """
    path = Path(path)
    suffix = _suffix(path)
    if mesh.is_empty:
        path.write_text(EMPTY_FILES[suffix], encoding="ascii")
    else:
        exported = trimesh.Trimesh(vertices=mesh.vertices, faces=mesh.triangles, process=False)
        if suffix == ".obj":
            exported.export(
                str(path),
                file_type="obj",
                include_normals=False,
                include_color=False,
                include_texture=False,
                digits=17,
            )
        else:
            exported.export(str(path), file_type="ply", encoding="binary", vertex_normal=False)
    logger.info(f"Wrote mesh with {len(mesh.vertices)} vertices and {len(mesh.triangles)} faces to {path}")


def read_mesh(path) -> TriangleMesh:
    """
    Reads an ``.obj`` or ``.ply`` triangle mesh; quads are split by trimesh.

    A PLY without a face element reads as a mesh with no triangles.

    :raises ParseError: Malformed file.
    :raises FormatError: Unsupported extension.
    """
    geometry = load_geometry(path)
    mesh = TriangleMesh(geometry.vertices, geometry.triangles)
    logger.info(f"Read mesh with {len(mesh.vertices)} vertices and {len(mesh.triangles)} faces from {path}")
    return mesh
