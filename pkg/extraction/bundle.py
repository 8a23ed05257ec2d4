"""
Mesh bundles on disk: a directory holding global.obj, part_NNN.obj, hull_NNN.obj
and manifest.json.
"""
import json
import logging
from pathlib import Path

from errors import MalformedFile
from models import HullMesh, MeshBundle, Normalization, TriangleMesh
from .surface import read_obj, write_obj

__all__ = ['write_bundle', 'read_bundle', 'write_hulls', 'update_hulls']

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.json'
GLOBAL_MESH = 'global.obj'


def _part_name(part_id: int) -> str:
    return f'part_{part_id:03d}.obj'


def _hull_name(part_id: int) -> str:
    return f'hull_{part_id:03d}.obj'


def _write_manifest(directory: Path, manifest: dict) -> None:
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n')


def write_hulls(hulls: list[HullMesh], directory: str | Path, normalization: Normalization | None = None) -> list[dict]:
    directory = Path(directory)
    entries = []
    for hull in hulls:
        name = _hull_name(hull.part_id)
        write_obj(hull.mesh, directory / name, normalization)
        entries.append({'id': hull.part_id, 'file': name, 'degenerate': hull.degenerate})
    return entries


def write_bundle(bundle: MeshBundle, directory: str | Path, normalization: Normalization | None = None) -> Path:
    """Writes every mesh in shape units plus the manifest. Empty parts are listed but have no file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_obj(bundle.global_mesh, directory / GLOBAL_MESH, normalization)

    parts = []
    for part_id, mesh in sorted(bundle.parts.items()):
        entry = {'id': part_id, 'file': None, 'vertices': len(mesh.vertices), 'triangles': len(mesh.triangles)}
        if not mesh.is_empty:
            entry['file'] = _part_name(part_id)
            write_obj(mesh, directory / entry['file'], normalization)
        parts.append(entry)

    manifest = dict(bundle.provenance)
    manifest.update(global_mesh=GLOBAL_MESH, parts=parts, hulls=write_hulls(bundle.hulls, directory, normalization))
    _write_manifest(directory, manifest)
    logger.info(f'Wrote bundle with {len(parts)} parts and {len(bundle.hulls)} hulls to {directory}')
    return directory


def read_bundle(directory: str | Path) -> MeshBundle:
    """Reads a bundle back in the units it was written in."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text())
        entries = manifest.pop('parts')
        manifest.pop('hulls', None)
        global_name = manifest.pop('global_mesh', GLOBAL_MESH)
    except (OSError, ValueError, KeyError) as e:
        raise MalformedFile(f'{directory}: not a mesh bundle ({e})') from e

    parts = {}
    for entry in entries:
        part_id = int(entry['id'])
        if entry.get('file'):
            mesh = read_obj(directory / entry['file'])
            parts[part_id] = TriangleMesh(mesh.vertices, mesh.triangles, part_id)
        else:
            parts[part_id] = TriangleMesh.empty(part_id)
    return MeshBundle(read_obj(directory / global_name), parts, provenance=manifest)


def update_hulls(directory: str | Path, hulls: list[HullMesh]) -> None:
    """Adds hull meshes to an existing bundle directory and records them in its manifest."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    manifest['hulls'] = write_hulls(hulls, directory)
    _write_manifest(directory, manifest)
