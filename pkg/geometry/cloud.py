"""
Point cloud normalization and file I/O.

Supported formats:
- `.xyz`: whitespace-separated text, one "x y z [label]" per line
- `.ply`: binary little-endian, float32 x/y/z and an optional int32 "segment" property
"""
import logging
from pathlib import Path

import numpy as np

from errors import DegenerateInput, MalformedFile
from models import Normalization, PointCloud

__all__ = ['normalize', 'read_point_cloud', 'write_point_cloud']

logger = logging.getLogger(__name__)

# Centroids closer than this to the origin are treated as already centred
CENTRE_TOLERANCE = 1e-6

PLY_TYPES = {
    'char': 'i1', 'int8': 'i1', 'uchar': 'u1', 'uint8': 'u1',
    'short': 'i2', 'int16': 'i2', 'ushort': 'u2', 'uint16': 'u2',
    'int': 'i4', 'int32': 'i4', 'uint': 'u4', 'uint32': 'u4',
    'float': 'f4', 'float32': 'f4', 'double': 'f8', 'float64': 'f8',
}


def normalize(cloud: PointCloud) -> tuple[PointCloud, Normalization]:
    """Centres the cloud on its centroid and shrinks it so the largest axis extent is at most 1."""
    points = cloud.points
    extent = float((points.max(axis=0) - points.min(axis=0)).max())
    if extent == 0.0:
        raise DegenerateInput('All points of the cloud are identical')

    centroid = points.mean(axis=0)
    if np.linalg.norm(centroid) <= CENTRE_TOLERANCE:
        centroid = np.zeros(3)

    # Only ever shrink: clouds already inside the unit box keep their units
    transform = Normalization(scale=max(extent, 1.0), offset=tuple(float(c) for c in centroid))
    normalized = PointCloud(transform.apply(points), cloud.segment_labels)
    logger.debug(f'Normalized cloud: extent {extent:.4g}, scale {transform.scale:.4g}, offset {transform.offset}')
    return normalized, transform


def _read_xyz(path: Path) -> PointCloud:
    try:
        data = np.loadtxt(path, ndmin=2, dtype=np.float64)
    except ValueError as e:
        raise MalformedFile(f'{path}: {e}') from e
    if data.shape[1] not in (3, 4):
        raise MalformedFile(f'{path}: expected 3 or 4 columns per line, got {data.shape[1]}')
    labels = data[:, 3] if data.shape[1] == 4 else None
    return PointCloud(data[:, :3], labels)


def _parse_ply_header(stream) -> tuple[int, np.dtype]:
    """Reads the PLY header and returns the vertex count and vertex record dtype."""
    if stream.readline().strip() != b'ply':
        raise MalformedFile('missing "ply" magic')

    vertex_count = None
    fields = []
    current_element = None
    while True:
        line = stream.readline()
        if not line:
            raise MalformedFile('unexpected end of header')
        tokens = line.decode('ascii', errors='replace').split()
        if not tokens or tokens[0] in ('comment', 'obj_info'):
            continue
        if tokens[0] == 'end_header':
            break
        if tokens[0] == 'format':
            if tokens[1:2] != ['binary_little_endian']:
                raise MalformedFile(f'unsupported PLY format "{" ".join(tokens[1:])}"')
        elif tokens[0] == 'element':
            current_element = tokens[1]
            if current_element == 'vertex':
                if fields or vertex_count is not None:
                    raise MalformedFile('duplicate vertex element')
                vertex_count = int(tokens[2])
            elif vertex_count is None:
                # Elements before the vertex block would need to be skipped record by record
                raise MalformedFile('the vertex element must come first')
        elif tokens[0] == 'property' and current_element == 'vertex':
            if tokens[1] == 'list' or tokens[1] not in PLY_TYPES:
                raise MalformedFile(f'unsupported vertex property "{" ".join(tokens[1:])}"')
            fields.append((tokens[2], '<' + PLY_TYPES[tokens[1]]))

    if vertex_count is None:
        raise MalformedFile('no vertex element')
    return vertex_count, np.dtype(fields)


def _read_ply(path: Path) -> PointCloud:
    with open(path, 'rb') as stream:
        try:
            count, dtype = _parse_ply_header(stream)
        except (ValueError, IndexError) as e:
            raise MalformedFile(f'{path}: bad PLY header ({e})') from e
        except MalformedFile as e:
            raise MalformedFile(f'{path}: {e}') from e
        body = stream.read(count * dtype.itemsize)

    if len(body) != count * dtype.itemsize:
        raise MalformedFile(f'{path}: expected {count} vertices, file holds {len(body) // dtype.itemsize}')
    records = np.frombuffer(body, dtype=dtype)
    if not {'x', 'y', 'z'} <= set(dtype.names):
        raise MalformedFile(f'{path}: vertices need x, y and z properties')

    points = np.stack([records['x'], records['y'], records['z']], axis=1).astype(np.float64)
    labels = records['segment'].astype(np.int64) if 'segment' in dtype.names else None
    return PointCloud(points, labels)


def read_point_cloud(path: str | Path) -> PointCloud:
    """Loads a point cloud from an .xyz or .ply file."""
    path = Path(path)
    if not path.is_file():
        raise MalformedFile(f'{path}: no such file')

    suffix = path.suffix.lower()
    if suffix == '.xyz':
        cloud = _read_xyz(path)
    elif suffix == '.ply':
        cloud = _read_ply(path)
    else:
        raise MalformedFile(f'{path}: unsupported point cloud extension "{suffix}"')

    logger.info(f'Loaded {len(cloud)} points from {path}' + (
        f' with {cloud.n_segments} segments' if cloud.segment_labels is not None else ''))
    return cloud


def write_point_cloud(cloud: PointCloud, path: str | Path) -> None:
    """Writes a point cloud as .xyz text or binary little-endian .ply."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == '.xyz':
        if cloud.segment_labels is None:
            np.savetxt(path, cloud.points, fmt='%.17g')
        else:
            rows = np.column_stack([cloud.points, cloud.segment_labels])
            np.savetxt(path, rows, fmt=['%.17g'] * 3 + ['%d'])
    elif suffix == '.ply':
        fields = [('x', '<f4'), ('y', '<f4'), ('z', '<f4')]
        if cloud.segment_labels is not None:
            fields.append(('segment', '<i4'))
        records = np.zeros(len(cloud), dtype=fields)
        records['x'], records['y'], records['z'] = cloud.points.T
        if cloud.segment_labels is not None:
            records['segment'] = cloud.segment_labels
        header = ['ply', 'format binary_little_endian 1.0', f'element vertex {len(cloud)}',
                  'property float x', 'property float y', 'property float z']
        if cloud.segment_labels is not None:
            header.append('property int segment')
        header.append('end_header')
        with open(path, 'wb') as stream:
            stream.write(('\n'.join(header) + '\n').encode('ascii'))
            stream.write(records.tobytes())
    else:
        raise MalformedFile(f'{path}: unsupported point cloud extension "{suffix}"')
