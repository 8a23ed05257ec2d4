"""
Meshes from implicit fields: isosurfaces, parts, hulls and bundles
"""
from .surface import marching_cubes, read_obj, to_trimesh, write_obj
