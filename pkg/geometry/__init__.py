"""
Point clouds, spatial indexing, region centers and geodesic tables
"""
from .cache import GeodesicCache
from .cloud import normalize, read_point_cloud, write_point_cloud
from .geodesic import build_geodesic_table, build_knn_graph, read_geodesic_table, write_geodesic_table
from .sampling import farthest_point_sample, fps_indices, segment_centers
from .spatial import SpatialIndex, nearest_point
