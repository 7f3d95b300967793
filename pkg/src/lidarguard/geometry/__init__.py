from .box import Box3D, point_in_box, points_in_box, ray_box_intersect, ray_box_intervals, wrap_rad
from .frustum import Frustum, ReturnMap, extract_frustum
from .intersect import ray_triangle_intersect
from .iou import bev_iou, iou3d
from .traversal import FREE, OCCLUDED, VoxelGrid, bresenham3d, traverse_segments

__all__ = [
    "Box3D", "point_in_box", "points_in_box", "ray_box_intersect", "ray_box_intervals", "wrap_rad",
    "Frustum", "ReturnMap", "extract_frustum", "ray_triangle_intersect", "bev_iou", "iou3d",
    "FREE", "OCCLUDED", "VoxelGrid", "bresenham3d", "traverse_segments",
]
