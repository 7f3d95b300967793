"""lidarguard: LiDAR spoofing traces and the CARLO occlusion-aware defense.

Subpackages and modules:

- ``cloud``, ``kitti``, ``mesh``, ``traces``: data types and file formats
- ``geometry``: boxes, IoU, ray casting, frustums, voxel traversal
- ``render``: single-return LiDAR simulation over triangle meshes
- ``attack``: trace placement, calibration, pruning and injection
- ``carlo``: LPD / FSD ratios, calibration and verdicts
- ``fv``: front-view projection and scatter score
- ``harness``: proxy detector, metrics, synthetic data and campaigns
"""
__version__ = "0.1.0"

from ._backend import get_backend, set_backend
from .cloud import Point, PointCloud, RayId, SensorModel, load_sensor, nearest_ray
from .errors import LidarGuardError
from .geometry.box import Box3D
from .traces import AttackCapability, AttackTrace

__all__ = [
    "__version__", "get_backend", "set_backend", "Point", "PointCloud", "RayId", "SensorModel",
    "load_sensor", "nearest_ray", "LidarGuardError", "Box3D", "AttackCapability", "AttackTrace",
]
