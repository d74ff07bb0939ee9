"""Depth thickness fields, frustum-to-voxel lifting and occupancy labels for
monocular 3D detection preprocessing."""

__version__ = "0.1.0"

from .binning import lid_continuous, lid_depth_of, lid_edges, lid_index
from .blob import blob_read, blob_write
from .config import PipelineConfig
from .core import KITTI_GRID, BinSpec, CameraCalibration, DepthMap, GridSpec, VoxelGrid, grid_dims
from .depth import (
    DistributionVolume,
    ExtensionMask,
    OneHotVolume,
    ThicknessField,
    compose_total_loss,
    encode_one_hot,
    extension_mask,
    normalize_distribution,
    soft_extended_target,
    thickness_focal_loss,
    thickness_profile,
)
from .frustum import (
    BevGrid,
    OccupancyField,
    collapse_to_bev,
    expand_bev,
    lift_features,
    occupancy_gate,
    sample_to_voxels,
    voxel_centers,
)
from .occupancy import (
    FREE,
    OCCUPIED,
    UNKNOWN,
    OccupancyLabelGrid,
    OrientedBox3D,
    box_labels,
    point_cloud_labels,
    point_in_box,
    shrink_box,
    traverse_ray,
    union_labels,
)
