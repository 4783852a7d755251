from .io import read_obj, read_off, write_obj, write_off
from .marching_cubes import marching_cubes
from .mesh import (
    TriMesh,
    apply_transform,
    invert_transform,
    normalize_to_unit_cube,
    point_mesh_distance,
    sample_surface,
)
from .metrics import SpatialHash, chamfer, volumetric_iou
from .occupancy import OccupancyGrid, occupancy, occupancy_grid_of_mesh
