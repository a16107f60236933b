"""Dense 360-degree inverse-depth estimation from multi-fisheye camera rigs.

Pipeline stages: rig calibration from checkerboard corners, warping onto
concentric inverse-depth spheres, pairwise matching costs fused into a cost
volume, semi-global aggregation, and winner-takes-all depth extraction.
"""

from .camera import (FisheyeIntrinsics, ProjectionError, bilinear_sample, fov_mask,
                     fov_radius, project, unproject)
from .calibration import (CheckerboardSpec, DegenerateGeometryError, ObservationSet,
                          RigCalibration, bundle_adjust, calibrate_rig,
                          estimate_board_pose, init_rig)
from .cost import (CostMap, CostVolume, PairSelection, build_cost_volume, fuse,
                   fuse_pair_volumes, load_external_cost_maps, normalize_image,
                   zncc_cost)
from .lm import ConvergenceError, LMConfig, LMResult, lm_solve
from .pose import Pose, compose, invert, relative_pose
from .sgm import (DepthMetrics, InverseDepthMap, SgmParams, compute_metrics,
                  error_map, sgm_aggregate, wta)
from .sweep import (RigFrame, SphereGrid, SphericalImage, build_rig_frame,
                    inverse_depth, ray_dir, warp)

__version__ = "0.1.0"
