"""Panorama-to-point-cloud fusion and isotropic Gaussian splatting."""

from panofuse.geometry import (
    CameraPose,
    EquirectImage,
    Intrinsics,
    PerspectiveView,
    Trajectory,
    dir_to_equirect,
    extract_perspective,
    generate_trajectory,
    intrinsics_from_fov,
    make_pose,
    pixel_to_ray,
    restitch_panorama,
    sample_equirect,
)
from panofuse.pointcloud import (
    AlignmentError,
    AlignmentResult,
    CoverageMask,
    DepthMap,
    FusionConfig,
    PointCloud,
    align_scale_gd,
    align_scale_median,
    alignment_loss,
    dilate_mask,
    fuse_views,
    lift_rgbd,
    project_cloud,
)
from panofuse.splat import (
    GaussianCloud,
    SupervisionSet,
    augment_supervision,
    init_gaussians,
    optimize,
    render,
    render_with_grads,
)
from panofuse.synth import (
    BoxScene,
    perturb_depths,
    render_scene_equirect,
    render_scene_perspective,
)
from panofuse.metrics import MetricReport, psnr, ssim

__version__ = "0.1.0"
