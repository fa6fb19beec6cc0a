"""End-to-end driver: views -> depth -> fuse -> splat -> render.

Every artifact is written under ``config.output_dir``::

    manifest.json          intrinsics, per-view poses, image/depth files, depth scales
    views/view_###.png     perspective views extracted from the panorama
    depths/depth_###.pfm   depth maps fed to fusion (after perturbation)
    omega.ply              fused point cloud
    alignment.json         per-view depth-scale results
    gaussians.ply          optimized Gaussian cloud
    renders/heldout_#.png  renders at held-out poses (plus reference_#.png)
    metrics.json           per-pose and mean PSNR / SSIM
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from panofuse import io
from panofuse.geometry import (
    CameraPose,
    EquirectImage,
    Intrinsics,
    extract_perspective,
    generate_trajectory,
    intrinsics_from_fov,
    make_pose,
)
from panofuse.metrics import evaluate
from panofuse.pointcloud import AlignmentError, FusionConfig, fuse_views
from panofuse.splat import (
    augment_supervision,
    init_gaussians,
    optimize,
    render,
    supervision_from_views,
)
from panofuse.synth import BoxScene, perturb_depths, render_scene_equirect, render_scene_perspective

__all__ = ["PipelineConfig", "PipelineError", "run_pipeline", "heldout_poses", "augmentation_poses",
           "write_manifest", "read_manifest"]

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str, view_index: int | None = None):
        where = f"stage {stage!r}" + (f", view {view_index}" if view_index is not None else "")
        super().__init__(f"{where}: {message}")
        self.stage = stage
        self.view_index = view_index


@dataclass
class PipelineConfig:
    output_dir: str = "panofuse_out"
    seed: int = 0

    # inputs
    panorama: str | None = None
    depth_source: str = "synth"
    depth_dir: str | None = None
    pano_width: int = 2048
    half_extents: tuple = (2.0, 1.5, 2.5)
    checker_count: int = 6
    scale_range: tuple = (0.7, 1.4)

    # trajectory
    n_yaw: int = 8
    pitches: tuple = (-45.0, 0.0, 45.0)
    fov: float = 90.0
    view_size: int = 256

    # alignment / fusion
    solver: str = "median"
    alpha: float = 0.05
    max_iters: int = 500
    tol: float = 1e-7
    dilate_radius: int = 1
    align: bool = True
    use_mask: bool = True

    # splatting
    knn: int = 3
    lrs: tuple = (0.05, 0.05, 0.01)
    iters: int = 200
    background: tuple = (0.0, 0.0, 0.0)
    augment: bool = True

    # evaluation
    n_heldout: int = 4
    heldout_translation: float = 0.8
    render_size: int = 256

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.depth_source not in ("synth", "files"):
            raise ValueError(f"depth_source must be 'synth' or 'files', got {self.depth_source!r}")
        if self.depth_source == "files" and not (self.panorama and self.depth_dir):
            raise ValueError("depth_source 'files' needs both panorama and depth_dir")
        if self.pano_width < 2 or self.pano_width % 2:
            raise ValueError("pano_width must be a positive even number")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if self.n_yaw < 1 or not self.pitches:
            raise ValueError("trajectory needs n_yaw >= 1 and at least one pitch")
        if not 0 < self.fov < 180 or self.view_size < 1 or self.render_size < 1:
            raise ValueError("fov must be in (0, 180) and image sizes positive")
        FusionConfig(self.solver, self.alpha, self.max_iters, self.tol, self.dilate_radius)
        if self.knn < 1 or self.iters < 0 or len(self.lrs) != 3 or min(self.lrs) < 0:
            raise ValueError("knn >= 1, iters >= 0 and three non-negative learning rates required")
        if len(self.background) != 3 or self.n_heldout < 0 or self.heldout_translation < 0:
            raise ValueError("background must be RGB; held-out count and translation non-negative")

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged = {**d, **{k: v for k, v in overrides.items() if v is not None}}
        for key in ("half_extents", "scale_range", "pitches", "lrs", "background"):
            if key in merged:
                merged[key] = tuple(merged[key])
        return cls(**merged)

    @classmethod
    def from_json(cls, path, **overrides) -> "PipelineConfig":
        return cls.from_dict(io.read_json(path), **overrides)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(self.solver, self.alpha, self.max_iters, self.tol,
                            self.dilate_radius, self.align, self.use_mask)

    def scene(self) -> BoxScene:
        return BoxScene(half_extents=tuple(self.half_extents), checker_count=self.checker_count)


def heldout_poses(n: int, translation: float) -> list[CameraPose]:
    """Novel poses between trajectory yaws, alternately tilted, offset from the center."""
    poses = []
    for k in range(n):
        yaw = math.radians(22.5 + 360.0 * k / max(n, 1))
        pitch = math.radians(15.0 if k % 2 == 0 else -15.0)
        a = math.radians(60.0 * k)
        direction = np.array([math.sin(a), 0.3 if k % 2 == 0 else -0.3, math.cos(a)])
        poses.append(make_pose(yaw, pitch, translation * direction / np.linalg.norm(direction)))
    return poses


def augmentation_poses(n_yaw: int, pitches_deg) -> list[CameraPose]:
    """Trajectory rings shifted by half a yaw step."""
    return [make_pose(2.0 * math.pi * (k + 0.5) / n_yaw, math.radians(p))
            for p in pitches_deg for k in range(n_yaw)]


def write_manifest(path, intr: Intrinsics, poses, images=None, depths=None, scales=None,
                   extra: dict | None = None) -> dict:
    views = []
    for i, pose in enumerate(poses):
        views.append({
            "index": i,
            "pose": pose.to_list(),
            "image": images[i] if images else None,
            "depth": depths[i] if depths else None,
            "scale": float(scales[i]) if scales is not None else None,
        })
    doc = {"intrinsics": io.intrinsics_to_dict(intr), "views": views, **(extra or {})}
    io.write_json(path, doc)
    return doc


def read_manifest(path):
    """Returns ``(doc, intrinsics, poses)``; file paths in ``doc`` are relative to the manifest."""
    doc = io.read_json(path)
    try:
        intr = io.intrinsics_from_dict(doc["intrinsics"])
        poses = [CameraPose.from_list(v["pose"]) for v in doc["views"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise io.PanoIOError(f"{path}: malformed manifest ({exc})") from exc
    return doc, intr, poses


@contextmanager
def _stage(name):
    t0 = time.perf_counter()
    log.info("stage %s ...", name)
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, str(exc), getattr(exc, "view_index", None)) from exc
    log.info("stage %s done in %.2fs", name, time.perf_counter() - t0)


def run_pipeline(config: PipelineConfig) -> dict:
    """Run every stage and return a summary (also written as metrics.json)."""
    out = Path(config.output_dir)
    for sub in ("views", "depths", "renders"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    io.write_json(out / "config.json", config.to_dict())
    scene = config.scene() if config.depth_source == "synth" else None

    with _stage("panorama"):
        if config.panorama:
            pano = EquirectImage(io.read_png(config.panorama))
        else:
            pano, _ = render_scene_equirect(scene, config.pano_width, config.pano_width // 2)
        io.write_png(out / "panorama.png", pano.pixels)

    with _stage("views"):
        traj = generate_trajectory(config.n_yaw, config.pitches, config.fov,
                                   config.view_size, config.view_size)
        intr = traj.intrinsics
        views = [extract_perspective(pano, pose, intr) for pose in traj]
        image_files = [f"views/view_{i:03d}.png" for i in range(len(views))]
        for name, view in zip(image_files, views):
            io.write_png(out / name, view.image)

    with _stage("depth"):
        if config.depth_source == "synth":
            depths = [render_scene_perspective(scene, pose, intr)[1] for pose in traj]
            depths, scales = perturb_depths(depths, seed=config.seed, scale_range=config.scale_range,
                                            anchor_first=True)
        else:
            depths = []
            for i in range(len(traj)):
                dm = io.read_pfm(Path(config.depth_dir) / f"depth_{i:03d}.pfm")
                if dm.shape != intr.shape:
                    raise PipelineError("depth", f"depth map shape {dm.shape} != view {intr.shape}", i)
                depths.append(dm)
            scales = None
        depth_files = [f"depths/depth_{i:03d}.pfm" for i in range(len(depths))]
        for name, dm in zip(depth_files, depths):
            io.write_pfm(out / name, dm)
        write_manifest(out / "manifest.json", intr, list(traj), image_files, depth_files, scales,
                       extra={"panorama": "panorama.png", "fov_deg": config.fov})

    with _stage("fuse"):
        try:
            omega, alignments = fuse_views(list(zip(views, depths)), intr, config.fusion_config())
        except AlignmentError as exc:
            raise PipelineError("fuse", str(exc), exc.view_index) from exc
        io.write_ply(out / "omega.ply", omega)
        align_doc = [{"view": i, **r.to_dict()} for i, r in enumerate(alignments)]
        if scales is not None:
            for entry, s in zip(align_doc, scales):
                entry["applied_scale"] = float(s)
        io.write_json(out / "alignment.json", align_doc)

    with _stage("splat"):
        gaussians = init_gaussians(omega, config.knn, config.background)
        supervision = supervision_from_views(views)
        if config.augment:
            supervision = supervision + augment_supervision(
                omega, augmentation_poses(config.n_yaw, config.pitches), intr)
        gaussians, history = optimize(gaussians, supervision, tuple(config.lrs), config.iters)
        io.write_ply(out / "gaussians.ply", gaussians)

    with _stage("render"):
        r_intr = intrinsics_from_fov(config.fov, config.render_size, config.render_size)
        translation = config.heldout_translation if scene is not None else 0.0
        per_pose = []
        for k, pose in enumerate(heldout_poses(config.n_heldout, translation)):
            img = render(gaussians, pose, r_intr)
            if scene is not None:
                ref, _ = render_scene_perspective(scene, pose, r_intr)
            else:
                ref = extract_perspective(pano, pose, r_intr).image
            io.write_png(out / "renders" / f"heldout_{k}.png", img)
            io.write_png(out / "renders" / f"reference_{k}.png", ref)
            rep = evaluate(img, ref)
            per_pose.append({"pose": pose.to_list(), **rep.to_dict()})

    summary = {
        "n_points": len(omega),
        "n_views": len(views),
        "alignment_scales": [r.scale for r in alignments],
        "loss_first": history[0] if history else None,
        "loss_last": history[-1] if history else None,
        "heldout": per_pose,
        "psnr": float(np.mean([p["psnr"] for p in per_pose])) if per_pose else None,
        "ssim": float(np.mean([p["ssim"] for p in per_pose])) if per_pose else None,
    }
    io.write_json(out / "metrics.json", summary)
    return summary
