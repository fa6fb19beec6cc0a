"""Command line interface: ``panofuse <subcommand> ...``.

Angles are given in degrees. ``PANOFUSE_THREADS`` caps the number of
threads used by the compiled splatting kernels.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from panofuse import io
from panofuse.geometry import (
    EquirectImage,
    PerspectiveView,
    extract_perspective,
    generate_trajectory,
    intrinsics_from_fov,
    make_pose,
)
from panofuse.metrics import evaluate
from panofuse.pipeline import (
    PipelineConfig,
    PipelineError,
    read_manifest,
    run_pipeline,
    write_manifest,
)
from panofuse.pointcloud import DepthMap, FusionConfig, PointCloud, fuse_views
from panofuse.splat import init_gaussians, render
from panofuse.synth import BoxScene, perturb_depths, render_scene_equirect, render_scene_perspective

log = logging.getLogger("panofuse")


def _add_trajectory_args(p):
    p.add_argument("--n-yaw", type=int, default=8)
    p.add_argument("--pitches", type=float, nargs="+", default=[-45.0, 0.0, 45.0])
    p.add_argument("--fov", type=float, default=90.0, help="field of view in degrees")
    p.add_argument("--view-size", type=int, default=512)


def _trajectory(args):
    return generate_trajectory(args.n_yaw, args.pitches, args.fov, args.view_size, args.view_size)


def cmd_synth(args):
    out = Path(args.out)
    (out / "views").mkdir(parents=True, exist_ok=True)
    (out / "depths").mkdir(exist_ok=True)
    scene = BoxScene(half_extents=tuple(args.half_extents), checker_count=args.checker_count)
    pano, radial = render_scene_equirect(scene, args.pano_width, args.pano_width // 2)
    io.write_png(out / "panorama.png", pano.pixels)
    io.write_pfm(out / "panorama_depth.pfm", DepthMap(radial))
    traj = _trajectory(args)
    intr = traj.intrinsics
    images, depths = zip(*(render_scene_perspective(scene, pose, intr) for pose in traj))
    depths, scales = perturb_depths(depths, seed=args.seed, scale_range=tuple(args.scale_range),
                                    anchor_first=True)
    image_files = [f"views/view_{i:03d}.png" for i in range(len(traj))]
    depth_files = [f"depths/depth_{i:03d}.pfm" for i in range(len(traj))]
    for name, img in zip(image_files, images):
        io.write_png(out / name, img)
    for name, dm in zip(depth_files, depths):
        io.write_pfm(out / name, dm)
    write_manifest(out / "manifest.json", intr, list(traj), image_files, depth_files, scales,
                   extra={"panorama": "panorama.png", "fov_deg": args.fov,
                          "scene": {"half_extents": list(scene.half_extents),
                                    "checker_count": scene.checker_count}})
    print(json.dumps({"views": len(traj), "out": str(out)}))
    return 0


def cmd_extract_views(args):
    out = Path(args.out)
    (out / "views").mkdir(parents=True, exist_ok=True)
    pano = EquirectImage(io.read_png(args.panorama))
    traj = _trajectory(args)
    intr = traj.intrinsics
    files = []
    for i, pose in enumerate(traj):
        name = f"views/view_{i:03d}.png"
        io.write_png(out / name, extract_perspective(pano, pose, intr).image)
        files.append(name)
    write_manifest(out / "manifest.json", intr, list(traj), files,
                   extra={"panorama": str(Path(args.panorama).resolve()), "fov_deg": args.fov})
    print(json.dumps({"views": len(traj), "out": str(out)}))
    return 0


def cmd_fuse(args):
    manifest = Path(args.manifest)
    doc, intr, poses = read_manifest(manifest)
    root = manifest.parent
    pairs = []
    for i, (entry, pose) in enumerate(zip(doc["views"], poses)):
        image = io.read_png(root / entry["image"])
        if args.depth_dir:
            depth_path = Path(args.depth_dir) / f"depth_{i:03d}.pfm"
        elif entry.get("depth"):
            depth_path = root / entry["depth"]
        else:
            raise io.PanoIOError(f"view {i}: no depth map in manifest and no --depth-dir given")
        pairs.append((PerspectiveView(image, pose, intr), io.read_pfm(depth_path)))
    config = FusionConfig(args.solver, args.alpha, args.max_iters, args.tol, args.dilate_radius,
                          not args.no_align, not args.no_mask)
    omega, results = fuse_views(pairs, intr, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_ply(out / "omega.ply", omega)
    io.write_json(out / "alignment.json", [{"view": i, **r.to_dict()} for i, r in enumerate(results)])
    print(json.dumps({"points": len(omega), "scales": [r.scale for r in results]}))
    return 0


def cmd_render(args):
    cloud = io.read_ply(args.ply)
    if isinstance(cloud, PointCloud):
        cloud = init_gaussians(cloud, args.knn, tuple(args.background))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.manifest:
        _, intr, poses = read_manifest(args.manifest)
    else:
        intr = intrinsics_from_fov(args.fov, args.size, args.size)
        poses = [make_pose(math.radians(args.yaw), math.radians(args.pitch))]
    for i, pose in enumerate(poses):
        io.write_png(out / f"render_{i:03d}.png", render(cloud, pose, intr))
    print(json.dumps({"renders": len(poses), "out": str(out)}))
    return 0


def cmd_eval(args):
    a = io.read_png(args.a)
    b = io.read_png(args.b)
    mask = None
    if args.mask:
        mask = io.read_png(args.mask).max(axis=2) > 0.5
    print(json.dumps(evaluate(a, b, mask).to_dict()))
    return 0


def cmd_pipeline(args):
    base = io.read_json(args.config) if args.config else {}
    overrides = {
        "output_dir": args.out,
        "seed": args.seed,
        "panorama": args.panorama,
        "depth_source": args.depth_source,
        "depth_dir": args.depth_dir,
        "solver": args.solver,
        "iters": args.iters,
        "view_size": args.view_size,
        "scale_range": tuple(args.scale_range) if args.scale_range else None,
        "align": False if args.no_align else None,
        "use_mask": False if args.no_mask else None,
    }
    config = PipelineConfig.from_dict(base, **overrides)
    summary = run_pipeline(config)
    print(json.dumps({k: summary[k] for k in ("n_points", "psnr", "ssim")}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panofuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render the synthetic room: panorama, views, depths, manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--pano-width", type=int, default=2048)
    p.add_argument("--half-extents", type=float, nargs=3, default=[2.0, 1.5, 2.5])
    p.add_argument("--checker-count", type=int, default=6)
    p.add_argument("--scale-range", type=float, nargs=2, default=[1.0, 1.0])
    p.add_argument("--seed", type=int, default=0)
    _add_trajectory_args(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract-views", help="extract perspective views from a panorama PNG")
    p.add_argument("--panorama", required=True)
    p.add_argument("--out", required=True)
    _add_trajectory_args(p)
    p.set_defaults(func=cmd_extract_views)

    p = sub.add_parser("fuse", help="fuse views + depths listed in a manifest into omega.ply")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--depth-dir")
    p.add_argument("--solver", choices=("gd", "median"), default="gd")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--dilate-radius", type=int, default=1)
    p.add_argument("--no-align", action="store_true")
    p.add_argument("--no-mask", action="store_true")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("render", help="render a point or Gaussian PLY")
    p.add_argument("--ply", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="render at every pose of this manifest")
    p.add_argument("--yaw", type=float, default=0.0)
    p.add_argument("--pitch", type=float, default=0.0)
    p.add_argument("--fov", type=float, default=90.0)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--knn", type=int, default=3)
    p.add_argument("--background", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="print PSNR/SSIM of two PNGs as JSON")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--mask", help="PNG; pixels brighter than 0.5 are compared")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run the full pipeline")
    p.add_argument("--config", help="JSON config; flags override its fields")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--panorama")
    p.add_argument("--depth-source", choices=("synth", "files"))
    p.add_argument("--depth-dir")
    p.add_argument("--solver", choices=("gd", "median"))
    p.add_argument("--iters", type=int)
    p.add_argument("--view-size", type=int)
    p.add_argument("--scale-range", type=float, nargs=2)
    p.add_argument("--no-align", action="store_true")
    p.add_argument("--no-mask", action="store_true")
    p.set_defaults(func=cmd_pipeline)
    return parser


def _set_threads():
    value = os.environ.get("PANOFUSE_THREADS")
    if not value:
        return
    import numba

    numba.set_num_threads(max(1, min(int(value), numba.config.NUMBA_NUM_THREADS)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _set_threads()
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
