"""Turn a fused cloud into Gaussians, render it and fit its appearance.

Run: python3 demos/03_splatting.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from panofuse import io
from panofuse.geometry import PerspectiveView, generate_trajectory, intrinsics_from_fov, make_pose
from panofuse.metrics import evaluate
from panofuse.pointcloud import fuse_views
from panofuse.splat import init_gaussians, optimize, render, supervision_from_views
from panofuse.synth import BoxScene, render_scene_perspective

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/splat")
out.mkdir(parents=True, exist_ok=True)

scene = BoxScene()
traj = generate_trajectory(view_w=96, view_h=96)
k = traj.intrinsics
views = []
pairs = []
for pose in traj:
    img, dm = render_scene_perspective(scene, pose, k)
    views.append(PerspectiveView(img, pose, k))
    pairs.append((views[-1], dm))
omega, _ = fuse_views(pairs)

gaussians = init_gaussians(omega, knn=3)
print(f"{len(gaussians)} Gaussians, sigma {gaussians.scales.min():.4f}..{gaussians.scales.max():.4f}")

# A camera that moved away from the capture center sees the room from a new angle.
novel = make_pose(np.radians(30), np.radians(10), translation=[0.3, 0.1, -0.4])
rk = intrinsics_from_fov(90, 128, 128)
truth, _ = render_scene_perspective(scene, novel, rk)

before = render(gaussians, novel, rk)
fitted, history = optimize(gaussians, supervision_from_views(views), iters=72)
after = render(fitted, novel, rk)

print(f"training loss: first pass {np.mean(history[:24]):.4f}, last pass {np.mean(history[-24:]):.4f}")
for name, img in (("initial", before), ("fitted", after)):
    rep = evaluate(img, truth)
    print(f"{name:>8}: PSNR {rep.psnr:.2f} dB, SSIM {rep.ssim:.3f}")
    io.write_png(out / f"novel_{name}.png", img)
io.write_png(out / "novel_truth.png", truth)
io.write_ply(out / "gaussians.ply", fitted)
