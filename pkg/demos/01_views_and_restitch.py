"""Cut a panorama into perspective views and stitch it back together.

Run: python3 demos/01_views_and_restitch.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from panofuse import io
from panofuse.geometry import extract_perspective, generate_trajectory, restitch_panorama
from panofuse.metrics import psnr
from panofuse.synth import BoxScene, render_scene_equirect

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/views")
out.mkdir(parents=True, exist_ok=True)

# A textured box room seen from its center doubles as a panorama with known content.
scene = BoxScene()
pano, radial_depth = render_scene_equirect(scene, 1024, 512)
print(f"panorama {pano.width}x{pano.height}, radial depth {radial_depth.min():.2f}..{radial_depth.max():.2f}")

# Three rings of eight views: looking down, level and up.
traj = generate_trajectory(n_yaw=8, pitches_deg=(-45, 0, 45), fov_deg=90, view_w=256, view_h=256)
views = [extract_perspective(pano, pose, traj.intrinsics) for pose in traj]
for i, v in enumerate(views[:8]):
    io.write_png(out / f"view_{i:02d}.png", v.image)

stitched, covered, fraction = restitch_panorama(views, pano.width, pano.height)
io.write_png(out / "restitched.png", stitched.pixels)
print(f"{len(views)} views cover {100 * fraction:.2f}% of the panorama")
print(f"round-trip PSNR on covered pixels: {psnr(stitched.pixels, pano.pixels, covered):.2f} dB")

# Views are cut at a lower resolution than the panorama, so detail is lost
# where the view samples are sparser than panorama pixels.
err = np.abs(stitched.pixels - pano.pixels).max(axis=2)
print(f"95th percentile abs error {np.percentile(err[covered], 95):.4f}")
