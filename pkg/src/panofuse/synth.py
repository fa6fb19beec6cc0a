"""Procedural box room used as ground truth.

The room is an axis-aligned box centered on the world origin. Every face
carries a checkerboard whose odd cells are a darkened copy of the face's
base color. The equirectangular renderer stores radial depth (distance
along the ray); the perspective renderer stores z-depth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from panofuse.geometry import CameraPose, EquirectImage, Intrinsics, equirect_pixel_dirs
from panofuse.pointcloud import DepthMap

__all__ = [
    "BoxScene",
    "FACE_NAMES",
    "cast_rays",
    "render_scene_equirect",
    "render_scene_perspective",
    "perturb_depths",
]

# face order used by ``face_colors`` and by the face index returned from cast_rays
FACE_NAMES = ("+x", "-x", "floor", "ceiling", "+z", "-z")

DEFAULT_FACE_COLORS = (
    (0.80, 0.35, 0.30),
    (0.30, 0.60, 0.80),
    (0.55, 0.45, 0.30),
    (0.90, 0.90, 0.85),
    (0.40, 0.75, 0.40),
    (0.75, 0.65, 0.30),
)


@dataclass(frozen=True)
class BoxScene:
    half_extents: tuple[float, float, float] = (2.0, 1.5, 2.5)
    face_colors: tuple[tuple[float, float, float], ...] = DEFAULT_FACE_COLORS
    checker_count: int = 6
    checker_contrast: float = 0.3

    def __post_init__(self):
        if len(self.half_extents) != 3 or min(self.half_extents) <= 0:
            raise ValueError(f"half extents must be three positive numbers, got {self.half_extents}")
        if len(self.face_colors) != 6:
            raise ValueError("need exactly six face colors")
        colors = np.asarray(self.face_colors, dtype=np.float64)
        if colors.shape != (6, 3) or colors.min() < 0 or colors.max() > 1:
            raise ValueError("face colors must be six RGB triples in [0, 1]")
        if self.checker_count < 0:
            raise ValueError("checker_count must be >= 0")
        if not 0 <= self.checker_contrast <= 1:
            raise ValueError("checker_contrast must lie in [0, 1]")

    @property
    def diagonal(self) -> float:
        return 2.0 * float(np.linalg.norm(self.half_extents))

    def face_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from each point to the nearest box face plane."""
        h = np.asarray(self.half_extents)
        return np.min(np.abs(np.abs(np.asarray(points)) - h), axis=-1)


def cast_rays(scene: BoxScene, origin, dirs: np.ndarray):
    """Intersect rays with the room from an interior origin.

    Returns ``(t, colors, face)``: hit distance in units of ``|dir|``,
    RGB colors and face index into :data:`FACE_NAMES`.
    """
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    h = np.asarray(scene.half_extents, dtype=np.float64)
    if np.any(np.abs(origin) >= h):
        raise ValueError("ray origin must lie strictly inside the box")
    d = np.asarray(dirs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = np.where(d > 0, h, -h)
        t_axis = np.where(d != 0, (bound - origin) / d, np.inf)
    axis = np.argmin(t_axis, axis=-1)
    t = np.take_along_axis(t_axis, axis[..., None], axis=-1)[..., 0]
    sign = np.take_along_axis(d, axis[..., None], axis=-1)[..., 0] > 0
    face = 2 * axis + np.where(sign, 0, 1)
    hit = origin + t[..., None] * d

    base = np.asarray(scene.face_colors, dtype=np.float64)[face]
    if scene.checker_count > 0:
        n = scene.checker_count
        # two in-plane coordinates per face axis: x-> (z, y), y -> (x, z), z -> (x, y)
        a_idx = np.array([2, 0, 0])[axis]
        b_idx = np.array([1, 2, 1])[axis]
        a = np.take_along_axis(hit, a_idx[..., None], axis=-1)[..., 0]
        b = np.take_along_axis(hit, b_idx[..., None], axis=-1)[..., 0]
        ha, hb = h[a_idx], h[b_idx]
        ia = np.clip(np.floor((a + ha) / (2 * ha) * n), 0, n - 1).astype(np.int64)
        ib = np.clip(np.floor((b + hb) / (2 * hb) * n), 0, n - 1).astype(np.int64)
        odd = (ia + ib) % 2 == 1
        base = np.where(odd[..., None], base * (1.0 - scene.checker_contrast), base)
    return t, base, face


def render_scene_equirect(scene: BoxScene, pano_w: int, pano_h: int):
    """Panorama seen from the origin and its radial depth, shape (H, W)."""
    if pano_w != 2 * pano_h:
        raise ValueError(f"panorama width must be twice its height, got {pano_w}x{pano_h}")
    dirs = equirect_pixel_dirs(pano_w, pano_h)
    t, colors, _ = cast_rays(scene, np.zeros(3), dirs)
    return EquirectImage(colors), t


def render_scene_perspective(scene: BoxScene, pose: CameraPose, intr: Intrinsics):
    """Ground-truth image and z-depth map for a pinhole camera inside the room."""
    rays_cam = intr.ray_grid()  # z component is exactly 1
    dirs = rays_cam @ pose.rotation.T
    # with unnormalized rays of unit camera z, the hit parameter is the z-depth
    t, colors, _ = cast_rays(scene, pose.translation, dirs)
    return colors, DepthMap(t)


def perturb_depths(
    depths: Sequence[DepthMap],
    scales=None,
    seed: int | None = None,
    scale_range: tuple[float, float] = (0.7, 1.4),
    anchor_first: bool = False,
):
    """Multiply each depth map by a per-view scale.

    Either pass ``scales`` explicitly or a ``seed``; seeded scales are drawn
    uniformly from ``scale_range``. ``anchor_first`` pins view 0 to scale 1
    so that the first view defines the world scale.

    Returns ``(perturbed_depths, scales)``.
    """
    depths = list(depths)
    if scales is None:
        rng = np.random.default_rng(seed)
        lo, hi = scale_range
        scales = rng.uniform(lo, hi, size=len(depths))
        if anchor_first and len(depths):
            scales[0] = 1.0
    scales = np.asarray(scales, dtype=np.float64).reshape(-1)
    if len(scales) != len(depths):
        raise ValueError(f"got {len(scales)} scales for {len(depths)} depth maps")
    if np.any(~np.isfinite(scales)) or np.any(scales <= 0):
        raise ValueError("depth scales must be finite and positive")
    out = []
    for dm, s in zip(depths, scales):
        values = np.where(dm.valid, dm.values * s, 0.0) if s != 1.0 else dm.values.copy()
        out.append(DepthMap(values, dm.valid.copy()))
    return out, scales
