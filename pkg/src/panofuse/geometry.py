"""Camera model, poses and equirectangular <-> perspective resampling.

Conventions used everywhere in the package:

* camera frame: +x right, +y down, +z forward;
* world frame: the camera frame of the identity pose (all trajectory
  cameras share the origin);
* pixel ``(i, j)`` has its center at continuous coordinate
  ``(i + 0.5, j + 0.5)``;
* equirectangular longitude ``atan2(x, z)`` grows to the right, latitude
  ``asin(-y)`` grows upward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "Intrinsics",
    "CameraPose",
    "EquirectImage",
    "PerspectiveView",
    "Trajectory",
    "intrinsics_from_fov",
    "make_pose",
    "generate_trajectory",
    "pixel_to_ray",
    "dir_to_equirect",
    "equirect_pixel_dirs",
    "sample_equirect",
    "sample_image",
    "extract_perspective",
    "restitch_panorama",
]


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def ray_grid(self) -> np.ndarray:
        """Unnormalized camera rays ``((u+.5-cx)/fx, (v+.5-cy)/fy, 1)``, shape (H, W, 3)."""
        u = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        v = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        rays = np.empty((self.height, self.width, 3))
        rays[..., 0] = u[None, :]
        rays[..., 1] = v[:, None]
        rays[..., 2] = 1.0
        return rays


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Camera-to-world rigid transform; ``x_world = rotation @ x_cam + translation``."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-9 or np.linalg.det(rot) < 0:
            raise ValueError("rotation must be orthonormal with determinant +1")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        rot.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous camera-to-world matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_list(self) -> list[float]:
        """9 row-major rotation floats followed by 3 translation floats."""
        return [float(x) for x in self.rotation.ravel()] + [float(x) for x in self.translation]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "CameraPose":
        values = list(values)
        if len(values) != 12:
            raise ValueError(f"expected 12 pose values, got {len(values)}")
        return cls(np.reshape(values[:9], (3, 3)), np.asarray(values[9:]))

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class EquirectImage:
    """RGB panorama, ``pixels`` of shape (H, 2H, 3) with values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"panorama must be HxWx3, got shape {px.shape}")
        if px.shape[1] != 2 * px.shape[0]:
            raise ValueError(f"panorama width must be twice its height, got {px.shape[1]}x{px.shape[0]}")
        if not np.all(np.isfinite(px)) or px.min(initial=0.0) < 0 or px.max(initial=0.0) > 1:
            raise ValueError("panorama values must be finite and within [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class PerspectiveView:
    image: np.ndarray
    pose: CameraPose
    intrinsics: Intrinsics

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.shape != (self.intrinsics.height, self.intrinsics.width, 3):
            raise ValueError(
                f"image shape {img.shape} does not match intrinsics "
                f"{self.intrinsics.height}x{self.intrinsics.width}"
            )
        object.__setattr__(self, "image", img)


@dataclass(frozen=True)
class Trajectory:
    poses: tuple[CameraPose, ...]
    fov_deg: float
    view_size: tuple[int, int]

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    @property
    def intrinsics(self) -> Intrinsics:
        return intrinsics_from_fov(self.fov_deg, *self.view_size)


def intrinsics_from_fov(fov_deg: float, width: int, height: int) -> Intrinsics:
    """Square-pixel intrinsics with horizontal field of view ``fov_deg``."""
    if not (0 < fov_deg < 180):
        raise ValueError(f"fov must be in (0, 180) degrees, got {fov_deg}")
    if width < 1 or height < 1:
        raise ValueError(f"image size must be positive, got {width}x{height}")
    f = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    return Intrinsics(f, f, width / 2.0, height / 2.0, int(width), int(height))


def _rot_yaw(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_pitch(pitch: float) -> np.ndarray:
    # positive pitch tilts the optical axis toward -y, i.e. up
    c, s = math.cos(pitch), math.sin(pitch)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def make_pose(yaw_rad: float, pitch_rad: float = 0.0, translation=None) -> CameraPose:
    """Rotation ``R_yaw(yaw) @ R_pitch(pitch)`` about a fixed camera center.

    The yaw factor is a rotation about the vertical axis; pitch is applied
    first, about the camera x axis.
    """
    if not abs(pitch_rad) < math.pi / 2:
        raise ValueError(f"|pitch| must be < pi/2, got {pitch_rad}")
    rot = _rot_yaw(yaw_rad) @ _rot_pitch(pitch_rad)
    return CameraPose(rot, np.zeros(3) if translation is None else translation)


def generate_trajectory(
    n_yaw: int = 8,
    pitches_deg: Sequence[float] = (-45.0, 0.0, 45.0),
    fov_deg: float = 90.0,
    view_w: int = 512,
    view_h: int = 512,
) -> Trajectory:
    """Rings of cameras at the origin: middle ring first, then bottom, then top."""
    if n_yaw < 1:
        raise ValueError(f"n_yaw must be >= 1, got {n_yaw}")
    pitches = list(pitches_deg)
    if not pitches:
        raise ValueError("at least one pitch ring is required")
    for p in pitches:
        if not -90 < p < 90:
            raise ValueError(f"pitch {p} outside (-90, 90) degrees")
    intrinsics_from_fov(fov_deg, view_w, view_h)  # validates fov and size
    rings = sorted(pitches, key=lambda p: (p != 0, p > 0, abs(p)))
    poses = []
    for pitch in rings:
        for k in range(n_yaw):
            poses.append(make_pose(2.0 * math.pi * k / n_yaw, math.radians(pitch)))
    return Trajectory(tuple(poses), float(fov_deg), (int(view_w), int(view_h)))


def pixel_to_ray(intr: Intrinsics, u, v) -> np.ndarray:
    """Unit camera-frame ray through continuous pixel index ``(u, v)``.

    ``u`` and ``v`` may be scalars or broadcastable arrays; the result has a
    trailing axis of length 3.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x = (u + 0.5 - intr.cx) / intr.fx
    y = (v + 0.5 - intr.cy) / intr.fy
    x, y = np.broadcast_arrays(x, y)
    ray = np.stack([x, y, np.ones_like(x)], axis=-1)
    return ray / np.linalg.norm(ray, axis=-1, keepdims=True)


def dir_to_equirect(direction, pano_w: int, pano_h: int):
    """Map world directions (..., 3) to continuous panorama coordinates ``(u, v)``."""
    d = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(d, axis=-1)
    if np.any(norm == 0):
        raise ValueError("cannot map a zero direction to the panorama")
    d = d / norm[..., None]
    lon = np.arctan2(d[..., 0], d[..., 2])
    lat = np.arcsin(np.clip(-d[..., 1], -1.0, 1.0))
    u = (lon / (2.0 * math.pi) + 0.5) * pano_w
    v = (0.5 - lat / math.pi) * pano_h
    return u, v


def equirect_pixel_dirs(pano_w: int, pano_h: int) -> np.ndarray:
    """Unit world directions through every panorama pixel center, shape (H, W, 3)."""
    lon = ((np.arange(pano_w) + 0.5) / pano_w - 0.5) * 2.0 * math.pi
    lat = (0.5 - (np.arange(pano_h) + 0.5) / pano_h) * math.pi
    cl = np.cos(lat)[:, None]
    dirs = np.empty((pano_h, pano_w, 3))
    dirs[..., 0] = cl * np.sin(lon)[None, :]
    dirs[..., 1] = -np.sin(lat)[:, None]
    dirs[..., 2] = cl * np.cos(lon)[None, :]
    return dirs


def _bilinear(img: np.ndarray, u, v, wrap_x: bool) -> np.ndarray:
    h, w = img.shape[:2]
    x = np.asarray(u, dtype=np.float64) - 0.5
    y = np.clip(np.asarray(v, dtype=np.float64) - 0.5, 0.0, h - 1)
    if not wrap_x:
        x = np.clip(x, 0.0, w - 1)
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    if wrap_x:
        x0 %= w
        x1 = (x0 + 1) % w
    else:
        x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def sample_equirect(pano: EquirectImage, u, v) -> np.ndarray:
    """Bilinear panorama lookup; wraps horizontally, clamps vertically."""
    return _bilinear(pano.pixels, u, v, wrap_x=True)


def sample_image(image: np.ndarray, u, v) -> np.ndarray:
    """Bilinear lookup in a perspective image with edge clamping."""
    return _bilinear(image, u, v, wrap_x=False)


def extract_perspective(pano: EquirectImage, pose: CameraPose, intr: Intrinsics) -> PerspectiveView:
    """Resample a pinhole view of the panorama seen from ``pose``."""
    rays = intr.ray_grid()
    rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
    world = rays @ pose.rotation.T
    u, v = dir_to_equirect(world, pano.width, pano.height)
    image = np.clip(sample_equirect(pano, u, v), 0.0, 1.0)
    return PerspectiveView(image, pose, intr)


def restitch_panorama(views: Sequence[PerspectiveView], pano_w: int, pano_h: int):
    """Average perspective views back onto the sphere.

    Returns ``(panorama, covered, coverage)`` where ``covered`` flags the
    panorama pixels seen by at least one view and ``coverage`` is their
    fraction. Uncovered pixels are black.
    """
    if not views:
        raise ValueError("need at least one view to restitch")
    dirs = equirect_pixel_dirs(pano_w, pano_h)
    acc = np.zeros((pano_h, pano_w, 3))
    count = np.zeros((pano_h, pano_w))
    for view in views:
        intr = view.intrinsics
        cam = dirs @ view.pose.rotation  # R^T applied per row
        z = cam[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uc = intr.fx * cam[..., 0] / z + intr.cx
            vc = intr.fy * cam[..., 1] / z + intr.cy
        inside = (z > 0) & (uc >= 0) & (uc < intr.width) & (vc >= 0) & (vc < intr.height)
        if not inside.any():
            continue
        acc[inside] += sample_image(view.image, uc[inside], vc[inside])
        count[inside] += 1
    covered = count > 0
    out = np.zeros_like(acc)
    out[covered] = acc[covered] / count[covered][:, None]
    return EquirectImage(np.clip(out, 0.0, 1.0)), covered, float(covered.mean())
