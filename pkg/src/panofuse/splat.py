"""Isotropic Gaussian clouds: initialization, splatting and appearance fitting.

Gaussians keep the positions of the fused points. Only color, opacity
(stored as a logit) and scale (stored as a log) are optimized.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit, logit

from panofuse import _raster
from panofuse.geometry import CameraPose, Intrinsics, PerspectiveView
from panofuse.pointcloud import MIN_Z, PointCloud, project_cloud

__all__ = [
    "GaussianCloud",
    "SplatGrads",
    "SupervisionItem",
    "SupervisionSet",
    "knn_mean_distance",
    "init_gaussians",
    "render",
    "render_with_grads",
    "augment_supervision",
    "supervision_from_views",
    "optimize",
]

log = logging.getLogger(__name__)

INIT_OPACITY = 0.8


@dataclass(frozen=True, eq=False)
class GaussianCloud:
    """Struct-of-arrays Gaussian cloud; ``len(cloud)`` Gaussians."""

    positions: np.ndarray
    colors: np.ndarray
    opacity_logits: np.ndarray
    log_scales: np.ndarray
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(pos)
        col = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        op = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        ls = np.asarray(self.log_scales, dtype=np.float64).reshape(n)
        bg = np.asarray(self.background, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(pos)):
            raise ValueError("Gaussian positions must be finite")
        for name, val in (("positions", pos), ("colors", col), ("opacity_logits", op),
                          ("log_scales", ls), ("background", bg)):
            object.__setattr__(self, name, val)

    def __len__(self):
        return len(self.positions)

    @property
    def opacities(self) -> np.ndarray:
        return expit(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(self.positions.copy(), self.colors.copy(), self.opacity_logits.copy(),
                             self.log_scales.copy(), self.background.copy())


@dataclass(frozen=True, eq=False)
class SplatGrads:
    """Loss gradients per Gaussian. ``weight`` is the summed blend weight
    ``T * alpha`` over valid pixels, scaled like the loss."""

    color: np.ndarray
    opacity_logit: np.ndarray
    log_scale: np.ndarray
    position: np.ndarray
    weight: np.ndarray


@dataclass(frozen=True, eq=False)
class SupervisionItem:
    image: np.ndarray
    valid: np.ndarray
    pose: CameraPose
    intrinsics: Intrinsics

    def __post_init__(self):
        shape = self.intrinsics.shape
        if self.image.shape != shape + (3,) or self.valid.shape != shape:
            raise ValueError("supervision image/mask shape does not match intrinsics")


@dataclass(frozen=True)
class SupervisionSet:
    items: tuple[SupervisionItem, ...] = ()

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __add__(self, other: "SupervisionSet") -> "SupervisionSet":
        return SupervisionSet(tuple(self.items) + tuple(other.items))


def knn_mean_distance(positions: np.ndarray, knn: int) -> np.ndarray:
    """Mean distance from each point to its ``knn`` nearest other points."""
    n = len(positions)
    k = min(knn, n - 1)
    if k < 1:
        return np.zeros(n)
    dist, _ = cKDTree(positions).query(positions, k=k + 1)
    return dist[:, 1:].mean(axis=1)


def init_gaussians(omega: PointCloud, knn: int = 3, background=(0.0, 0.0, 0.0)) -> GaussianCloud:
    """One Gaussian per point, sized by the local point spacing."""
    if len(omega) == 0:
        raise ValueError("cannot initialize Gaussians from an empty cloud")
    if knn < 1:
        raise ValueError(f"knn must be >= 1, got {knn}")
    pos = omega.positions
    diag = float(np.linalg.norm(pos.max(axis=0) - pos.min(axis=0)))
    if diag == 0.0:
        # a single location carries no spacing information
        diag = 1.0
    sigma = np.clip(knn_mean_distance(pos, knn), 1e-4 * diag, 0.1 * diag)
    n = len(pos)
    return GaussianCloud(
        pos.copy(),
        np.clip(omega.colors, 0.0, 1.0),
        np.full(n, logit(INIT_OPACITY)),
        np.log(sigma),
        np.asarray(background, dtype=np.float64),
    )


def _project(cloud: GaussianCloud, pose: CameraPose, intr: Intrinsics):
    """Visible Gaussians sorted by depth: (index, u, v, screen sigma)."""
    p = (cloud.positions - pose.translation) @ pose.rotation
    z = p[:, 2]
    idx = np.flatnonzero(z > MIN_Z)
    p = p[idx]
    z = z[idx]
    u = intr.fx * p[:, 0] / z + intr.cx - 0.5
    v = intr.fy * p[:, 1] / z + intr.cy - 0.5
    sig = intr.fx * np.exp(cloud.log_scales[idx]) / z
    rad = _raster.CUTOFF * sig
    hit = (u + rad >= 0) & (u - rad <= intr.width - 1) & (v + rad >= 0) & (v - rad <= intr.height - 1)
    idx, z, u, v, sig = idx[hit], z[hit], u[hit], v[hit], sig[hit]
    order = np.argsort(z, kind="stable")
    return idx[order], u[order], v[order], sig[order]


def _rasterize(cloud: GaussianCloud, pose: CameraPose, intr: Intrinsics):
    idx, u, v, sig = _project(cloud, pose, intr)
    offsets, ids = _raster.build_lists(u, v, sig, intr.width, intr.height)
    opac = np.ascontiguousarray(cloud.opacities[idx])
    colors = np.ascontiguousarray(cloud.colors[idx])
    return idx, (offsets, ids, u, v, sig, opac, colors, cloud.background, intr.width, intr.height)


def render(cloud: GaussianCloud, pose: CameraPose, intr: Intrinsics, return_transmittance: bool = False):
    """Front-to-back splat of the cloud; returns an (H, W, 3) image."""
    _, args = _rasterize(cloud, pose, intr)
    image, trans, _ = _raster.composite(*args)
    if return_transmittance:
        return image, trans
    return image


def render_with_grads(cloud: GaussianCloud, pose: CameraPose, intr: Intrinsics, target: np.ndarray,
                      valid: np.ndarray | None = None):
    """Masked L1 loss against ``target`` and its analytic gradients.

    The loss is the mean absolute color error over valid pixels and the
    three channels. Positions are fixed and receive zero gradient.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != intr.shape + (3,):
        raise ValueError(f"target shape {target.shape} does not match intrinsics {intr.shape}")
    valid = np.ones(intr.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("no valid pixels to supervise")
    idx, args = _rasterize(cloud, pose, intr)
    image, _, _ = _raster.composite(*args)
    diff = image - target
    norm = 1.0 / (3.0 * n_valid)
    loss = float(np.abs(diff[valid]).sum() * norm)
    dl_dc = np.where(valid[..., None], np.sign(diff) * norm, 0.0)
    g_col, g_opac, g_logsig, weight = _raster.backward(*args, dl_dc, valid)

    n = len(cloud)
    grads = SplatGrads(np.zeros((n, 3)), np.zeros(n), np.zeros(n), np.zeros((n, 3)), np.zeros(n))
    opac = args[5]
    grads.color[idx] = g_col
    grads.opacity_logit[idx] = g_opac * opac * (1.0 - opac)
    grads.log_scale[idx] = g_logsig
    grads.weight[idx] = weight * norm
    return loss, grads


def augment_supervision(omega: PointCloud, poses: Sequence[CameraPose], intr: Intrinsics) -> SupervisionSet:
    """Extra training targets from projecting the fused cloud into new poses.

    Pixels the cloud does not reach are masked out.
    """
    if len(omega) == 0:
        raise ValueError("cannot augment supervision from an empty cloud")
    items = []
    for pose in poses:
        image, _, mask = project_cloud(omega, intr, pose)
        items.append(SupervisionItem(image, mask.covered.copy(), pose, intr))
    return SupervisionSet(tuple(items))


def supervision_from_views(views: Sequence[PerspectiveView]) -> SupervisionSet:
    """Use input views as fully valid training targets."""
    return SupervisionSet(tuple(
        SupervisionItem(v.image, np.ones(v.intrinsics.shape, dtype=bool), v.pose, v.intrinsics)
        for v in views
    ))


def optimize(
    cloud: GaussianCloud,
    supervision: SupervisionSet,
    lrs: tuple[float, float, float] = (0.05, 0.05, 0.01),
    iters: int = 200,
    normalize: bool = True,
    decay: bool = True,
):
    """Gradient descent on (color, opacity logit, log scale), round robin over targets.

    With ``normalize`` each Gaussian's gradient is divided by its blend
    weight in the current view, which turns the learning rates into
    per-visit step sizes in parameter units. Returns ``(cloud, history)``.
    """
    if len(supervision) == 0:
        raise ValueError("supervision set is empty")
    lr_c, lr_o, lr_s = lrs
    out = cloud.copy()
    history = []
    items = list(supervision)
    for it in range(iters):
        item = items[it % len(items)]
        loss, grads = render_with_grads(out, item.pose, item.intrinsics, item.image, item.valid)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        history.append(loss)
        frac = 1.0 - it / iters if decay else 1.0
        if normalize:
            seen = grads.weight > 0
            scale = np.zeros(len(out))
            scale[seen] = 1.0 / grads.weight[seen]
        else:
            scale = np.ones(len(out))
        scale *= frac
        out.colors[:] = np.clip(out.colors - lr_c * grads.color * scale[:, None], 0.0, 1.0)
        out.opacity_logits[:] -= lr_o * grads.opacity_logit * scale
        out.log_scales[:] -= lr_s * grads.log_scale * scale
        if np.isnan(out.opacity_logits).any() or not np.all(np.isfinite(out.log_scales)):
            raise FloatingPointError(f"non-finite parameters after iteration {it}")
    return out, history
