"""Lifting RGB-D views to world points, z-buffered projection, and fusion.

Fusion follows the cyclic scheme: the first view is lifted as is; every
following view is scale-aligned against the cloud accumulated so far
(L1 distance along shared rays), then only its pixels not already covered
by that cloud are lifted and appended.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from panofuse.geometry import CameraPose, Intrinsics, PerspectiveView

__all__ = [
    "DepthMap",
    "PointCloud",
    "CoverageMask",
    "AlignmentResult",
    "AlignmentError",
    "FusionConfig",
    "lift_rgbd",
    "project_cloud",
    "dilate_mask",
    "ray_weights",
    "alignment_loss",
    "align_scale_gd",
    "align_scale_median",
    "fuse_views",
]

log = logging.getLogger(__name__)

MIN_Z = 1e-6


class AlignmentError(ValueError):
    """Raised when a view shares no valid pixels with the existing cloud."""

    def __init__(self, message: str, view_index: int | None = None):
        super().__init__(message)
        self.view_index = view_index


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel z-depth; ``valid`` defaults to finite, positive entries."""

    values: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValueError(f"depth map must be 2-D, got shape {vals.shape}")
        ok = np.isfinite(vals) & (vals > 0)
        if self.valid is None:
            valid = ok
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != vals.shape:
                raise ValueError("validity mask shape does not match depth values")
            if np.any(valid & ~ok):
                raise ValueError("valid depth entries must be finite and > 0")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def scaled(self, s: float) -> "DepthMap":
        return DepthMap(np.where(self.valid, self.values * s, 0.0), self.valid)


@dataclass(frozen=True, eq=False)
class PointCloud:
    positions: np.ndarray
    colors: np.ndarray
    view_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        col = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        ids = (
            np.zeros(len(pos), dtype=np.int64)
            if self.view_ids is None
            else np.asarray(self.view_ids, dtype=np.int64).reshape(-1)
        )
        if not (len(pos) == len(col) == len(ids)):
            raise ValueError("positions, colors and view_ids must have equal length")
        if not np.all(np.isfinite(pos)):
            raise ValueError("point positions must be finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)
        object.__setattr__(self, "view_ids", ids)

    def __len__(self):
        return len(self.positions)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64))

    @classmethod
    def concat(cls, clouds: Sequence["PointCloud"]) -> "PointCloud":
        clouds = list(clouds)
        if not clouds:
            return cls.empty()
        return cls(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.colors for c in clouds]),
            np.concatenate([c.view_ids for c in clouds]),
        )


@dataclass(frozen=True, eq=False)
class CoverageMask:
    """Pixels hit by a projected cloud and the z-depth of the winning point."""

    covered: np.ndarray
    ref_depth: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.covered.shape

    @property
    def count(self) -> int:
        return int(self.covered.sum())


@dataclass(frozen=True)
class AlignmentResult:
    scale: float
    final_loss: float
    iterations: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "final_loss": self.final_loss,
            "iterations": self.iterations,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class FusionConfig:
    solver: str = "gd"
    alpha: float = 0.05
    max_iters: int = 500
    tol: float = 1e-7
    dilate_radius: int = 1
    align: bool = True
    use_mask: bool = True

    def __post_init__(self):
        if self.solver not in ("gd", "median"):
            raise ValueError(f"unknown solver {self.solver!r}; expected 'gd' or 'median'")
        if self.alpha <= 0 or self.max_iters < 0 or self.tol <= 0:
            raise ValueError("alpha and tol must be positive, max_iters non-negative")
        if self.dilate_radius < 0:
            raise ValueError("dilate_radius must be >= 0")


def lift_rgbd(
    view: PerspectiveView,
    depth: DepthMap,
    intr: Intrinsics | None = None,
    pose: CameraPose | None = None,
    exclude: CoverageMask | None = None,
    view_id: int = 0,
) -> PointCloud:
    """Back-project every valid (and not excluded) pixel to a world point."""
    intr = view.intrinsics if intr is None else intr
    pose = view.pose if pose is None else pose
    if view.image.shape[:2] != intr.shape or depth.shape != intr.shape:
        raise ValueError(
            f"image {view.image.shape[:2]}, depth {depth.shape} and intrinsics {intr.shape} disagree"
        )
    keep = depth.valid
    if exclude is not None:
        if exclude.shape != intr.shape:
            raise ValueError("exclusion mask shape does not match the view")
        keep = keep & ~exclude.covered
    rays = intr.ray_grid()[keep]
    p_cam = rays * depth.values[keep][:, None]
    p_world = p_cam @ pose.rotation.T + pose.translation
    return PointCloud(p_world, view.image[keep], np.full(len(p_world), view_id, dtype=np.int64))


def project_cloud(cloud: PointCloud, intr: Intrinsics, pose: CameraPose):
    """Z-buffer the cloud into a view.

    Returns ``(image, depth_buffer, mask)``; uncovered pixels are black in
    ``image`` and ``inf`` in ``depth_buffer``. Equal depths resolve to the
    lowest point index.
    """
    h, w = intr.shape
    image = np.zeros((h, w, 3))
    zbuf = np.full((h, w), np.inf)
    ref = np.zeros((h, w))
    covered = np.zeros((h, w), dtype=bool)
    if len(cloud):
        p = (cloud.positions - pose.translation) @ pose.rotation
        z = p[:, 2]
        front = np.flatnonzero(z > MIN_Z)
        p, z = p[front], z[front]
        u = intr.fx * p[:, 0] / z + intr.cx - 0.5
        v = intr.fy * p[:, 1] / z + intr.cy - 0.5
        iu = np.floor(u + 0.5)
        iv = np.floor(v + 0.5)
        inside = (iu >= 0) & (iu < w) & (iv >= 0) & (iv < h)
        idx = front[inside]
        z = z[inside]
        pix = iv[inside].astype(np.int64) * w + iu[inside].astype(np.int64)
        # stable sort keeps index order among equal (pixel, z) keys
        order = np.lexsort((z, pix))
        pix_sorted = pix[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = pix_sorted[1:] != pix_sorted[:-1]
        win = order[first]
        flat = pix[win]
        zbuf.ravel()[flat] = z[win]
        ref.ravel()[flat] = z[win]
        covered.ravel()[flat] = True
        image.reshape(-1, 3)[flat] = cloud.colors[idx[win]]
    return image, zbuf, CoverageMask(covered, ref)


def dilate_mask(mask: CoverageMask, radius: int) -> CoverageMask:
    """Grow the covered set by a square (Chebyshev) radius.

    Newly covered pixels inherit the depth of their nearest originally
    covered pixel.
    """
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if radius == 0 or not mask.covered.any():
        return CoverageMask(mask.covered.copy(), mask.ref_depth.copy())
    grown = ndimage.binary_dilation(mask.covered, structure=np.ones((2 * radius + 1,) * 2, dtype=bool))
    _, (iy, ix) = ndimage.distance_transform_edt(~mask.covered, return_indices=True)
    ref = np.where(grown, mask.ref_depth[iy, ix], 0.0)
    return CoverageMask(grown, ref)


def ray_weights(intr: Intrinsics) -> np.ndarray:
    """Length of the unnormalized pixel ray; converts z residuals to 3-D distances."""
    return np.linalg.norm(intr.ray_grid(), axis=-1)


def _overlap(depth: DepthMap, mask: CoverageMask, intr: Intrinsics):
    if depth.shape != mask.shape or depth.shape != intr.shape:
        raise ValueError("depth, mask and intrinsics dimensions disagree")
    sel = mask.covered & depth.valid
    if not sel.any():
        raise AlignmentError("no overlapping valid pixels between view and cloud")
    return ray_weights(intr)[sel], depth.values[sel], mask.ref_depth[sel]


def alignment_loss(d: float, depth: DepthMap, mask: CoverageMask, intr: Intrinsics):
    """Mean L1 distance between scaled view points and the cloud, and its d-derivative."""
    if d <= 0:
        raise ValueError(f"scale must be positive, got {d}")
    w, D, ref = _overlap(depth, mask, intr)
    resid = d * D - ref
    loss = float(np.mean(w * np.abs(resid)))
    grad = float(np.mean(w * D * np.sign(resid)))
    return loss, grad


def align_scale_gd(
    depth: DepthMap,
    mask: CoverageMask,
    intr: Intrinsics,
    alpha: float = 0.05,
    max_iters: int = 500,
    tol: float = 1e-7,
) -> AlignmentResult:
    """Descent on the depth scale starting from 1.

    Steps are relative and follow the sign of the gradient,
    ``d <- d * (1 - eta * sign(dL/dd))``, with ``eta`` starting at
    ``alpha`` and halved whenever the gradient changes sign. The L1
    objective is piecewise linear, so the gradient magnitude says little
    about the distance to the minimizer; the sign brackets it. Stops when
    the step falls below ``tol``. ``alpha >= 1`` can drive ``d`` to zero,
    which is clamped and reported as not converged.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    w, D, ref = _overlap(depth, mask, intr)
    wd = w * D

    def grad_sign(d):
        return float(np.sign(np.sum(wd * np.sign(d * D - ref))))

    d = 1.0
    g = grad_sign(d)
    it = 0
    converged = False
    eta = alpha
    while it < max_iters:
        if g == 0.0:
            converged = True
            break
        step = eta * g * d
        d_new = d - step
        it += 1
        if d_new <= 0:
            d = MIN_Z
            break
        g_new = grad_sign(d_new)
        if g_new * g < 0:
            eta *= 0.5
        d, g = d_new, g_new
        if abs(step) < tol:
            converged = True
            break
    loss = float(np.mean(w * np.abs(d * D - ref)))
    return AlignmentResult(float(d), loss, it, converged)


def weighted_lower_median(values: np.ndarray, weights: np.ndarray) -> float:
    """Smallest value whose cumulative weight reaches half the total."""
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    k = int(np.searchsorted(cum, 0.5 * cum[-1], side="left"))
    return float(values[order][k])


def align_scale_median(depth: DepthMap, mask: CoverageMask, intr: Intrinsics) -> AlignmentResult:
    """Exact minimizer of the alignment loss (weighted median of depth ratios)."""
    w, D, ref = _overlap(depth, mask, intr)
    d = weighted_lower_median(ref / D, w * D)
    loss = float(np.mean(w * np.abs(d * D - ref)))
    return AlignmentResult(d, loss, 0, True)


def fuse_views(
    views: Sequence[tuple[PerspectiveView, DepthMap]],
    intr: Intrinsics | None = None,
    config: FusionConfig | None = None,
):
    """Fuse RGB-D views into one cloud.

    Returns ``(cloud, alignments)`` with one :class:`AlignmentResult` per
    view; view 0 defines the scale and always reports ``d = 1``.
    """
    config = FusionConfig() if config is None else config
    views = list(views)
    if not views:
        raise ValueError("need at least one view to fuse")
    intr = views[0][0].intrinsics if intr is None else intr
    for i, (view, depth) in enumerate(views):
        if view.image.shape[:2] != intr.shape or depth.shape != intr.shape:
            raise ValueError(f"view {i}: dimensions do not match intrinsics {intr.shape}")

    view0, depth0 = views[0]
    parts = [lift_rgbd(view0, depth0, intr, view0.pose, view_id=0)]
    cloud = parts[0]
    results = [AlignmentResult(1.0, 0.0, 0, True)]
    for i in range(1, len(views)):
        view, depth = views[i]
        _, _, projected = project_cloud(cloud, intr, view.pose)
        mask = dilate_mask(projected, config.dilate_radius)
        if config.align:
            try:
                if config.solver == "median":
                    res = align_scale_median(depth, mask, intr)
                else:
                    res = align_scale_gd(depth, mask, intr, config.alpha, config.max_iters, config.tol)
            except AlignmentError as exc:
                raise AlignmentError(f"view {i}: {exc}", view_index=i) from exc
        else:
            res = AlignmentResult(1.0, 0.0, 0, True)
        if not res.converged:
            log.warning("view %d: depth scale did not converge (d=%.6g)", i, res.scale)
        results.append(res)
        part = lift_rgbd(
            view,
            depth.scaled(res.scale),
            intr,
            view.pose,
            exclude=mask if config.use_mask else None,
            view_id=i,
        )
        parts.append(part)
        cloud = PointCloud.concat([cloud, part])
        log.debug("view %d: d=%.6f, +%d points (total %d)", i, res.scale, len(part), len(cloud))
    return cloud, results
